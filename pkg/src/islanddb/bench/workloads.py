"""Seeded workload generators: synthetic mix, TPC-C-lite, TPC-H-Q6-lite.

Every generator is a pure function of its arguments.  Transactional streams
are partitioned by thread (each thread owns a disjoint set of rows or
districts, and shared counters are only ever incremented) so the final
database state does not depend on how threads interleave.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ..analytics.query import Aggregate, JoinSpec, Predicate, Query, parse_query
from ..storage import Delete, Insert, LogicalType, Modify, TableSchema
from ..txn import Increment, Read, TxnContext, TxnOp


@dataclass(frozen=True)
class WorkloadSpec:
    txn_threads: int = 4
    analytic_threads: int = 4
    txn_count: int = 1000  # per transactional thread
    query_count: int = 32  # per analytical thread
    write_ratio: float = 0.5
    tables: int = 4
    columns: int = 4
    rows: int = 10_000
    value_range: int = 100
    ops_per_txn: int = 4
    insert_ratio: float = 0.0  # share of writes that insert a new row
    delete_ratio: float = 0.0  # share of writes that delete an owned row
    join_ratio: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("txn_threads", "analytic_threads", "txn_count", "query_count", "rows"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.txn_threads < 1:
            raise ValueError("txn_threads must be at least 1")
        for name in ("write_ratio", "insert_ratio", "delete_ratio", "join_ratio"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.insert_ratio + self.delete_ratio > 1.0:
            raise ValueError("insert_ratio + delete_ratio cannot exceed 1")
        if self.tables < 1 or self.columns < 1 or self.value_range < 1 or self.ops_per_txn < 1:
            raise ValueError("tables, columns, value_range and ops_per_txn must be positive")

    def capped(self, cap: Optional[int]) -> "WorkloadSpec":
        """Shrink thread counts to fit a total thread budget."""
        if cap is None:
            return self
        txn = max(1, min(self.txn_threads, cap))
        ana = max(0, min(self.analytic_threads, cap - txn))
        return replace(self, txn_threads=txn, analytic_threads=ana)


@dataclass
class Workload:
    schemas: list[TableSchema]
    initial: dict[int, list[tuple[int, ...]]]
    txn_streams: list[list]  # per thread: list of TxnOp lists or TxnProgram
    query_streams: list[list[Query]] = field(default_factory=list)
    verification: list[Query] = field(default_factory=list)

    def op_count(self) -> int:
        return sum(len(t) for s in self.txn_streams for t in s if isinstance(t, list))

    def write_count(self) -> int:
        return sum(
            1
            for s in self.txn_streams
            for t in s
            if isinstance(t, list)
            for op in t
            if not isinstance(op, Read)
        )


@dataclass(frozen=True)
class TxnProgram:
    """A transaction expressed as a body over a transaction context."""

    kind: str
    tables: tuple[int, ...]
    body: Callable[[TxnContext], object]


# ---------------------------------------------------------------------------
# synthetic


def synthetic_schemas(tables: int, columns: int) -> list[TableSchema]:
    return [
        TableSchema.build(t, f"t{t}", [f"c{c}" for c in range(columns)]) for t in range(tables)
    ]


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def _random_query(rng: np.random.Generator, spec: WorkloadSpec, names: list[str]) -> Query:
    t = int(rng.integers(spec.tables))
    ops = ("<", "<=", ">", ">=", "=", "!=")
    preds = []
    for _ in range(int(rng.integers(1, 3))):
        preds.append(
            Predicate(
                f"c{int(rng.integers(spec.columns))}",
                ops[int(rng.integers(len(ops)))],
                int(rng.integers(spec.value_range)),
            )
        )
    c_sum = f"c{int(rng.integers(spec.columns))}"
    c_ext = f"c{int(rng.integers(spec.columns))}"
    ext = "min" if rng.random() < 0.5 else "max"
    if spec.tables > 1 and rng.random() < spec.join_ratio:
        u = int(rng.integers(spec.tables - 1))
        u = u + 1 if u >= t else u
        jl = f"c{int(rng.integers(spec.columns))}"
        jr = f"c{int(rng.integers(spec.columns))}"
        bp = Predicate(
            f"c{int(rng.integers(spec.columns))}", "<", int(rng.integers(1, spec.value_range + 1)),
            names[u],
        )
        aggs = (
            Aggregate("count"),
            Aggregate("sum", (c_sum,)),
            Aggregate(ext, (f"c{int(rng.integers(spec.columns))}",), names[u]),
        )
        return Query(names[t], aggs, tuple(preds) + (bp,), JoinSpec(names[u], jl, jr))
    aggs = (Aggregate("count"), Aggregate("sum", (c_sum,)), Aggregate(ext, (c_ext,)))
    return Query(names[t], aggs, tuple(preds))


def gen_synthetic(spec: WorkloadSpec) -> Workload:
    schemas = synthetic_schemas(spec.tables, spec.columns)
    names = [s.name for s in schemas]
    rng = _rng(spec.seed, 0)
    initial = {
        s.table_id: [
            tuple(int(v) for v in row)
            for row in rng.integers(0, spec.value_range, size=(spec.rows, spec.columns)).tolist()
        ]
        for s in schemas
    }
    streams: list[list] = []
    T = spec.txn_threads
    for th in range(T):
        r = _rng(spec.seed, 1, th)
        owned = np.arange(th, spec.rows, T)
        alive = [[True] * owned.size for _ in range(spec.tables)]
        n_ops = spec.txn_count * spec.ops_per_txn
        # plain lists: indexing numpy scalars one at a time is slow
        is_write = (r.random(n_ops) < spec.write_ratio).tolist()
        kind_u = r.random(n_ops).tolist()
        tables = r.integers(0, spec.tables, n_ops).tolist()
        slots = r.integers(0, max(owned.size, 1), n_ops).tolist()
        cols = r.integers(0, spec.columns, n_ops).tolist()
        vals = r.integers(0, spec.value_range, n_ops).tolist()
        ins_vals = r.integers(0, spec.value_range, (n_ops, spec.columns))
        owned_l = owned.tolist()
        stream = []
        k = 0
        for _ in range(spec.txn_count):
            ops: list[TxnOp] = []
            deleted_here: set = set()
            for _ in range(spec.ops_per_txn):
                t = tables[k]
                w = is_write[k]
                u = kind_u[k]
                if w and u < spec.insert_ratio:
                    ops.append(Insert(t, tuple(int(v) for v in ins_vals[k])))
                    k += 1
                    continue
                if owned.size == 0:
                    if w:
                        ops.append(Insert(t, tuple(int(v) for v in ins_vals[k])))
                    k += 1
                    continue
                slot = slots[k]
                # walk to a row this thread still owns and has not deleted
                probe = 0
                while (not alive[t][slot] or (t, slot) in deleted_here) and probe < owned.size:
                    slot = (slot + 1) % owned.size
                    probe += 1
                if probe >= owned.size:
                    if w:
                        ops.append(Insert(t, tuple(int(v) for v in ins_vals[k])))
                    k += 1
                    continue
                row = owned_l[slot]
                if not w:
                    ops.append(Read(t, row))
                elif u < spec.insert_ratio + spec.delete_ratio:
                    ops.append(Delete(t, row))
                    alive[t][slot] = False
                    deleted_here.add((t, slot))
                else:
                    ops.append(Modify(t, row, cols[k], vals[k]))
                k += 1
            stream.append(ops)
        streams.append(stream)
    qstreams = []
    for a in range(spec.analytic_threads):
        r = _rng(spec.seed, 2, a)
        qstreams.append([_random_query(r, spec, names) for _ in range(spec.query_count)])
    vr = _rng(spec.seed, 3)
    verification = [_random_query(vr, spec, names) for _ in range(8)]
    for s in schemas:
        verification.append(
            Query(
                s.name,
                tuple(Aggregate("count") for _ in range(1))
                + tuple(Aggregate("sum", (c.name,)) for c in s.columns),
            )
        )
    return Workload(schemas, initial, streams, qstreams, verification)


# ---------------------------------------------------------------------------
# TPC-C-lite

DISTRICTS_PER_WAREHOUSE = 10
CUSTOMERS_PER_DISTRICT = 30
ITEMS = 1000
INITIAL_ORDERS_PER_DISTRICT = 0
STOCK_START = 10_000_000  # large enough that pure decrements never run out

WAREHOUSE, DISTRICT, CUSTOMER, HISTORY, NEW_ORDER, ORDERS, ORDER_LINE, ITEM, STOCK = range(9)


def tpcc_schemas() -> list[TableSchema]:
    dec = LogicalType.DECIMAL
    return [
        TableSchema.build(WAREHOUSE, "warehouse", ["w_id", ("w_ytd", dec, 2), ("w_tax", dec, 4)]),
        TableSchema.build(
            DISTRICT, "district",
            ["d_id", "d_w_id", ("d_ytd", dec, 2), "d_next_o_id", ("d_tax", dec, 4)],
        ),
        TableSchema.build(
            CUSTOMER, "customer",
            ["c_id", "c_d_id", "c_w_id", ("c_balance", dec, 2), ("c_ytd_payment", dec, 2),
             "c_payment_cnt"],
        ),
        TableSchema.build(
            HISTORY, "history", ["h_c_id", "h_d_id", "h_w_id", ("h_amount", dec, 2)]
        ),
        TableSchema.build(NEW_ORDER, "new_order", ["no_o_id", "no_d_id", "no_w_id"]),
        TableSchema.build(
            ORDERS, "orders", ["o_id", "o_d_id", "o_w_id", "o_c_id", "o_ol_cnt"]
        ),
        TableSchema.build(
            ORDER_LINE, "order_line",
            ["ol_o_id", "ol_d_id", "ol_w_id", "ol_number", "ol_i_id", "ol_quantity",
             ("ol_amount", dec, 2)],
        ),
        TableSchema.build(ITEM, "item", ["i_id", ("i_price", dec, 2)]),
        TableSchema.build(
            STOCK, "stock", ["s_i_id", "s_w_id", "s_quantity", "s_ytd", "s_order_cnt"]
        ),
    ]


def _district_row(w: int, d: int) -> int:
    return w * DISTRICTS_PER_WAREHOUSE + d


def _customer_row(w: int, d: int, c: int) -> int:
    return (w * DISTRICTS_PER_WAREHOUSE + d) * CUSTOMERS_PER_DISTRICT + c


def _stock_row(w: int, i: int) -> int:
    return w * ITEMS + i


def payment_program(w: int, d: int, c: int, amount: int) -> TxnProgram:
    def body(ctx: TxnContext) -> None:
        ctx.increment(WAREHOUSE, w, 1, amount)
        ctx.increment(DISTRICT, _district_row(w, d), 2, amount)
        crow = _customer_row(w, d, c)
        ctx.increment(CUSTOMER, crow, 3, -amount)
        ctx.increment(CUSTOMER, crow, 4, amount)
        ctx.increment(CUSTOMER, crow, 5, 1)
        ctx.insert(HISTORY, (c, d, w, amount))

    return TxnProgram("payment", (WAREHOUSE, DISTRICT, CUSTOMER, HISTORY), body)


def new_order_program(w: int, d: int, c: int, lines: Sequence[tuple[int, int]]) -> TxnProgram:
    def body(ctx: TxnContext) -> None:
        ctx.read(WAREHOUSE, w)
        drow = _district_row(w, d)
        o_id = ctx.read(DISTRICT, drow)[3]
        ctx.increment(DISTRICT, drow, 3, 1)
        ctx.insert(ORDERS, (o_id, d, w, c, len(lines)))
        ctx.insert(NEW_ORDER, (o_id, d, w))
        for number, (item, qty) in enumerate(lines):
            price = ctx.read(ITEM, item)[1]
            srow = _stock_row(w, item)
            ctx.increment(STOCK, srow, 2, -qty)
            ctx.increment(STOCK, srow, 3, qty)
            ctx.increment(STOCK, srow, 4, 1)
            ctx.insert(ORDER_LINE, (o_id, d, w, number, item, qty, qty * price))

    return TxnProgram(
        "new_order", (WAREHOUSE, DISTRICT, NEW_ORDER, ORDERS, ORDER_LINE, ITEM, STOCK), body
    )


def tpcc_initial(warehouses: int, seed: int) -> dict[int, list[tuple[int, ...]]]:
    rng = _rng(seed, 10)
    W, D, C = warehouses, DISTRICTS_PER_WAREHOUSE, CUSTOMERS_PER_DISTRICT
    init: dict[int, list[tuple[int, ...]]] = {t: [] for t in range(9)}
    for w in range(W):
        init[WAREHOUSE].append((w, 30_000_000, int(rng.integers(0, 2000))))
        for d in range(D):
            init[DISTRICT].append((d, w, 3_000_000, 1, int(rng.integers(0, 2000))))
            for c in range(C):
                init[CUSTOMER].append((c, d, w, -1000, 1000, 1))
    for i in range(ITEMS):
        init[ITEM].append((i, int(rng.integers(100, 10_000))))
    for w in range(W):
        for i in range(ITEMS):
            init[STOCK].append((i, w, STOCK_START, 0, 0))
    return init


def gen_tpcc_lite(
    warehouses: int, txn_threads: int = 4, txn_count: int = 1000, seed: int = 0
) -> Workload:
    """Equal Payment / New-Order mix, alternating, over thread-owned districts."""
    if not 1 <= warehouses <= 4:
        raise ValueError("warehouses must be in 1..4")
    W, D, C = warehouses, DISTRICTS_PER_WAREHOUSE, CUSTOMERS_PER_DISTRICT
    districts = [(w, d) for w in range(W) for d in range(D)]
    streams = []
    for th in range(txn_threads):
        mine = [wd for i, wd in enumerate(districts) if i % txn_threads == th] or districts[:1]
        r = _rng(seed, 11, th)
        stream = []
        for k in range(txn_count):
            w, d = mine[int(r.integers(len(mine)))]
            c = int(r.integers(C))
            if k % 2 == 0:
                stream.append(payment_program(w, d, c, int(r.integers(100, 500_000))))
            else:
                n = int(r.integers(5, 16))
                items = r.choice(ITEMS, size=n, replace=False)
                lines = [(int(i), int(r.integers(1, 11))) for i in items]
                stream.append(new_order_program(w, d, c, lines))
        streams.append(stream)
    verification = [
        parse_query("select count(*), sum(ol_amount), sum(ol_quantity) from order_line"),
        parse_query("select count(*), max(o_id) from orders"),
        parse_query("select sum(s_quantity), sum(s_ytd), sum(s_order_cnt) from stock"),
        parse_query("select sum(c_balance), sum(c_payment_cnt) from customer"),
        parse_query("select sum(w_ytd) from warehouse"),
        parse_query("select count(*), sum(h_amount) from history"),
        parse_query(
            "select count(*), sum(ol_amount) from order_line join item on order_line.ol_i_id = item.i_id where item.i_price < 5000"
        ),
    ]
    return Workload(tpcc_schemas(), tpcc_initial(W, seed), streams, [], verification)


def tpcc_queries() -> list[Query]:
    return [
        parse_query("select count(*), sum(ol_amount) from order_line where ol_quantity >= 5"),
        parse_query("select sum(s_quantity), min(s_quantity) from stock where s_order_cnt > 0"),
        parse_query(
            "select count(*), sum(ol_quantity) from order_line join item on order_line.ol_i_id = item.i_id where item.i_price >= 5000"
        ),
        parse_query("select count(*), sum(c_balance) from customer where c_payment_cnt > 1"),
    ]


# ---------------------------------------------------------------------------
# TPC-H Q6-lite

SHIPDATE_MIN = 8035  # 1992-01-01 as days since 1970-01-01
SHIPDATE_MAX = 10591  # 1998-12-31
Q6_DATE = 8766  # 1994-01-01
Q6_QUERY = (
    "select sum(l_extendedprice * l_discount) from lineitem "
    f"where l_shipdate >= {Q6_DATE} and l_shipdate < {Q6_DATE + 365} "
    "and l_discount between 5 and 7 and l_quantity < 24"
)


def lineitem_schema(table_id: int = 0) -> TableSchema:
    dec = LogicalType.DECIMAL
    return TableSchema.build(
        table_id,
        "lineitem",
        [
            "l_orderkey",
            ("l_quantity", dec, 0),
            ("l_extendedprice", dec, 2),
            ("l_discount", dec, 2),
            ("l_shipdate", LogicalType.DATE),
        ],
    )


def gen_tpch6_lite(rows: int, seed: int = 0) -> tuple[TableSchema, list[tuple[int, ...]], Query]:
    """Lineitem-shaped rows (prices in cents, discounts in hundredths) and the Q6 query."""
    if rows < 0 or rows > 1_000_000:
        raise ValueError("rows must be in 0..10^6")
    rng = _rng(seed, 20)
    qty = rng.integers(1, 51, rows)
    unit = rng.integers(90_000, 1_050_000, rows) // 100  # cents per unit
    price = qty * unit
    disc = rng.integers(0, 11, rows)
    ship = rng.integers(SHIPDATE_MIN, SHIPDATE_MAX + 1, rows)
    orderkey = np.arange(rows) // 4 + 1
    data = [
        (int(a), int(b), int(c), int(d), int(e))
        for a, b, c, d, e in zip(orderkey.tolist(), qty.tolist(), price.tolist(), disc.tolist(), ship.tolist())
    ]
    return lineitem_schema(), data, parse_query(Q6_QUERY)


def q6_oracle(rows: Sequence[Sequence[int]], date: int = Q6_DATE) -> int:
    """Hand-written Q6: filter then sum price * discount, row by row."""
    total = 0
    for _, q, price, disc, ship in rows:
        if date <= ship < date + 365 and 5 <= disc <= 7 and q < 24:
            total += price * disc
    return total


# ---------------------------------------------------------------------------
# single-column hotspot

HOTSPOT_QUERY = "select sum(v) from hot"


def gen_hotspot(
    rows: int, analytic_threads: int, query_count: int, seed: int = 0, value_range: int = 1000
) -> Workload:
    """Every query scans the one column of one table: all load lands on its placement."""
    if rows < 1:
        raise ValueError("rows must be positive")
    schema = TableSchema.build(0, "hot", ["v"])
    vals = _rng(seed, 30).integers(0, value_range, rows).tolist()
    q = parse_query(HOTSPOT_QUERY)
    return Workload(
        [schema],
        {0: [(v,) for v in vals]},
        [[]],
        [[q] * query_count for _ in range(analytic_threads)],
        [q],
    )

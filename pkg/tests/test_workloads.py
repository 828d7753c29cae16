import io

import pytest

from islanddb.bench.workloads import (
    CUSTOMER,
    DISTRICT,
    HISTORY,
    NEW_ORDER,
    ORDER_LINE,
    ORDERS,
    Q6_DATE,
    Q6_QUERY,
    STOCK,
    WAREHOUSE,
    TxnProgram,
    WorkloadSpec,
    gen_hotspot,
    gen_synthetic,
    gen_tpcc_lite,
    gen_tpch6_lite,
    lineitem_schema,
    new_order_program,
    payment_program,
    q6_oracle,
    tpcc_initial,
    tpcc_schemas,
)
from islanddb.engine import EngineConfig, build_engine
from islanddb.metrics import CSV_FIELDS, BenchRow, read_csv, to_csv, write_csv
from islanddb.txn import Read


def test_write_ratio_zero_generates_no_writes():
    wl = gen_synthetic(WorkloadSpec(write_ratio=0.0, txn_count=200, txn_threads=2, rows=100))
    assert wl.write_count() == 0
    e = build_engine("polynesia", wl.schemas, EngineConfig(txn_threads=2, analytics=False, record_history=True))
    for t, rows in wl.initial.items():
        e.load(t, rows)
    with e:
        for th, stream in enumerate(wl.txn_streams):
            for ops in stream:
                e.submit_txn(ops, th)
        assert e.history() == [] and e.txn.committed == 400


def test_same_seed_same_streams():
    spec = WorkloadSpec(txn_count=100, query_count=10, insert_ratio=0.2, delete_ratio=0.2, seed=9)
    a, b = gen_synthetic(spec), gen_synthetic(spec)
    assert a.initial == b.initial
    assert a.txn_streams == b.txn_streams
    assert a.query_streams == b.query_streams
    c = gen_synthetic(WorkloadSpec(txn_count=100, query_count=10, seed=10))
    assert c.txn_streams != a.txn_streams


def test_write_ratio_half_within_binomial_bound():
    wl = gen_synthetic(WorkloadSpec(txn_threads=1, txn_count=2500, ops_per_txn=4, write_ratio=0.5, seed=3))
    assert wl.op_count() == 10_000
    assert 0.48 <= wl.write_count() / wl.op_count() <= 0.52


def test_streams_partition_rows_by_thread():
    wl = gen_synthetic(WorkloadSpec(txn_threads=4, txn_count=200, rows=400))
    for th, stream in enumerate(wl.txn_streams):
        for ops in stream:
            for op in ops:
                assert op.row_id % 4 == th


def test_spec_validation_and_capping():
    with pytest.raises(ValueError):
        WorkloadSpec(write_ratio=1.5)
    with pytest.raises(ValueError):
        WorkloadSpec(txn_count=-1)
    with pytest.raises(ValueError):
        WorkloadSpec(insert_ratio=0.7, delete_ratio=0.7)
    s = WorkloadSpec(txn_threads=4, analytic_threads=4).capped(5)
    assert (s.txn_threads, s.analytic_threads) == (4, 1)
    assert WorkloadSpec().capped(None) == WorkloadSpec()


def test_queries_reference_real_columns():
    wl = gen_synthetic(WorkloadSpec(query_count=50, join_ratio=0.5))
    e = build_engine("si-ss", wl.schemas)
    joins = 0
    for q in wl.query_streams[0] + wl.verification:
        plan = e.plan(q)
        joins += plan.join is not None
    assert joins > 0


# ---------------------------------------------------------------------------
# TPC-C-lite


@pytest.mark.parametrize("threads,per", [(1, 1000), (4, 250)])
def test_tpcc_even_mix(threads, per):
    wl = gen_tpcc_lite(2, threads, per, seed=1)
    kinds = [p.kind for s in wl.txn_streams for p in s]
    assert len(kinds) == 1000
    assert kinds.count("payment") == kinds.count("new_order") == 500


def test_tpcc_rejects_bad_warehouses():
    for w in (0, 5):
        with pytest.raises(ValueError):
            gen_tpcc_lite(w)


def tpcc_engine():
    e = build_engine("si-ss", tpcc_schemas(), EngineConfig(txn_threads=1, analytics=False))
    for tid, rows in tpcc_initial(1, 0).items():
        e.load(tid, rows)
    return e.start()


def counts(e):
    return {t: len(rows) for t, rows in e.table_contents().items()}


def test_new_order_row_deltas():
    e = tpcc_engine()
    try:
        before, stock0 = counts(e), e.table_contents()[STOCK]
        lines = [(3, 4), (17, 2), (900, 9)]
        prog = new_order_program(0, 2, 5, lines)
        e.run_txn(0, prog.tables, prog.body)
        after, stock1 = counts(e), e.table_contents()[STOCK]
        assert after[ORDERS] == before[ORDERS] + 1
        assert after[NEW_ORDER] == before[NEW_ORDER] + 1
        assert after[ORDER_LINE] == before[ORDER_LINE] + 3
        for item, qty in lines:
            assert stock1[item][2] == stock0[item][2] - qty
            assert stock1[item][4] == stock0[item][4] + 1
        drow = 2
        assert e.table_contents()[DISTRICT][drow][3] == 2  # next order id advanced
    finally:
        e.stop()


def test_payment_value_deltas():
    e = tpcc_engine()
    try:
        t0 = e.table_contents()
        prog = payment_program(0, 1, 7, 12_345)
        e.run_txn(0, prog.tables, prog.body)
        t1 = e.table_contents()
        crow = 1 * 30 + 7
        assert t1[WAREHOUSE][0][1] - t0[WAREHOUSE][0][1] == 12_345
        assert t1[DISTRICT][1][2] - t0[DISTRICT][1][2] == 12_345
        assert t1[CUSTOMER][crow][3] - t0[CUSTOMER][crow][3] == -12_345
        assert t1[CUSTOMER][crow][5] - t0[CUSTOMER][crow][5] == 1
        assert len(t1[HISTORY]) == len(t0[HISTORY]) + 1
    finally:
        e.stop()


def test_tpcc_programs_are_programs():
    wl = gen_tpcc_lite(1, 2, 10)
    assert all(isinstance(p, TxnProgram) for s in wl.txn_streams for p in s)


# ---------------------------------------------------------------------------
# TPC-H Q6-lite

HAND_ROWS = [
    (1, 10, 1000, 5, 8800),  # 5000
    (1, 23, 2000, 7, 9130),  # 14000: last day in range, top of discount band
    (1, 24, 3000, 6, 8800),  # quantity cap is strict
    (1, 5, 4000, 4, 8800),  # below discount band
    (2, 5, 5000, 8, 8800),  # above discount band
    (2, 5, 6000, 6, 8765),  # one day early
    (2, 5, 7000, 6, 9131),  # one day late
    (2, 1, 8000, 6, 8766),  # 48000: first day in range
    (3, 20, 9000, 5, 9000),  # 45000
    (3, 30, 100, 7, 9000),  # too many units
]
HAND_REVENUE = 5000 + 14000 + 48000 + 45000


def _q6_engine(rows):
    e = build_engine("polynesia", [lineitem_schema()], EngineConfig(segment_size=3))
    e.load(0, rows)
    return e.start()


def test_q6_hand_computation():
    assert Q6_DATE == 8766
    assert q6_oracle(HAND_ROWS) == HAND_REVENUE == 112_000
    e = _q6_engine(HAND_ROWS)
    try:
        assert e.submit_query(Q6_QUERY).values == (HAND_REVENUE,)
    finally:
        e.stop()


def test_q6_no_matches_is_zero():
    rows = [r for r in HAND_ROWS if q6_oracle([r]) == 0]
    e = _q6_engine(rows)
    try:
        assert e.submit_query(Q6_QUERY).values == (0,)
    finally:
        e.stop()


def test_tpch6_generator_bounds():
    schema, data, q = gen_tpch6_lite(1000, seed=1)
    assert len(data) == 1000 and schema.name == "lineitem"
    assert {len(r) for r in data} == {5}
    assert gen_tpch6_lite(1000, seed=1)[1] == data
    assert 0 < q6_oracle(data)
    with pytest.raises(ValueError):
        gen_tpch6_lite(1_000_001)


def test_hotspot_workload_shape():
    wl = gen_hotspot(5000, 3, 4, seed=1)
    assert len(wl.schemas) == 1 and len(wl.initial[0]) == 5000
    assert [len(s) for s in wl.query_streams] == [4, 4, 4]
    assert wl.txn_streams == [[]]


# ---------------------------------------------------------------------------
# metrics rows


def _row(**kw):
    base = dict(mode="polynesia", seed=0, txn_threads=4, analytic_threads=0, txn_count=10,
                query_count=0, write_ratio=0.5, txn_tput=123.4567, ana_tput=None,
                freshness_mean_us=None, freshness_p99_us=None, ship_latency_us=None,
                apply_latency_us=None, dict_lookups=5, local_accesses=0, remote_accesses=0,
                snapshot_bytes=0, mvcc_steps=0, checksum="ab")
    base.update(kw)
    return BenchRow(**base)


def test_csv_schema_order_and_empty_fields():
    text = to_csv([_row(), _row(mode="si-ss")])
    header = text.splitlines()[0].split(",")
    assert tuple(header[: len(CSV_FIELDS)]) == CSV_FIELDS
    assert header[len(CSV_FIELDS):] == ["checksum"]
    rows = read_csv(text)
    assert rows[0]["ana_tput"] == "" and rows[0]["txn_tput"] == "123.457"
    assert [r["mode"] for r in rows] == ["polynesia", "si-ss"]


def test_csv_without_header():
    buf = io.StringIO()
    write_csv([_row()], buf, header=False)
    assert buf.getvalue().startswith("polynesia,0,4")


def test_synthetic_reads_are_reads():
    wl = gen_synthetic(WorkloadSpec(write_ratio=0.0, txn_count=5))
    assert all(isinstance(op, Read) for s in wl.txn_streams for t in s for op in t)

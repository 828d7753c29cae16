"""Single-threaded, pure-Python evaluation used as the correctness oracle.

Tables are plain ``{row_id: tuple}`` maps, so the oracle shares no code with
the columnar executor beyond the bound plan.
"""

from __future__ import annotations

import hashlib
import operator
from typing import Iterable, Mapping, Optional, Sequence

from .analytics.plan import BUILD, PROBE, BoundAggregate, BoundPredicate, QueryPlan
from .txn import UpdateKind, UpdateLogEntry

_OPS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "=": operator.eq,
    "!=": operator.ne,
}

Table = Mapping[int, Sequence[int]]


def _filter(rows: Iterable[Sequence[int]], preds: Sequence[BoundPredicate]) -> list:
    tests = [(p.column_id, _OPS[p.op], p.value) for p in preds]
    return [r for r in rows if all(f(r[c], v) for c, f, v in tests)]


def _term(row: Sequence[int], a: BoundAggregate) -> int:
    v = 1
    for c in a.column_ids:
        v *= row[c]
    return v


def _fold(func: str, values: list[int]):
    if func == "count":
        return len(values)
    if func == "sum":
        return sum(values)
    if not values:
        return None
    if func == "min":
        return min(values)
    return max(values)


def evaluate(plan: QueryPlan, tables: Mapping[int, Table]) -> tuple:
    probe = plan.probe
    prows = _filter(tables[probe.child.table_id].values(), probe.predicates)
    join = plan.join
    if join is None:
        return tuple(_fold(a.func, [_term(r, a) for r in prows]) for a in plan.root.aggregates)
    brows = _filter(tables[join.build.child.table_id].values(), join.build.predicates)
    by_key: dict[int, list] = {}
    for r in brows:
        by_key.setdefault(r[join.build_key], []).append(r)
    pairs = [(p, b) for p in prows for b in by_key.get(p[join.probe_key], ())]
    out = []
    for a in plan.root.aggregates:
        vals = [_term(p if a.side == PROBE else b, a) for p, b in pairs]
        out.append(_fold(a.func, vals))
    return tuple(out)


class ReplayReplica:
    """Row maps rebuilt by replaying a commit-ordered global update log."""

    def __init__(self, initial: Mapping[int, Sequence[Sequence[int]]]) -> None:
        self.tables: dict[int, dict[int, list[int]]] = {
            t: {i: list(r) for i, r in enumerate(rows)} for t, rows in initial.items()
        }
        self.applied = 0

    def apply(self, entry: UpdateLogEntry, width: int) -> None:
        t, r, c = entry.key
        table = self.tables[t]
        if entry.kind == UpdateKind.INSERT:
            row = table.get(r)
            if row is None:
                row = table[r] = [0] * width
            row[c] = entry.payload
        elif entry.kind == UpdateKind.MODIFY:
            table[r][c] = entry.payload
        else:
            table.pop(r, None)

    def replay(self, entries: Sequence[UpdateLogEntry], upto: int, widths: Mapping[int, int]) -> None:
        """Apply entries with commit id <= ``upto`` that have not been applied yet."""
        i = self.applied
        n = len(entries)
        while i < n and entries[i].commit_id <= upto:
            e = entries[i]
            self.apply(e, widths[e.key[0]])
            i += 1
        self.applied = i

    def evaluate(self, plan: QueryPlan) -> tuple:
        return evaluate(plan, self.tables)


def checksum_tables(tables: Mapping[int, Table]) -> str:
    """Order-independent digest of table contents (multiset of tuples per table)."""
    h = hashlib.blake2b(digest_size=16)
    for t in sorted(tables):
        h.update(f"T{t}:".encode())
        for row in sorted(tuple(r) for r in tables[t].values()):
            h.update(repr(row).encode())
    return h.hexdigest()

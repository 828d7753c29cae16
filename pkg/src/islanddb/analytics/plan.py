"""Physical operator trees.

A plan is one of two shapes::

    aggregate <- filter <- scan(T)
    aggregate <- hash-join(build: filter <- scan(U), probe: filter <- scan(T))

Names are bound to column ids here so that execution and the reference
evaluator work on ids only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .query import Catalog, PlanningError, Query, QueryLike, as_query, render_query

PROBE, BUILD = "probe", "build"


@dataclass(frozen=True)
class BoundPredicate:
    column_id: int
    op: str
    value: int


@dataclass(frozen=True)
class BoundAggregate:
    func: str
    side: str  # PROBE or BUILD
    column_ids: tuple[int, ...]


@dataclass(frozen=True)
class ScanNode:
    table_id: int
    column_ids: tuple[int, ...]


@dataclass(frozen=True)
class FilterNode:
    child: ScanNode
    predicates: tuple[BoundPredicate, ...]


@dataclass(frozen=True)
class HashJoinNode:
    build: FilterNode
    probe: FilterNode
    build_key: int
    probe_key: int


@dataclass(frozen=True)
class AggregateNode:
    child: Union[FilterNode, HashJoinNode]
    aggregates: tuple[BoundAggregate, ...]


@dataclass(frozen=True)
class QueryPlan:
    root: AggregateNode
    query: Query

    @property
    def join(self) -> Optional[HashJoinNode]:
        c = self.root.child
        return c if isinstance(c, HashJoinNode) else None

    @property
    def probe(self) -> FilterNode:
        c = self.root.child
        return c.probe if isinstance(c, HashJoinNode) else c

    @property
    def columns(self) -> list[tuple[int, int]]:
        """Every (table_id, column_id) leaf the plan reads; these must be pinned."""
        out = {(self.probe.child.table_id, c) for c in self.probe.child.column_ids}
        j = self.join
        if j is not None:
            out |= {(j.build.child.table_id, c) for c in j.build.child.column_ids}
        return sorted(out)

    @property
    def tables(self) -> list[int]:
        return sorted({t for t, _ in self.columns})

    def describe(self) -> str:
        return render_query(self.query)


def plan_query(query: QueryLike, catalog: Catalog) -> QueryPlan:
    q = as_query(query)
    probe_schema = catalog.table(q.table)
    build_schema = catalog.table(q.join.table) if q.join else None
    if build_schema is not None and build_schema.table_id == probe_schema.table_id:
        raise PlanningError("self-joins are not supported")

    def side_of(table: Optional[str]) -> str:
        if table in (None, q.table):
            return PROBE
        if build_schema is not None and table == build_schema.name:
            return BUILD
        raise PlanningError(f"unknown table {table!r} in query")

    def cid(side: str, name: str) -> int:
        schema = probe_schema if side == PROBE else build_schema
        try:
            return schema.column_id(name)
        except LookupError:
            raise PlanningError(f"table {schema.name!r} has no column {name!r}") from None

    preds = {PROBE: [], BUILD: []}
    for p in q.predicates:
        s = side_of(p.table)
        preds[s].append(BoundPredicate(cid(s, p.column), p.op, p.value))
    aggs = []
    for a in q.aggregates:
        s = side_of(a.table)
        ids = tuple(cid(s, c) for c in a.columns)
        if s == BUILD and len(ids) > 1:
            raise PlanningError("products are only supported on the probe side")
        if s == BUILD and build_schema is None:
            raise PlanningError("build-side aggregate without a join")
        aggs.append(BoundAggregate(a.func, s, ids))

    def leaf(schema, side: str, extra: tuple[int, ...]) -> FilterNode:
        cols = {p.column_id for p in preds[side]} | set(extra)
        for a in aggs:
            if a.side == side:
                cols |= set(a.column_ids)
        if not cols:
            cols = {0}  # count(*) still needs row validity from some column
        return FilterNode(ScanNode(schema.table_id, tuple(sorted(cols))), tuple(preds[side]))

    if q.join is None:
        child: Union[FilterNode, HashJoinNode] = leaf(probe_schema, PROBE, ())
    else:
        pk = cid(PROBE, q.join.left_column)
        bk = cid(BUILD, q.join.right_column)
        child = HashJoinNode(leaf(build_schema, BUILD, (bk,)), leaf(probe_schema, PROBE, (pk,)), bk, pk)
    return QueryPlan(AggregateNode(child, tuple(aggs)), q)

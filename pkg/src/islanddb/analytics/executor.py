"""Segment-granularity execution of query plans on the task scheduler.

Every plan node that reads a table is fused into one task per segment
(scan + filter + partial aggregate, or scan + filter + join build/probe).
Joins run in two generations: build tasks first, then a short key-statistics
step on the submitting thread, then probe tasks.  The submitting thread also
combines partial results at the root.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from ..storage import ColumnVersion
from .plan import BUILD, PROBE, BoundAggregate, FilterNode, HashJoinNode, QueryPlan
from .scheduler import Task, TaskScheduler, WorkerContext
from .topology import TablePlacement

_NP_OPS = {
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
    "=": np.equal,
    "!=": np.not_equal,
}

Versions = Mapping[tuple[int, int], ColumnVersion]


def segments(length: int, segment_size: int) -> list[tuple[int, int]]:
    return [(s, min(s + segment_size, length)) for s in range(0, length, segment_size)]


def _table_length(node: FilterNode, versions: Versions) -> int:
    t = node.child.table_id
    lengths = {versions[(t, c)].length for c in node.child.column_ids}
    if len(lengths) != 1:
        raise ValueError(f"columns of table {t} disagree on length: {sorted(lengths)}")
    return lengths.pop()


def _read_segment(
    ctx: Optional[WorkerContext],
    node: FilterNode,
    versions: Versions,
    placement: Optional[TablePlacement],
    seg: int,
    start: int,
    stop: int,
) -> tuple[dict[int, np.ndarray], np.ndarray]:
    """Decode the node's columns over [start, stop) and apply its predicates."""
    t = node.child.table_id
    cols: dict[int, np.ndarray] = {}
    mask = None
    if ctx is not None and placement is not None:
        col_local = ctx.vault == placement.segment_vault(seg)
        dict_local = ctx.vault in placement.dict_vaults
    else:
        col_local = dict_local = True
    for c in node.child.column_ids:
        values, valid = versions[(t, c)].values(start, stop)
        if ctx is not None:
            ctx.charge(stop - start, col_local)
            ctx.charge(int(valid.sum()), dict_local, dictionary=True)
        cols[c] = values
        mask = valid if mask is None else mask & valid
    for p in node.predicates:
        mask &= _NP_OPS[p.op](cols[p.column_id], p.value)
    return cols, mask


def _term(cols: dict[int, np.ndarray], agg: BoundAggregate, mask: np.ndarray) -> np.ndarray:
    v = cols[agg.column_ids[0]][mask]
    for c in agg.column_ids[1:]:
        v = v * cols[c][mask]
    return v


# partial aggregate states: count -> int, sum -> (total, rows), min/max -> value or None.
# A sum over no rows is 0; min/max over no rows is None.


def _combine(func: str, parts: Sequence):
    if func == "count":
        return int(sum(parts))
    if func == "sum":
        return int(sum(p[0] for p in parts))
    vals = [p for p in parts if p is not None]
    if not vals:
        return None
    return int(min(vals) if func == "min" else max(vals))


@dataclass(frozen=True)
class JoinStats:
    keys: np.ndarray
    counts: np.ndarray
    sums: dict[int, np.ndarray]
    mins: dict[int, np.ndarray]
    maxs: dict[int, np.ndarray]


def _build_stats(parts: Sequence, build_cols: Sequence[int]) -> JoinStats:
    keys = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    vals = {
        c: (np.concatenate([p[1][c] for p in parts]) if parts else np.zeros(0, dtype=np.int64))
        for c in build_cols
    }
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    ukeys, starts, counts = np.unique(keys, return_index=True, return_counts=True)
    sums, mins, maxs = {}, {}, {}
    for c, v in vals.items():
        v = v[order]
        if ukeys.size:
            sums[c] = np.add.reduceat(v, starts)
            mins[c] = np.minimum.reduceat(v, starts)
            maxs[c] = np.maximum.reduceat(v, starts)
        else:
            sums[c] = mins[c] = maxs[c] = np.zeros(0, dtype=np.int64)
    return JoinStats(ukeys, counts.astype(np.int64), sums, mins, maxs)


class QueryExecutor:
    def __init__(
        self,
        scheduler: Optional[TaskScheduler],
        placements: Mapping[int, TablePlacement],
        segment_size: int = 1000,
    ) -> None:
        if segment_size < 1:
            raise ValueError("segment_size must be positive")
        self.scheduler = scheduler
        self.placements = placements
        self.segment_size = segment_size
        self.queries = 0

    # task generation ------------------------------------------------------
    def _tasks(self, node: FilterNode, versions: Versions, fn, generation: int, qid: int) -> list[Task]:
        length = _table_length(node, versions)
        placement = self.placements.get(node.child.table_id)
        out = []
        for k, (s, e) in enumerate(segments(length, self.segment_size)):
            home = placement.segment_vault(k) if placement is not None else 0
            tid = self.scheduler.new_task_id() if self.scheduler else k
            out.append(
                Task(tid, fn, home, generation, qid, (node.child.table_id, k, s, e))
            )
        return out

    def generate_tasks(self, plan: QueryPlan, versions: Versions, query_id: int = 0) -> list[Task]:
        """First-generation tasks of a plan (probe scan for selections, build scan for joins)."""
        join = plan.join
        if join is None:
            return self._tasks(plan.probe, versions, self._agg_fn(plan, versions), 0, query_id)
        return self._tasks(join.build, versions, self._build_fn(join, plan, versions), 0, query_id)

    def _agg_fn(self, plan: QueryPlan, versions: Versions):
        node = plan.probe
        aggs = plan.root.aggregates
        placement = self.placements.get(node.child.table_id)

        def run(ctx: Optional[WorkerContext], task: Task):
            _, k, s, e = task.segment
            cols, mask = _read_segment(ctx, node, versions, placement, k, s, e)
            out = []
            for a in aggs:
                if a.func == "count":
                    out.append(int(mask.sum()))
                    continue
                v = _term(cols, a, mask)
                if a.func == "sum":
                    out.append((int(v.sum()), int(v.size)))
                elif v.size == 0:
                    out.append(None)
                else:
                    out.append(int(v.min() if a.func == "min" else v.max()))
            return out

        return run

    def _build_cols(self, plan: QueryPlan) -> list[int]:
        cols = set()
        for a in plan.root.aggregates:
            if a.side == BUILD:
                cols |= set(a.column_ids)
        return sorted(cols)

    def _build_fn(self, join: HashJoinNode, plan: QueryPlan, versions: Versions):
        node = join.build
        bcols = self._build_cols(plan)
        placement = self.placements.get(node.child.table_id)

        def run(ctx: Optional[WorkerContext], task: Task):
            _, k, s, e = task.segment
            cols, mask = _read_segment(ctx, node, versions, placement, k, s, e)
            return cols[join.build_key][mask], {c: cols[c][mask] for c in bcols}

        return run

    def _probe_fn(self, join: HashJoinNode, plan: QueryPlan, versions: Versions, stats: JoinStats):
        node = join.probe
        aggs = plan.root.aggregates
        placement = self.placements.get(node.child.table_id)

        def run(ctx: Optional[WorkerContext], task: Task):
            _, k, s, e = task.segment
            cols, mask = _read_segment(ctx, node, versions, placement, k, s, e)
            keys = cols[join.probe_key][mask]
            idx = np.searchsorted(stats.keys, keys)
            idx_c = np.minimum(idx, max(stats.keys.size - 1, 0))
            hit = (idx < stats.keys.size) & (stats.keys[idx_c] == keys) if stats.keys.size else np.zeros(keys.size, dtype=bool)
            where = idx_c[hit]
            mult = stats.counts[where]
            out = []
            for a in aggs:
                if a.func == "count":
                    out.append(int(mult.sum()))
                    continue
                if a.side == PROBE:
                    v = _term(cols, a, mask)[hit]
                    if a.func == "sum":
                        out.append((int((v * mult).sum()), int(mult.sum())))
                    elif v.size == 0:
                        out.append(None)
                    else:
                        out.append(int(v.min() if a.func == "min" else v.max()))
                else:
                    c = a.column_ids[0]
                    if a.func == "sum":
                        out.append((int(stats.sums[c][where].sum()), int(mult.sum())))
                    elif where.size == 0:
                        out.append(None)
                    elif a.func == "min":
                        out.append(int(stats.mins[c][where].min()))
                    else:
                        out.append(int(stats.maxs[c][where].max()))
            return out

        return run

    # execution ------------------------------------------------------------
    def _run(self, tasks: list[Task]) -> list:
        if self.scheduler is None:
            return [t.fn(None, t) for t in tasks]
        return self.scheduler.run(tasks)

    def execute(self, plan: QueryPlan, versions: Versions, query_id: int = 0) -> tuple:
        """Run ``plan`` over pinned ``versions`` and return one value per aggregate."""
        self.queries += 1
        aggs = plan.root.aggregates
        join = plan.join
        if join is None:
            parts = self._run(self.generate_tasks(plan, versions, query_id))
        else:
            built = self._run(self.generate_tasks(plan, versions, query_id))
            stats = _build_stats(built, self._build_cols(plan))
            probe = self._probe_fn(join, plan, versions, stats)
            parts = self._run(self._tasks(join.probe, versions, probe, 1, query_id))
        return tuple(_combine(a.func, [p[i] for p in parts]) for i, a in enumerate(aggs))

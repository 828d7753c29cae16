"""Engine assembly: one interface over the four consistency/propagation designs.

* ``polynesia``: two replicas.  A background shipping agent drains the update
  logs; one application worker per vault group applies batches with the
  optimized algorithm; rounds are published atomically in order; queries use
  lazy column snapshots.
* ``mi-naive``: two replicas, but the committing transactional thread does the
  propagation itself with the naive decompress/sort/recompress algorithm.
* ``si-ss``: one replica; queries copy every touched dirty column.
* ``si-mvcc``: one replica with per-tuple version chains; queries traverse them.
"""

from __future__ import annotations

import itertools
import os
import queue
import threading
import time
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .analytics.executor import QueryExecutor
from .analytics.plan import QueryPlan, plan_query
from .analytics.query import Catalog, QueryLike
from .analytics.scheduler import STEALING_MODES, TaskScheduler
from .analytics.topology import (
    AccessCounters,
    Placement,
    TablePlacement,
    VaultTopology,
    assign_placements,
)
from .application import (
    LookupCounter,
    MainReplica,
    UpdateBatch,
    apply_batch,
    naive_apply,
)
from .consistency import FullSnapshotter, MvccStore, SnapshotManager, encode_rows
from .shipping import ColumnBuffer, Location, Shipper, merge_logs, shipping_trigger
from .storage import ColumnVersion, TableSchema
from .txn import CommitResult, TxnContext, TxnEngine, TxnOp, UpdateLogEntry

THREADS_ENV = "ISLANDDB_THREADS"


class EngineMode(str, Enum):
    POLYNESIA = "polynesia"
    SI_SS = "si-ss"
    SI_MVCC = "si-mvcc"
    MI_NAIVE = "mi-naive"


ALL_MODES = tuple(m.value for m in EngineMode)


class ConfigError(ValueError):
    """Invalid engine configuration."""


def env_thread_cap() -> Optional[int]:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"{THREADS_ENV} must be positive")
    return cap


@dataclass
class EngineConfig:
    txn_threads: int = 4
    ship_threshold: int = 1024
    staleness_timer_ms: float = 10.0
    dict_rebuild_factor: float = 2.0
    vaults: int = 16
    vault_group_size: int = 4
    workers_per_vault: int = 4
    segment_size: int = 1000
    placement: str = "hybrid"
    stealing: str = "all"
    remote_access_delay_ns: float = 0.0
    local_access_delay_ns: float = 0.0
    analytics: bool = True
    propagation: bool = True
    record_history: bool = False
    trace: bool = False
    max_threads: Optional[int] = None
    analytic_clients: int = 0
    table_groups: dict[int, int] = field(default_factory=dict)

    def validate(self) -> "EngineConfig":
        if self.txn_threads < 1:
            raise ConfigError("txn_threads must be at least 1")
        if not 1 <= self.ship_threshold <= 1024:
            raise ConfigError("ship_threshold must be in 1..1024")
        if self.staleness_timer_ms <= 0:
            raise ConfigError("staleness_timer_ms must be positive")
        if self.dict_rebuild_factor < 1.0:
            raise ConfigError("dict_rebuild_factor must be at least 1")
        if self.segment_size < 1:
            raise ConfigError("segment_size must be positive")
        if self.remote_access_delay_ns < 0 or self.local_access_delay_ns < 0:
            raise ConfigError("access delays cannot be negative")
        try:
            Placement(self.placement)
        except ValueError:
            raise ConfigError(f"unknown placement {self.placement!r}") from None
        if self.stealing not in STEALING_MODES:
            raise ConfigError(f"stealing must be one of {STEALING_MODES}")
        try:
            VaultTopology(self.vaults, self.vault_group_size, self.workers_per_vault)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values).validate()

    def thread_cap(self) -> Optional[int]:
        return self.max_threads if self.max_threads is not None else env_thread_cap()


@dataclass(frozen=True)
class QueryResult:
    values: tuple
    cutoff: int
    query_id: int
    elapsed_s: float


@dataclass
class EngineMetrics:
    mode: str
    committed: int = 0
    aborted: int = 0
    queries: int = 0
    freshness_us: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ship_us: list[float] = field(default_factory=list)
    apply_us: list[float] = field(default_factory=list)
    dict_lookups: int = 0
    accesses: AccessCounters = field(default_factory=AccessCounters)
    snapshot_bytes: int = 0
    mvcc_steps: int = 0
    steals_group: int = 0
    steals_remote: int = 0
    rounds: int = 0
    orphans: int = 0


class Engine:
    """Common plumbing.  Lifecycle: construct, ``load`` tables, ``start``, use, ``stop``."""

    mode: EngineMode
    two_replicas = False

    def __init__(self, schemas: Iterable[TableSchema], config: Optional[EngineConfig] = None):
        self.config = (config or EngineConfig()).validate()
        schemas = list(schemas)
        self.catalog = Catalog(schemas)
        cfg = self.config
        self.txn = TxnEngine(
            schemas,
            cfg.txn_threads,
            logging=self._needs_logs(),
            keep_history=cfg.record_history,
        )
        self.topology = VaultTopology(cfg.vaults, cfg.vault_group_size, cfg.workers_per_vault)
        self.placements: dict[int, TablePlacement] = assign_placements(
            [s.table_id for s in schemas], self.topology, cfg.placement, cfg.table_groups
        )
        self.scheduler: Optional[TaskScheduler] = None
        if cfg.analytics:
            cap = cfg.thread_cap()
            worker_cap = None
            if cap is not None:
                worker_cap = max(1, cap - cfg.txn_threads - cfg.analytic_clients - self._helper_threads())
            self.scheduler = TaskScheduler(
                self.topology,
                cfg.stealing,
                worker_cap=worker_cap,
                local_access_delay_ns=cfg.local_access_delay_ns,
                remote_access_delay_ns=cfg.remote_access_delay_ns,
                trace=cfg.trace,
            )
        self.executor = QueryExecutor(self.scheduler, self.placements, cfg.segment_size)
        self._plans: dict[object, QueryPlan] = {}
        self._qids = itertools.count(1)
        self.initial_rows: dict[int, list[tuple[int, ...]]] = {s.table_id: [] for s in schemas}
        self.query_log: list[tuple[QueryPlan, QueryResult]] = []
        self._query_lock = threading.Lock()
        self.queries_run = 0
        self.started = False

    # hooks for subclasses ---------------------------------------------------
    def _needs_logs(self) -> bool:
        return self.config.record_history

    def _helper_threads(self) -> int:
        return 0

    def _on_start(self) -> None:
        pass

    def _on_stop(self) -> None:
        pass

    def _versions_for(self, plan: QueryPlan):
        """Return (versions, cutoff, release callback)."""
        raise NotImplementedError

    # lifecycle --------------------------------------------------------------
    def load(self, table_id: int, rows: Iterable[Sequence[int]]) -> None:
        if self.started:
            raise RuntimeError("tables must be loaded before start()")
        rows = [tuple(int(v) for v in r) for r in rows]
        self.txn.load(table_id, rows)
        if self.config.record_history:
            self.initial_rows[table_id].extend(rows)

    def start(self) -> "Engine":
        if self.started:
            return self
        self._on_start()
        if self.scheduler is not None:
            self.scheduler.start()
        self.started = True
        return self

    def stop(self) -> None:
        if not self.started:
            return
        self._on_stop()
        if self.scheduler is not None:
            self.scheduler.stop()
        self.started = False

    def __enter__(self) -> "Engine":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # transactional interface -------------------------------------------------
    def submit_txn(self, ops: Sequence[TxnOp], thread: int = 0) -> CommitResult:
        return self.txn.execute_txn(ops, thread)

    def run_txn(self, thread: int, tables: Sequence[int], body: Callable[[TxnContext], object]) -> CommitResult:
        return self.txn.run(thread, tables, body)

    # analytical interface ----------------------------------------------------
    def plan(self, query: QueryLike) -> QueryPlan:
        plan = self._plans.get(query)
        if plan is None:
            plan = plan_query(query, self.catalog)
            self._plans[query] = plan
        return plan

    def submit_query(self, query: QueryLike) -> QueryResult:
        if not self.config.analytics:
            raise RuntimeError("analytics are disabled for this engine")
        plan = self.plan(query)
        t0 = time.perf_counter()
        qid = next(self._qids)
        versions, cutoff, release = self._versions_for(plan)
        try:
            values = self.executor.execute(plan, versions, qid)
        finally:
            release()
        res = QueryResult(values, cutoff, qid, time.perf_counter() - t0)
        with self._query_lock:
            self.queries_run += 1
            if self.config.record_history:
                self.query_log.append((plan, res))
        return res

    def drain(self, timeout: float = 120.0) -> None:
        """Block until every committed update is visible to analytical queries."""

    # state inspection ----------------------------------------------------------
    def table_contents(self) -> dict[int, dict[int, tuple[int, ...]]]:
        return {t: {r: tuple(v) for r, v in s.rows.items()} for t, s in self.txn.stores.items()}

    def analytic_contents(self) -> dict[int, dict[int, tuple[int, ...]]]:
        return self.table_contents()

    def history(self) -> list[UpdateLogEntry]:
        return self.txn.all_entries()

    def metrics(self) -> EngineMetrics:
        m = EngineMetrics(self.mode.value)
        m.committed = self.txn.committed
        m.aborted = self.txn.aborted
        m.queries = self.queries_run
        if self.scheduler is not None:
            m.accesses = self.scheduler.access_counters()
            m.steals_group, m.steals_remote = self.scheduler.steal_counts()
        return m


class _RoundTracker:
    """Publishes application rounds strictly in issue order, each atomically."""

    def __init__(self, replica: MainReplica) -> None:
        self.replica = replica
        self._lock = threading.Lock()
        self._open: dict[int, dict] = {}
        self.next_publish = 0
        self.freshness: list[np.ndarray] = []

    def open(self, round_id: int, cutoff: int, groups: set[int]) -> None:
        with self._lock:
            self._open[round_id] = {
                "cutoff": cutoff,
                "waiting": set(groups),
                "versions": {},
                "times": [],
            }
        self._flush()

    def report(self, round_id: int, group: int, versions: dict, times: list[float]) -> None:
        with self._lock:
            r = self._open[round_id]
            r["versions"].update(versions)
            r["times"].extend(times)
            r["waiting"].discard(group)
        self._flush()

    def _flush(self) -> None:
        with self._lock:
            while True:
                r = self._open.get(self.next_publish)
                if r is None or r["waiting"]:
                    return
                del self._open[self.next_publish]
                self.replica.publish_round(r["versions"], r["cutoff"])
                if r["times"]:
                    now = time.perf_counter()
                    self.freshness.append((now - np.asarray(r["times"])) * 1e6)
                self.next_publish += 1

    def pending_rounds(self) -> int:
        with self._lock:
            return len(self._open)


class _IslandEngine(Engine):
    """Two-replica engines: transactional row store plus analytical column store."""

    two_replicas = True
    apply_fn = staticmethod(apply_batch)

    def _needs_logs(self) -> bool:
        return self.config.propagation or self.config.record_history

    def _on_start(self) -> None:
        cfg = self.config
        versions: dict[tuple[int, int], ColumnVersion] = {}
        for tid, store in self.txn.stores.items():
            for c in range(store.schema.width):
                values, valid = store.column_values(c)
                versions[(tid, c)] = encode_rows(values, valid, 0)
        self.replica = MainReplica(versions, cutoff=self.txn.stable)
        self.snapshots = SnapshotManager(self.replica)
        self._working = dict(versions)
        self.tracker = _RoundTracker(self.replica)
        self.shipper = Shipper(self._locate_insert)
        for tid, store in self.txn.stores.items():
            n = store.next_row_id
            p = self.placements[tid]
            seg = cfg.segment_size
            locs = [Location(p.home_group, p.row_vault(r, seg), r) for r in range(n)]
            for c in range(store.schema.width):
                self.shipper.add_column(tid, c, max(n, seg))
            self.shipper.register_existing(tid, range(store.schema.width), locs)
        self._prop_lock = threading.Lock()
        self._rounds = itertools.count(0)
        self._issued_cutoff = self.txn.stable
        self._last_ship = time.perf_counter()
        self._ship_us: list[float] = []
        self._apply_us: list[float] = []
        self._lookup_counters: list[LookupCounter] = []
        self._counter_lock = threading.Lock()
        self.rounds = 0

    def _locate_insert(self, table_id: int, row_id: int) -> Location:
        p = self.placements[table_id]
        return Location(p.home_group, p.row_vault(row_id, self.config.segment_size), row_id)

    def _versions_for(self, plan: QueryPlan):
        qs = self.snapshots.acquire(plan.columns)
        return qs.versions(), qs.cutoff, lambda: self.snapshots.release(qs)

    def _ship_round(self, force: bool = False):
        """Merge and ship one round.  Caller holds ``_prop_lock``."""
        t0 = time.perf_counter()
        stable = self.txn.stable
        final = merge_logs(self.txn.logs, self.config.ship_threshold, upto=stable)
        if not final.entries and stable <= self._issued_cutoff:
            return None
        cutoff = stable if final.exhausted else final.entries[-1].commit_id
        shipped = self.shipper.ship(final)
        by_group: dict[int, list[ColumnBuffer]] = {}
        for key, buf in shipped.buffers.items():
            by_group.setdefault(key[2], []).append(buf)
        round_id = next(self._rounds)
        self._issued_cutoff = cutoff
        self._last_ship = time.perf_counter()
        self._ship_us.append((self._last_ship - t0) * 1e6)
        self.rounds += 1
        return round_id, cutoff, by_group

    def _counter(self) -> LookupCounter:
        c = LookupCounter()
        with self._counter_lock:
            self._lookup_counters.append(c)
        return c

    def _apply_group(self, buffers: Sequence[ColumnBuffer], counter: LookupCounter):
        t0 = time.perf_counter()
        out: dict[tuple[int, int], ColumnVersion] = {}
        times: list[float] = []
        factor = self.config.dict_rebuild_factor
        for buf in buffers:
            key = (buf.key[0], buf.key[1])
            base = self._working[key]
            new = self.apply_fn(base, UpdateBatch(buf.key, buf.updates), factor, counter)
            self._working[key] = new
            out[key] = new
            times.extend(buf.commit_times)
        self._apply_us.append((time.perf_counter() - t0) * 1e6)
        return out, times

    def analytic_contents(self) -> dict[int, dict[int, tuple[int, ...]]]:
        state = self.replica.state
        out = {}
        for tid, store in self.txn.stores.items():
            width = store.schema.width
            cols = [state.versions[(tid, c)].values() for c in range(width)]
            valid = cols[0][1]
            rows = {}
            arrays = [c[0] for c in cols]
            for r in np.flatnonzero(valid).tolist():
                rows[r] = tuple(int(a[r]) for a in arrays)
            out[tid] = rows
        return out

    def metrics(self) -> EngineMetrics:
        m = super().metrics()
        if not self.started and not hasattr(self, "tracker"):
            return m
        if self.tracker.freshness:
            m.freshness_us = np.concatenate(self.tracker.freshness)
        m.ship_us = list(self._ship_us)
        m.apply_us = list(self._apply_us)
        with self._counter_lock:
            m.dict_lookups = sum(c.lookups for c in self._lookup_counters)
        m.rounds = self.rounds
        m.orphans = self.shipper.orphans
        return m


class PolynesiaEngine(_IslandEngine):
    mode = EngineMode.POLYNESIA

    def _helper_threads(self) -> int:
        return 1 + self.topology.group_count if self.config.propagation else 0

    def _on_start(self) -> None:
        super()._on_start()
        self._running = True
        self._force = False
        self._wake = threading.Event()
        self._threads: list[threading.Thread] = []
        if not self.config.propagation:
            return
        self._queues = [queue.Queue(maxsize=64) for _ in range(self.topology.group_count)]
        self._group_counters = [self._counter() for _ in range(self.topology.group_count)]
        threshold = self.config.ship_threshold
        logs = self.txn.logs

        def nudge() -> None:
            if sum(len(log.entries) - log.shipped for log in logs) >= threshold:
                self._wake.set()

        self.txn.after_commit.append(nudge)
        agent = threading.Thread(target=self._agent_loop, name="shipping-agent", daemon=True)
        self._threads.append(agent)
        for g in range(self.topology.group_count):
            t = threading.Thread(target=self._apply_loop, args=(g,), name=f"apply-g{g}", daemon=True)
            self._threads.append(t)
        for t in self._threads:
            t.start()

    def _agent_loop(self) -> None:
        timer = self.config.staleness_timer_ms / 1000.0
        threshold = self.config.ship_threshold
        while self._running:
            self._wake.wait(timer)
            self._wake.clear()
            while self._running:
                pending = self.txn.pending_update_count()
                due = self._force or shipping_trigger(
                    pending, threshold, last_ship=self._last_ship, staleness_s=timer
                )
                if not due:
                    break
                with self._prop_lock:
                    work = self._ship_round()
                if work is None:
                    break
                round_id, cutoff, by_group = work
                self.tracker.open(round_id, cutoff, set(by_group))
                for g, bufs in by_group.items():
                    self._queues[g].put((round_id, bufs))

    def _apply_loop(self, group: int) -> None:
        q = self._queues[group]
        counter = self._group_counters[group]
        while True:
            item = q.get()
            if item is None:
                return
            round_id, bufs = item
            versions, times = self._apply_group(bufs, counter)
            self.tracker.report(round_id, group, versions, times)

    def drain(self, timeout: float = 120.0) -> None:
        if not self.config.propagation:
            return
        target = self.txn.stable
        deadline = time.perf_counter() + timeout
        self._force = True
        try:
            while True:
                self._wake.set()
                if (
                    self.replica.cutoff >= target
                    and self.txn.pending_update_count() == 0
                    and self.tracker.pending_rounds() == 0
                ):
                    return
                if time.perf_counter() > deadline:
                    raise TimeoutError("propagation did not drain in time")
                time.sleep(0.001)
        finally:
            self._force = False

    def _on_stop(self) -> None:
        self._running = False
        if self.config.propagation:
            self._wake.set()
            for q in self._queues:
                q.put(None)
            for t in self._threads:
                t.join(timeout=10)


class MiNaiveEngine(_IslandEngine):
    """Propagation runs inline on the committing transactional thread."""

    mode = EngineMode.MI_NAIVE
    apply_fn = staticmethod(naive_apply)

    def _on_start(self) -> None:
        super()._on_start()
        if self.config.propagation:
            self._inline_counter = self._counter()
            self.txn.after_commit.append(self._maybe_propagate)

    def _maybe_propagate(self, force: bool = False) -> None:
        timer = self.config.staleness_timer_ms / 1000.0
        threshold = self.config.ship_threshold
        if not force and not shipping_trigger(
            self.txn.pending_update_count(), threshold, last_ship=self._last_ship, staleness_s=timer
        ):
            return
        if not self._prop_lock.acquire(blocking=force):
            return
        try:
            while True:
                work = self._ship_round()
                if work is None:
                    return
                round_id, cutoff, by_group = work
                versions: dict = {}
                times: list[float] = []
                for g in sorted(by_group):
                    v, t = self._apply_group(by_group[g], self._inline_counter)
                    versions.update(v)
                    times.extend(t)
                self.tracker.open(round_id, cutoff, {0})
                self.tracker.report(round_id, 0, versions, times)
                if not force and self.txn.pending_update_count() < threshold:
                    return
        finally:
            self._prop_lock.release()

    def drain(self, timeout: float = 120.0) -> None:
        if self.config.propagation:
            self._maybe_propagate(force=True)


class SiSsEngine(Engine):
    mode = EngineMode.SI_SS

    def _on_start(self) -> None:
        self.full = FullSnapshotter(self.txn)

    def _versions_for(self, plan: QueryPlan):
        snap = self.full.acquire(plan.columns)
        return snap.versions(), snap.cutoff, lambda: self.full.release(snap)

    def metrics(self) -> EngineMetrics:
        m = super().metrics()
        if hasattr(self, "full"):
            m.snapshot_bytes = self.full.bytes_copied
        return m


class SiMvccEngine(Engine):
    mode = EngineMode.SI_MVCC

    def _on_start(self) -> None:
        self.mvcc = MvccStore(self.txn)
        self.mvcc.load_existing()
        self.txn.read_hook = self.mvcc.read_latest

    def _versions_for(self, plan: QueryPlan):
        t = self.txn.stable
        by_table: dict[int, list[int]] = {}
        for tid, c in plan.columns:
            by_table.setdefault(tid, []).append(c)
        versions = {}
        for tid, cols in by_table.items():
            arrays, valid, _ = self.mvcc.scan(tid, t, cols)
            for c, values in zip(cols, arrays):
                versions[(tid, c)] = encode_rows(values, valid, t)
        return versions, t, lambda: None

    def metrics(self) -> EngineMetrics:
        m = super().metrics()
        if hasattr(self, "mvcc"):
            m.mvcc_steps = self.mvcc.steps
        return m


_ENGINES = {
    EngineMode.POLYNESIA: PolynesiaEngine,
    EngineMode.MI_NAIVE: MiNaiveEngine,
    EngineMode.SI_SS: SiSsEngine,
    EngineMode.SI_MVCC: SiMvccEngine,
}


def build_engine(
    mode: EngineMode | str, schemas: Iterable[TableSchema], config: Optional[EngineConfig] = None
) -> Engine:
    try:
        mode = EngineMode(mode)
    except ValueError:
        raise ConfigError(f"unknown engine mode {mode!r}; expected one of {ALL_MODES}") from None
    return _ENGINES[mode](schemas, config)

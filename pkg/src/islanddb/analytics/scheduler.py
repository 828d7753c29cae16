"""Pull-based task scheduling over vault groups with two-level stealing.

Each vault group owns a queue made of one lane (deque) per vault.  A task is
pushed onto the lane of the vault that holds its segment.  Workers pull from
their own vault's lane first, then from the other lanes of their group, and
finally, if cross-group stealing is enabled, from lanes of other groups.
Steals take from the opposite end of the victim lane.
"""

from __future__ import annotations

import itertools
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from .topology import AccessCounters, VaultTopology, Worker

STEAL_NONE, STEAL_GROUP, STEAL_ALL = "none", "group", "all"
STEALING_MODES = (STEAL_NONE, STEAL_GROUP, STEAL_ALL)

# Below this amount of accumulated injected delay a worker keeps running
# instead of sleeping; the OS cannot sleep shorter than this reliably.
_DELAY_QUANTUM_S = 200e-6


class TaskError(RuntimeError):
    """A task raised; the query it belongs to is aborted with this error."""


@dataclass(eq=False)
class Task:
    task_id: int
    fn: Callable[["WorkerContext", "Task"], Any]
    home_vault: int
    generation: int = 0
    query_id: int = 0
    segment: tuple = ()
    index: int = 0
    group: Optional["TaskGroup"] = None


class TaskGroup:
    """Countdown over one submitted batch of tasks (one generation of one query)."""

    def __init__(self, size: int) -> None:
        self.remaining = size
        self.results: list = [None] * size
        self.error: Optional[BaseException] = None
        self._lock = threading.Lock()
        self._done = threading.Event()
        if size == 0:
            self._done.set()

    def finish(self, index: int, result: Any, error: Optional[BaseException]) -> None:
        with self._lock:
            self.results[index] = result
            if error is not None and self.error is None:
                self.error = error
            self.remaining -= 1
            if self.remaining == 0:
                self._done.set()

    def wait(self, timeout: Optional[float] = None) -> list:
        if not self._done.wait(timeout):
            raise TimeoutError("task group did not finish in time")
        if self.error is not None:
            raise TaskError(str(self.error)) from self.error
        return self.results


@dataclass
class TraceEvent:
    task_id: int
    query_id: int
    generation: int
    worker: int
    start: float
    end: float
    stolen: str  # "", "group" or "remote"


class WorkerContext:
    """Per-worker state handed to task functions: identity, counters, delay debt."""

    def __init__(self, worker: Worker, scheduler: "TaskScheduler") -> None:
        self.worker = worker
        self.vault = worker.vault
        self.group = worker.group
        self.counters = AccessCounters()
        self.local_ns = scheduler.local_access_delay_ns
        self.remote_ns = scheduler.remote_access_delay_ns
        self.debt_s = 0.0
        self.tasks_run = 0
        self.steals_group = 0
        self.steals_remote = 0

    def charge(self, count: int, local: bool, dictionary: bool = False) -> None:
        c = self.counters
        if local:
            c.local += count
            if dictionary:
                c.local_dict += count
            ns = self.local_ns
        else:
            c.remote += count
            if dictionary:
                c.remote_dict += count
            ns = self.remote_ns
        if ns:
            self.debt_s += count * ns * 1e-9
            if self.debt_s >= _DELAY_QUANTUM_S:
                self.pay()

    def pay(self) -> None:
        if self.debt_s > 0:
            t0 = time.perf_counter()
            time.sleep(self.debt_s)
            self.debt_s -= time.perf_counter() - t0


class TaskScheduler:
    def __init__(
        self,
        topology: VaultTopology,
        stealing: str = STEAL_GROUP,
        *,
        worker_cap: Optional[int] = None,
        local_access_delay_ns: float = 0.0,
        remote_access_delay_ns: float = 0.0,
        trace: bool = False,
        steal_backoff_s: float = 1e-6,
    ) -> None:
        if stealing not in STEALING_MODES:
            raise ValueError(f"stealing must be one of {STEALING_MODES}, got {stealing!r}")
        self.topology = topology
        self.stealing = stealing
        self.local_access_delay_ns = local_access_delay_ns
        self.remote_access_delay_ns = remote_access_delay_ns
        self.steal_backoff_s = steal_backoff_s
        self.lanes: list[deque] = [deque() for _ in range(topology.vault_count)]
        self.workers = topology.workers(worker_cap)
        self.contexts = [WorkerContext(w, self) for w in self.workers]
        self._cv = [threading.Condition() for _ in range(topology.group_count)]
        self._epoch = [0] * topology.group_count
        self._threads: list[threading.Thread] = []
        self._running = False
        self._ids = itertools.count(1)
        self.trace: Optional[list[TraceEvent]] = [] if trace else None
        self.submitted = 0
        self.executed = 0
        # groups that own a worker; tasks homed elsewhere would never run under
        # a capped pool, so they are redirected to a staffed vault
        self._staffed = sorted({w.vault for w in self.workers})
        self.remote_steal_min = self._remote_steal_min()

    def _remote_steal_min(self) -> int:
        """Smallest victim backlog worth a cross-group steal.

        A remote thief pays ``remote/local`` times the access cost of a home
        worker, so it only wins while the victim lane holds more than that many
        tasks per home worker.
        """
        local, remote = self.local_access_delay_ns, self.remote_access_delay_ns
        if local <= 0 or remote <= local:
            return 1
        per_vault = max(1, len(self.workers) // max(1, len(self._staffed)))
        return max(1, math.ceil(per_vault * remote / local))

    # lifecycle ------------------------------------------------------------
    def start(self) -> None:
        if self._running:
            return
        self._running = True
        for ctx in self.contexts:
            t = threading.Thread(
                target=self._worker_loop, args=(ctx,), name=f"vault{ctx.vault}-w{ctx.worker.worker_id}",
                daemon=True,
            )
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._running = False
        for cv in self._cv:
            with cv:
                cv.notify_all()
        for t in self._threads:
            t.join(timeout=5)
        self._threads.clear()

    def __enter__(self) -> "TaskScheduler":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    # submission -----------------------------------------------------------
    def new_task_id(self) -> int:
        return next(self._ids)

    def submit(self, tasks: Sequence[Task]) -> TaskGroup:
        group = TaskGroup(len(tasks))
        per_group: dict[int, int] = {}
        staffed = set(self._staffed)
        for i, task in enumerate(tasks):
            task.index = i
            task.group = group
            v = task.home_vault
            if v not in staffed:
                v = self._staffed[v % len(self._staffed)]
            self.lanes[v].append(task)
            g = self.topology.group_of(v)
            per_group[g] = per_group.get(g, 0) + 1
        self.submitted += len(tasks)
        # wake one worker per task at home, plus one thief per other group
        wake = dict(per_group)
        if self.stealing == STEAL_ALL and tasks:
            for g in range(self.topology.group_count):
                wake.setdefault(g, 1)
        for g, count in wake.items():
            cv = self._cv[g]
            with cv:
                self._epoch[g] += 1
                cv.notify(count)
        return group

    def run(self, tasks: Sequence[Task], timeout: Optional[float] = None) -> list:
        return self.submit(tasks).wait(timeout)

    # worker side ----------------------------------------------------------
    def _take(self, ctx: WorkerContext, rr: int) -> tuple[Optional[Task], str]:
        lanes = self.lanes
        try:
            return lanes[ctx.vault].popleft(), ""
        except IndexError:
            pass
        if self.stealing == STEAL_NONE:
            return None, ""
        vaults = self.topology.vaults_of(ctx.group)
        k = len(vaults)
        for i in range(k):
            v = vaults[(rr + i) % k]
            if v == ctx.vault:
                continue
            try:
                return lanes[v].pop(), "group"
            except IndexError:
                pass
        if self.stealing != STEAL_ALL:
            return None, ""
        # give the victim group's own workers first claim on its tasks
        time.sleep(self.steal_backoff_s)
        try:
            return lanes[ctx.vault].popleft(), ""
        except IndexError:
            pass
        nv = self.topology.vault_count
        for i in range(nv):
            v = (ctx.vault + 1 + rr + i) % nv
            if self.topology.group_of(v) == ctx.group or len(lanes[v]) < self.remote_steal_min:
                continue
            try:
                return lanes[v].pop(), "remote"
            except IndexError:
                pass
        return None, ""

    def _has_visible_work(self, ctx: WorkerContext) -> bool:
        if self.stealing == STEAL_NONE:
            return bool(self.lanes[ctx.vault])
        if any(self.lanes[v] for v in self.topology.vaults_of(ctx.group)):
            return True
        if self.stealing == STEAL_GROUP:
            return False
        m = self.remote_steal_min
        return any(len(lane) >= m for lane in self.lanes)

    def _worker_loop(self, ctx: WorkerContext) -> None:
        cv = self._cv[ctx.group]
        rr = 0
        trace = self.trace
        while self._running:
            with cv:
                seen = self._epoch[ctx.group]
            task, how = self._take(ctx, rr)
            if task is None:
                ctx.pay()
                with cv:
                    if self._epoch[ctx.group] == seen and not self._has_visible_work(ctx):
                        cv.wait(0.05)
                continue
            rr += 1
            if how == "group":
                ctx.steals_group += 1
            elif how == "remote":
                ctx.steals_remote += 1
            t0 = time.perf_counter()
            result, error = None, None
            try:
                result = task.fn(ctx, task)
            except BaseException as exc:  # surfaced through the task group
                error = exc
            ctx.tasks_run += 1
            self.executed += 1
            if trace is not None:
                trace.append(
                    TraceEvent(task.task_id, task.query_id, task.generation, ctx.worker.worker_id,
                               t0, time.perf_counter(), how)
                )
            task.group.finish(task.index, result, error)

    # metrics --------------------------------------------------------------
    def access_counters(self) -> AccessCounters:
        total = AccessCounters()
        for ctx in self.contexts:
            total.add(ctx.counters)
        return total

    def steal_counts(self) -> tuple[int, int]:
        return (
            sum(c.steals_group for c in self.contexts),
            sum(c.steals_remote for c in self.contexts),
        )

    def tasks_executed(self) -> int:
        return sum(c.tasks_run for c in self.contexts)

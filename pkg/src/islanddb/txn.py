"""Transactional island: row-store execution, commit ids and per-thread update logs.

Concurrency control is deliberately simple.  A transaction declares the tables it
touches up front (or they are derived from its operation list), takes their locks
in sorted order, buffers its writes privately and installs them at commit.  A
short global commit section hands out the commit id, appends the log entries and
advances the ``stable`` watermark, so per-thread logs stay sorted and the union
of all logs is gap-free over the ids that produced writes.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, NamedTuple, Optional, Sequence, Union

from .storage import Delete, Insert, Modify, NotFoundError, RowStore, TableSchema

MAX_TXN_WRITES = 1024


class UpdateKind(IntEnum):
    INSERT = 0
    DELETE = 1
    MODIFY = 2


class UpdateLogEntry(NamedTuple):
    """One propagated field change.  ``key`` is ``(table_id, row_id, column_id)``."""

    commit_id: int
    kind: UpdateKind
    payload: Optional[int]
    key: tuple[int, int, int]


class Read(NamedTuple):
    table_id: int
    row_id: int


class Increment(NamedTuple):
    """Read-modify-write of a single field: ``field += delta``."""

    table_id: int
    row_id: int
    column_id: int
    delta: int


TxnOp = Union[Read, Insert, Delete, Modify, Increment]


class TxnAborted(Exception):
    """The transaction was rolled back; nothing was applied or logged."""


class TxnTooLarge(TxnAborted):
    """More field writes than one shipping round can carry."""


@dataclass(frozen=True)
class CommitResult:
    commit_id: int
    reads: tuple
    inserted: tuple[int, ...] = ()
    writes: int = 0


class UpdateLog:
    """Append-only, commit-ordered log owned by one transactional thread.

    The owner appends inside the engine's commit section; the shipping agent
    consumes from ``shipped`` onwards.  With ``keep_history`` the consumed
    prefix is retained so tests can rebuild the full global history.
    """

    def __init__(self, owner_thread: int, keep_history: bool = False) -> None:
        self.owner_thread = owner_thread
        self.keep_history = keep_history
        self.entries: list[UpdateLogEntry] = []
        self.commit_times: list[float] = []
        self.shipped = 0  # index into entries of the first unshipped entry

    def append(self, entries: Sequence[UpdateLogEntry], commit_time: float) -> None:
        if self.entries and entries and entries[0].commit_id <= self.entries[-1].commit_id:
            raise ValueError("update log appends must be commit-ordered")
        self.entries.extend(entries)
        self.commit_times.extend([commit_time] * len(entries))

    def __len__(self) -> int:
        return len(self.entries)

    def pending(self) -> int:
        return len(self.entries) - self.shipped

    def head_commit_id(self) -> Optional[int]:
        i = self.shipped
        return self.entries[i].commit_id if i < len(self.entries) else None

    def consume(self, count: int) -> None:
        self.shipped += count
        if not self.keep_history and self.shipped >= 4096:
            # reclaim the consumed prefix; the writer only ever appends
            cut = self.shipped
            del self.entries[:cut]
            del self.commit_times[:cut]
            self.shipped -= cut


CommitHook = Callable[[int, Sequence[UpdateLogEntry], "TxnContext"], None]


class TxnContext:
    """Private write buffer of one running transaction."""

    def __init__(self, engine: "TxnEngine", thread: int) -> None:
        self.engine = engine
        self.thread = thread
        self.overlay: dict[tuple[int, int], Optional[list[int]]] = {}
        self.written: dict[tuple[int, int], set[int]] = {}
        self.inserts: list[tuple[int, list[int]]] = []
        self.reads: list[tuple[int, ...]] = []
        self.touched_tables: set[int] = set()
        self.n_writes = 0

    def _row(self, table_id: int, row_id: int) -> list[int]:
        key = (table_id, row_id)
        if key in self.overlay:
            row = self.overlay[key]
            if row is None:
                raise NotFoundError(f"table {table_id}: row {row_id} deleted in this transaction")
            return row
        store = self.engine.store(table_id)
        row = store.rows.get(row_id)
        if row is None:
            raise NotFoundError(f"table {table_id}: row {row_id} not found")
        return row

    def read(self, table_id: int, row_id: int) -> tuple[int, ...]:
        if (table_id, row_id) not in self.overlay and self.engine.read_hook is not None:
            values = self.engine.read_hook(table_id, row_id)
        else:
            values = tuple(self._row(table_id, row_id))
        self.reads.append(values)
        return values

    def _own(self, table_id: int, row_id: int) -> list[int]:
        key = (table_id, row_id)
        row = self.overlay.get(key)
        if row is None:
            row = list(self._row(table_id, row_id))
            self.overlay[key] = row
        return row

    def modify(self, table_id: int, row_id: int, column_id: int, value: int) -> None:
        row = self._own(table_id, row_id)
        if not 0 <= column_id < len(row):
            raise NotFoundError(f"table {table_id}: no column {column_id}")
        row[column_id] = int(value)
        cols = self.written.setdefault((table_id, row_id), set())
        if column_id not in cols:
            cols.add(column_id)
            self.n_writes += 1
        self.touched_tables.add(table_id)

    def increment(self, table_id: int, row_id: int, column_id: int, delta: int) -> int:
        row = self._own(table_id, row_id)
        self.modify(table_id, row_id, column_id, row[column_id] + int(delta))
        return row[column_id]

    def delete(self, table_id: int, row_id: int) -> None:
        row = self._row(table_id, row_id)
        self.overlay[(table_id, row_id)] = None
        self.n_writes += len(row) - len(self.written.pop((table_id, row_id), ()))
        self.touched_tables.add(table_id)

    def insert(self, table_id: int, values: Sequence[int]) -> None:
        schema = self.engine.store(table_id).schema
        if len(values) != schema.width:
            raise ValueError(f"{schema.name}: expected {schema.width} fields, got {len(values)}")
        self.inserts.append((table_id, [int(v) for v in values]))
        self.n_writes += schema.width
        self.touched_tables.add(table_id)

    def apply(self, op: TxnOp) -> None:
        handler = _HANDLERS.get(type(op))
        if handler is None:
            raise TypeError(f"not a transaction operation: {op!r}")
        handler(self, op)


_HANDLERS: dict[type, Callable[[TxnContext, TxnOp], object]] = {
    Read: lambda ctx, op: ctx.read(op.table_id, op.row_id),
    Modify: lambda ctx, op: ctx.modify(op.table_id, op.row_id, op.column_id, op.value),
    Increment: lambda ctx, op: ctx.increment(op.table_id, op.row_id, op.column_id, op.delta),
    Delete: lambda ctx, op: ctx.delete(op.table_id, op.row_id),
    Insert: lambda ctx, op: ctx.insert(op.table_id, op.values),
}


class TxnEngine:
    """Owns the row stores, the commit-id counter and the per-thread logs."""

    def __init__(
        self,
        schemas: Iterable[TableSchema],
        txn_threads: int,
        *,
        logging: bool = True,
        keep_history: bool = False,
        max_txn_writes: Optional[int] = MAX_TXN_WRITES,
    ) -> None:
        self.stores: dict[int, RowStore] = {s.table_id: RowStore(s) for s in schemas}
        self.logging = logging
        self.max_txn_writes = max_txn_writes
        self.logs = [UpdateLog(t, keep_history) for t in range(txn_threads)]
        self.commit_lock = threading.Lock()
        self._next_cid = 1
        self.stable = 0  # every commit id <= stable has fully committed
        self.commit_hooks: list[CommitHook] = []
        self.after_commit: list[Callable[[], None]] = []
        self.read_hook: Optional[Callable[[int, int], tuple[int, ...]]] = None
        self.committed = 0
        self.aborted = 0

    def store(self, table_id: int) -> RowStore:
        try:
            return self.stores[table_id]
        except KeyError:
            raise NotFoundError(f"unknown table {table_id}") from None

    def load(self, table_id: int, rows: Iterable[Sequence[int]]) -> None:
        store = self.store(table_id)
        for values in rows:
            store.insert(values)

    def pending_update_count(self) -> int:
        return sum(log.pending() for log in self.logs)

    def execute_txn(self, ops: Sequence[TxnOp], thread: int) -> CommitResult:
        tables = sorted({op.table_id for op in ops})

        def body(ctx: TxnContext) -> None:
            handlers = _HANDLERS
            for op in ops:
                handler = handlers.get(type(op))
                if handler is None:
                    raise TypeError(f"not a transaction operation: {op!r}")
                handler(ctx, op)

        return self.run(thread, tables, body)

    def run(
        self, thread: int, tables: Sequence[int], body: Callable[[TxnContext], object]
    ) -> CommitResult:
        """Run ``body`` as one transaction holding the locks of ``tables``.

        Any exception raised by ``body`` (typically ``NotFoundError``) aborts the
        transaction and is re-raised; nothing is applied or logged.
        """
        locked = set(tables)
        locks = [self.store(t).lock for t in sorted(locked)]
        for lock in locks:
            lock.acquire()
        try:
            ctx = TxnContext(self, thread)
            try:
                body(ctx)
                if not ctx.touched_tables <= locked:
                    raise TxnAborted(
                        f"transaction wrote tables {sorted(ctx.touched_tables - locked)} "
                        "it did not lock"
                    )
                if (
                    self.logging
                    and self.max_txn_writes is not None
                    and ctx.n_writes > self.max_txn_writes
                ):
                    raise TxnTooLarge(
                        f"{ctx.n_writes} field writes exceed the per-round limit "
                        f"{self.max_txn_writes}"
                    )
            except BaseException:
                self.aborted += 1
                raise
            result = self._commit(ctx)
        finally:
            for lock in reversed(locks):
                lock.release()
        for cb in self.after_commit:
            cb()
        return result

    def _commit(self, ctx: TxnContext) -> CommitResult:
        entries: list[UpdateLogEntry] = []
        inserted: list[int] = []
        with self.commit_lock:
            cid = self._next_cid
            self._next_cid += 1
            if ctx.n_writes:
                for (table_id, row_id), row in ctx.overlay.items():
                    store = self.stores[table_id]
                    if row is None:
                        old = store.rows.pop(row_id)
                        for c in range(len(old)):
                            entries.append(
                                UpdateLogEntry(cid, UpdateKind.DELETE, None, (table_id, row_id, c))
                            )
                        continue
                    cols = ctx.written.get((table_id, row_id))
                    if not cols:
                        continue
                    store.rows[row_id] = row
                    for c in sorted(cols):
                        entries.append(
                            UpdateLogEntry(cid, UpdateKind.MODIFY, row[c], (table_id, row_id, c))
                        )
                for table_id, values in ctx.inserts:
                    store = self.stores[table_id]
                    row_id = store.insert(values)
                    inserted.append(row_id)
                    for c, v in enumerate(values):
                        entries.append(
                            UpdateLogEntry(cid, UpdateKind.INSERT, v, (table_id, row_id, c))
                        )
                if self.logging and entries:
                    self.logs[ctx.thread].append(entries, time.perf_counter())
            for hook in self.commit_hooks:
                hook(cid, entries, ctx)
            self.stable = cid
            self.committed += 1
        return CommitResult(cid, tuple(ctx.reads), tuple(inserted), len(entries))

    def all_entries(self) -> list[UpdateLogEntry]:
        """Every retained entry of every log, sorted by commit id."""
        out = [e for log in self.logs for e in log.entries]
        out.sort(key=lambda e: e.commit_id)
        return out

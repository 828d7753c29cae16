"""Snapshot isolation for analytical queries.

``SnapshotManager`` is the lazy, column-granularity scheme: a query pins the
head of each column's snapshot chain and only pushes a new head when the main
replica has moved on.  ``FullSnapshotter`` (copy every touched dirty column) and
``MvccStore`` (per-tuple version chains) are the two single-replica baselines.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .application import ColumnKey, MainReplica
from .storage import (
    ColumnVersion,
    Dictionary,
    EncodedColumn,
    NotFoundError,
    encode_column,
)
from .txn import TxnContext, TxnEngine, UpdateKind, UpdateLogEntry


class SnapshotError(RuntimeError):
    """Snapshot protocol misuse, e.g. releasing a snapshot twice."""


@dataclass(eq=False)
class ChainEntry:
    version: ColumnVersion
    created_at: int
    refcount: int = 0


@dataclass
class SnapshotChain:
    entries: list[ChainEntry] = field(default_factory=list)  # entries[0] is the head

    @property
    def head(self) -> Optional[ChainEntry]:
        return self.entries[0] if self.entries else None

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class ColumnMeta:
    dirty: bool = True
    chain: SnapshotChain = field(default_factory=SnapshotChain)


@dataclass(eq=False)
class QuerySnapshot:
    query_id: int
    cutoff: int
    pinned: dict[ColumnKey, ChainEntry]
    released: bool = False

    def version(self, key: ColumnKey) -> ColumnVersion:
        try:
            return self.pinned[key].version
        except KeyError:
            raise NotFoundError(f"column {key} is not pinned by query {self.query_id}") from None

    def versions(self) -> dict[ColumnKey, ColumnVersion]:
        return {k: e.version for k, e in self.pinned.items()}


def _read_version(version: ColumnVersion, offset: int) -> int:
    if not 0 <= offset < version.length:
        raise NotFoundError(f"offset {offset} outside column of {version.length} rows")
    values, valid = version.values(offset, offset + 1)
    if not valid[0]:
        raise NotFoundError(f"offset {offset} is a deleted row")
    return int(values[0])


class SnapshotManager:
    def __init__(self, replica: MainReplica) -> None:
        self.replica = replica
        self.meta: dict[ColumnKey, ColumnMeta] = {k: ColumnMeta() for k in replica.keys()}
        self._lock = threading.Lock()
        self._ids = itertools.count(1)
        self.heads_created = 0
        replica.on_publish.append(self._mark_dirty)

    def register(self, key: ColumnKey) -> None:
        with self._lock:
            self.meta.setdefault(key, ColumnMeta())

    def _mark_dirty(self, keys: Sequence[ColumnKey]) -> None:
        for k in keys:
            meta = self.meta.get(k)
            if meta is None:
                with self._lock:
                    meta = self.meta.setdefault(k, ColumnMeta())
            meta.dirty = True

    def acquire(self, columns: Iterable[ColumnKey], query_id: Optional[int] = None) -> QuerySnapshot:
        keys = sorted(set(columns))
        with self._lock:
            state = self.replica.state  # one load: versions and cutoff agree
            pinned: dict[ColumnKey, ChainEntry] = {}
            for key in keys:
                meta = self.meta.get(key)
                main = state.versions.get(key)
                if meta is None or main is None:
                    raise NotFoundError(f"unknown column {key}")
                head = meta.chain.head
                if head is None or head.created_at != main.created_at:
                    if head is not None and head.refcount == 0:
                        meta.chain.entries.pop(0)
                    head = ChainEntry(main, main.created_at)
                    meta.chain.entries.insert(0, head)
                    self.heads_created += 1
                meta.dirty = False
                head.refcount += 1
                pinned[key] = head
            qid = next(self._ids) if query_id is None else query_id
            return QuerySnapshot(qid, state.cutoff, pinned)

    def release(self, qs: QuerySnapshot) -> None:
        with self._lock:
            if qs.released:
                raise SnapshotError(f"query {qs.query_id} released its snapshot twice")
            qs.released = True
            for key, entry in qs.pinned.items():
                entry.refcount -= 1
                chain = self.meta[key].chain
                if entry.refcount == 0 and chain.head is not entry:
                    chain.entries.remove(entry)

    def read(self, qs: QuerySnapshot, key: ColumnKey, offset: int) -> int:
        if qs.released:
            raise SnapshotError(f"query {qs.query_id} already released its snapshot")
        return _read_version(qs.version(key), offset)

    def chain_length(self, key: ColumnKey) -> int:
        return len(self.meta[key].chain)


def encode_rows(values: np.ndarray, valid: np.ndarray, created_at: int) -> ColumnVersion:
    """Encode gathered row-store fields, tolerating an empty table."""
    if values.size == 0:
        d = Dictionary.from_sorted(np.zeros(0, dtype=np.int64))
        col = EncodedColumn.from_codes(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool), 1)
        return ColumnVersion(d, col, created_at)
    d, col = encode_column(values, valid)
    return ColumnVersion(d, col, created_at)


@dataclass(eq=False)
class FullSnapshot:
    query_id: int
    cutoff: int
    pinned: dict[ColumnKey, ColumnVersion]
    bytes_copied: int = 0

    def version(self, key: ColumnKey) -> ColumnVersion:
        return self.pinned[key]

    def versions(self) -> dict[ColumnKey, ColumnVersion]:
        return dict(self.pinned)


class FullSnapshotter:
    """Single-replica snapshotting: copy every touched column that has dirty data.

    A commit marks the columns it wrote as dirty.  A query arriving while any
    of its columns is dirty blocks writers of those tables, re-materializes
    those columns from the row store and shares the copies with later queries
    until the next write.
    """

    def __init__(self, txn: TxnEngine) -> None:
        self.txn = txn
        self.dirty: set[ColumnKey] = set()
        self.copies: dict[ColumnKey, ColumnVersion] = {}
        self.bytes_copied = 0
        self.snapshots_taken = 0
        self._lock = threading.Lock()
        self._ids = itertools.count(1)
        for tid, store in txn.stores.items():
            for c in range(store.schema.width):
                self.dirty.add((tid, c))
        txn.commit_hooks.append(self._on_commit)

    def _on_commit(self, cid: int, entries: Sequence[UpdateLogEntry], ctx: TxnContext) -> None:
        for table_id, row_id in ctx.overlay:
            if ctx.overlay[(table_id, row_id)] is None:
                width = self.txn.stores[table_id].schema.width
                self.dirty.update((table_id, c) for c in range(width))
        for (table_id, _), cols in ctx.written.items():
            self.dirty.update((table_id, c) for c in cols)
        for table_id, values in ctx.inserts:
            self.dirty.update((table_id, c) for c in range(len(values)))

    def acquire(self, columns: Iterable[ColumnKey], query_id: Optional[int] = None) -> FullSnapshot:
        keys = sorted(set(columns))
        tables = sorted({t for t, _ in keys})
        locks = [self.txn.store(t).lock for t in tables]
        for lock in locks:
            lock.acquire()
        try:
            with self._lock:
                cutoff = self.txn.stable
                copied = 0
                pinned: dict[ColumnKey, ColumnVersion] = {}
                for key in keys:
                    t, c = key
                    store = self.txn.store(t)
                    if not 0 <= c < store.schema.width:
                        raise NotFoundError(f"unknown column {key}")
                    if key in self.dirty or key not in self.copies:
                        values, valid = store.column_values(c)
                        version = encode_rows(values, valid, cutoff)
                        self.copies[key] = version
                        self.dirty.discard(key)
                        copied += version.nbytes
                    pinned[key] = self.copies[key]
                if copied:
                    self.snapshots_taken += 1
                self.bytes_copied += copied
                qid = next(self._ids) if query_id is None else query_id
                return FullSnapshot(qid, cutoff, pinned, copied)
        finally:
            for lock in reversed(locks):
                lock.release()

    def release(self, snap: FullSnapshot) -> None:
        pass


# ---------------------------------------------------------------------------
# per-tuple MVCC baseline


class VersionChainEntry:
    __slots__ = ("begin", "end", "value", "next")

    def __init__(self, begin: int, value, next_entry: Optional["VersionChainEntry"]) -> None:
        self.begin = begin
        self.end: Optional[int] = None
        self.value = value  # row tuple, or None for a delete tombstone
        self.next = next_entry


def baseline_mvcc_read(head: Optional[VersionChainEntry], t: int):
    """Return (value, steps): the newest version with begin <= t and entries examined."""
    steps = 0
    e = head
    while e is not None:
        steps += 1
        if e.begin <= t:
            return e.value, steps
        e = e.next
    raise NotFoundError(f"no version visible at {t}")


def chain_length(head: Optional[VersionChainEntry]) -> int:
    k = 0
    while head is not None:
        k += 1
        head = head.next
    return k


class MvccStore:
    """Newest-first version chain per tuple, installed inside the commit section."""

    def __init__(self, txn: TxnEngine) -> None:
        self.txn = txn
        self.chains: dict[int, list[Optional[VersionChainEntry]]] = {
            tid: [] for tid in txn.stores
        }
        self.steps = 0
        self.reads = 0
        txn.commit_hooks.append(self._on_commit)

    def load_existing(self) -> None:
        for tid, store in self.txn.stores.items():
            chain = self.chains[tid]
            chain.extend([None] * (store.next_row_id - len(chain)))
            for row_id, row in store.rows.items():
                chain[row_id] = VersionChainEntry(0, tuple(row), None)

    def _install(self, table_id: int, row_id: int, cid: int, value) -> None:
        chain = self.chains[table_id]
        if row_id >= len(chain):
            chain.extend([None] * (row_id + 1 - len(chain)))
        head = chain[row_id]
        entry = VersionChainEntry(cid, value, head)
        if head is not None:
            head.end = cid
        chain[row_id] = entry

    def _on_commit(self, cid: int, entries: Sequence[UpdateLogEntry], ctx: TxnContext) -> None:
        rows = {}
        for e in entries:
            t, r, _ = e.key
            if (t, r) not in rows:
                rows[(t, r)] = e.kind
        for (t, r), kind in rows.items():
            if kind == UpdateKind.DELETE:
                self._install(t, r, cid, None)
            else:
                self._install(t, r, cid, tuple(self.txn.stores[t].rows[r]))

    def read(self, table_id: int, row_id: int, t: int) -> tuple[int, ...]:
        chain = self.chains[table_id]
        head = chain[row_id] if 0 <= row_id < len(chain) else None
        value, steps = baseline_mvcc_read(head, t)
        self.steps += steps
        self.reads += 1
        if value is None:
            raise NotFoundError(f"table {table_id}: row {row_id} deleted at {t}")
        return value

    def read_latest(self, table_id: int, row_id: int) -> tuple[int, ...]:
        return self.read(table_id, row_id, 1 << 62)

    def scan(self, table_id: int, t: int, columns: Sequence[int]):
        """Materialize ``columns`` of every tuple visible at ``t``.

        Returns (per-column value arrays, validity, total traversal steps).
        """
        chain = self.chains[table_id]
        n = len(chain)
        valid = np.zeros(n, dtype=bool)
        rows: list = [None] * n
        steps = 0
        for i in range(n):
            e = chain[i]
            while e is not None:
                steps += 1
                if e.begin <= t:
                    break
                e = e.next
            if e is not None and e.value is not None:
                rows[i] = e.value
                valid[i] = True
        out = []
        for c in columns:
            col = np.zeros(n, dtype=np.int64)
            idx = np.flatnonzero(valid)
            if idx.size:
                col[idx] = [rows[i][c] for i in idx.tolist()]
            out.append(col)
        self.steps += steps
        self.reads += n
        return out, valid, steps

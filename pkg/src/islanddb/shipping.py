"""Update shipping: merge per-thread logs, locate targets, fill per-column buffers."""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .txn import UpdateKind, UpdateLog, UpdateLogEntry

FINAL_LOG_CAPACITY = 1024
PROBE_LANES = 4

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    z = x.astype(np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def pack_key(table_id: int, row_id: int, column_id: int) -> int:
    """Fold a (table, row, column) key into 64 bits: 8 | 16 | 40 bits."""
    return ((table_id & 0xFF) << 56) | ((column_id & 0xFFFF) << 40) | (row_id & 0xFF_FFFF_FFFF)


def default_hash(key: tuple[int, int, int]) -> int:
    return splitmix64(pack_key(*key))


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


class Location(NamedTuple):
    group: int
    vault: int
    offset: int


class OrphanUpdateError(LookupError):
    """A delete or modify arrived for a key that was never registered."""


class TargetIndex:
    """Chained hash index from (table, row, column) keys to replica locations.

    The bucket of a key is ``hash_fn(key) % bucket_count``.  ``bucket_count``
    starts at the next power of two at or above the partition capacity and
    doubles (with a rehash) once the load factor passes ``max_load``.
    """

    def __init__(
        self,
        capacity: int,
        hash_fn: Optional[Callable[[tuple[int, int, int]], int]] = None,
        *,
        bucket_count: Optional[int] = None,
        max_load: float = 2.0,
    ) -> None:
        self.hash_fn = hash_fn or default_hash
        self.bucket_count = bucket_count if bucket_count is not None else next_pow2(capacity)
        if self.bucket_count < 1:
            raise ValueError("bucket_count must be positive")
        self.fixed = bucket_count is not None
        self.max_load = max_load
        self.buckets: list[dict] = [{} for _ in range(self.bucket_count)]
        self.size = 0

    def bucket_of(self, key: tuple[int, int, int]) -> int:
        return self.hash_fn(key) % self.bucket_count

    def register(self, key: tuple[int, int, int], location: Location) -> None:
        bucket = self.buckets[self.hash_fn(key) % self.bucket_count]
        if key not in bucket:
            self.size += 1
        bucket[key] = location
        if not self.fixed and self.size > self.max_load * self.bucket_count:
            self._grow()

    def register_rows(
        self, table_id: int, column_id: int, row_ids: np.ndarray, locations: Sequence[Location]
    ) -> None:
        """Bulk registration with vectorized hashing (default hash only)."""
        if self.hash_fn is not default_hash:
            for r, loc in zip(row_ids.tolist(), locations):
                self.register((table_id, r, column_id), loc)
            return
        total = self.size + len(row_ids)
        while not self.fixed and total > self.max_load * self.bucket_count:
            self.bucket_count *= 2
        if len(self.buckets) != self.bucket_count:
            self._rehash(self.bucket_count)
        packed = (
            (np.uint64(table_id & 0xFF) << np.uint64(56))
            | (np.uint64(column_id & 0xFFFF) << np.uint64(40))
            | row_ids.astype(np.uint64)
        )
        bucket_ids = (splitmix64_array(packed) % np.uint64(self.bucket_count)).tolist()
        buckets = self.buckets
        for r, b, loc in zip(row_ids.tolist(), bucket_ids, locations):
            d = buckets[b]
            key = (table_id, r, column_id)
            if key not in d:
                self.size += 1
            d[key] = loc

    def locate(self, key: tuple[int, int, int]) -> Location:
        loc = self.buckets[self.hash_fn(key) % self.bucket_count].get(key)
        if loc is None:
            raise OrphanUpdateError(f"no location registered for key {key}")
        return loc

    def __contains__(self, key: tuple[int, int, int]) -> bool:
        return key in self.buckets[self.hash_fn(key) % self.bucket_count]

    def __len__(self) -> int:
        return self.size

    def _grow(self) -> None:
        self._rehash(self.bucket_count * 2)

    def _rehash(self, bucket_count: int) -> None:
        old = self.buckets
        self.bucket_count = bucket_count
        self.buckets = [{} for _ in range(bucket_count)]
        for d in old:
            for key, loc in d.items():
                self.buckets[self.hash_fn(key) % bucket_count][key] = loc


@dataclass
class FinalLog:
    entries: list[UpdateLogEntry] = field(default_factory=list)
    commit_times: list[float] = field(default_factory=list)
    capacity: int = FINAL_LOG_CAPACITY
    # True when every entry at or below the merge bound has been taken
    exhausted: bool = True

    def __len__(self) -> int:
        return len(self.entries)

    def commit_ids(self) -> list[int]:
        return [e.commit_id for e in self.entries]


LogSource = Union[UpdateLog, Sequence[UpdateLogEntry]]


def merge_logs(
    logs: Sequence[LogSource], capacity: int = FINAL_LOG_CAPACITY, upto: Optional[int] = None
) -> FinalLog:
    """k-way merge of commit-ordered logs into one final log.

    Only entries with ``commit_id <= upto`` are taken, at most ``capacity`` of
    them, and all entries of one commit id travel together.  ``UpdateLog``
    inputs are drained by the amount taken; plain sequences are left alone.
    """
    inputs = []
    for src in logs:
        if isinstance(src, UpdateLog):
            inputs.append((src.entries, src.commit_times, src.shipped, len(src.entries)))
        else:
            inputs.append((src, None, 0, len(src)))
    bound = upto if upto is not None else float("inf")
    pos = [start for _, _, start, _ in inputs]
    heap = []
    for i, (entries, _, start, end) in enumerate(inputs):
        if start < end and entries[start].commit_id <= bound:
            heap.append((entries[start].commit_id, i))
    heapq.heapify(heap)
    out: list[UpdateLogEntry] = []
    times: list[float] = []
    exhausted = True
    while heap:
        cid, i = heap[0]
        entries, ctimes, _, end = inputs[i]
        p = pos[i]
        j = p + 1
        while j < end and entries[j].commit_id == cid:
            j += 1
        if len(out) + (j - p) > capacity:
            if not out:
                raise ValueError(
                    f"commit {cid} carries {j - p} entries, more than capacity {capacity}"
                )
            exhausted = False
            break
        out.extend(entries[p:j])
        if ctimes is not None:
            times.extend(ctimes[p:j])
        pos[i] = j
        if j < end and entries[j].commit_id <= bound:
            heapq.heapreplace(heap, (entries[j].commit_id, i))
        else:
            heapq.heappop(heap)
    for src, (_, _, start, _), p in zip(logs, inputs, pos):
        if isinstance(src, UpdateLog) and p > start:
            src.consume(p - start)
    if len(times) != len(out):
        times = []
    return FinalLog(out, times, capacity, exhausted)


class ColumnUpdate(NamedTuple):
    offset: int
    kind: UpdateKind
    payload: Optional[int]
    commit_id: int


@dataclass
class ColumnBuffer:
    key: tuple[int, int, int]  # (table_id, column_id, vault_group_id)
    updates: list[ColumnUpdate] = field(default_factory=list)
    commit_times: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.updates)


class ReorderBuffer:
    """Completion buffer that releases results strictly in sequence order."""

    def __init__(self, size: int) -> None:
        self.slots: list = [None] * size
        self.done = [False] * size
        self.next_out = 0

    def complete(self, seq: int, result) -> list:
        self.slots[seq] = result
        self.done[seq] = True
        released = []
        while self.next_out < len(self.slots) and self.done[self.next_out]:
            released.append(self.slots[self.next_out])
            self.next_out += 1
        return released


@dataclass
class ShipResult:
    buffers: dict[tuple[int, int, int], ColumnBuffer]
    orphans: int = 0
    delivered: int = 0
    ship_seconds: float = 0.0


class Shipper:
    """Routes final-log entries to per-column buffers through ``TargetIndex``es.

    ``locate_insert(table_id, row_id)`` gives the location a freshly inserted
    row lands on; inserts register their key on first sight.
    """

    def __init__(
        self,
        locate_insert: Callable[[int, int], Location],
        lanes: int = PROBE_LANES,
        hash_fn: Optional[Callable[[tuple[int, int, int]], int]] = None,
    ) -> None:
        self.locate_insert = locate_insert
        self.lanes = lanes
        self.hash_fn = hash_fn
        self.indexes: dict[tuple[int, int], TargetIndex] = {}
        self.orphans = 0

    def add_column(self, table_id: int, column_id: int, capacity: int) -> TargetIndex:
        idx = TargetIndex(capacity, self.hash_fn)
        self.indexes[(table_id, column_id)] = idx
        return idx

    def register_existing(
        self, table_id: int, column_ids: Iterable[int], locations: Sequence[Location]
    ) -> None:
        rows = np.arange(len(locations), dtype=np.int64)
        for c in column_ids:
            self.indexes[(table_id, c)].register_rows(table_id, c, rows, locations)

    def _probe(self, block: Sequence[UpdateLogEntry]) -> list[Optional[Location]]:
        """Locate every entry of one lane's block; ``None`` marks an orphan."""
        if not block:
            return []
        if self.hash_fn is None:
            keys = np.fromiter((pack_key(*e.key) for e in block), dtype=np.uint64, count=len(block))
            hashes = splitmix64_array(keys).tolist()
        else:
            hashes = [self.hash_fn(e.key) for e in block]
        out: list[Optional[Location]] = []
        indexes = self.indexes
        for e, h in zip(block, hashes):
            idx = indexes.get((e.key[0], e.key[2]))
            out.append(None if idx is None else idx.buckets[h % idx.bucket_count].get(e.key))
        return out

    def ship(self, final: FinalLog) -> ShipResult:
        t0 = time.perf_counter()
        entries = final.entries
        n = len(entries)
        # Inserts register in log order before any probing, so a later modify
        # of the same key always finds it regardless of lane scheduling.
        for e in entries:
            if e.kind == UpdateKind.INSERT:
                idx = self.indexes[(e.key[0], e.key[2])]
                if e.key not in idx:
                    idx.register(e.key, self.locate_insert(e.key[0], e.key[1]))
        chunk = -(-n // self.lanes) if n else 0
        rob = ReorderBuffer(self.lanes)
        ordered: list = []
        # lanes run one after another in reverse, so completions arrive out of order
        for lane in reversed(range(self.lanes)):
            block = entries[lane * chunk : (lane + 1) * chunk]
            for part in rob.complete(lane, self._probe(block)):
                ordered.extend(part)
        buffers: dict[tuple[int, int, int], ColumnBuffer] = {}
        orphans = 0
        times = final.commit_times
        for seq, (e, loc) in enumerate(zip(entries, ordered)):
            if loc is None:
                orphans += 1
                continue
            bkey = (e.key[0], e.key[2], loc.group)
            buf = buffers.get(bkey)
            if buf is None:
                buf = buffers[bkey] = ColumnBuffer(bkey)
            buf.updates.append(ColumnUpdate(loc.offset, e.kind, e.payload, e.commit_id))
            if times:
                buf.commit_times.append(times[seq])
        self.orphans += orphans
        return ShipResult(buffers, orphans, n - orphans, time.perf_counter() - t0)


def shipping_trigger(
    pending: int,
    threshold: int = FINAL_LOG_CAPACITY,
    *,
    last_ship: Optional[float] = None,
    staleness_s: Optional[float] = 0.010,
    now: Optional[float] = None,
) -> bool:
    if pending >= threshold:
        return True
    if pending <= 0 or staleness_s is None or last_ship is None:
        return False
    now = time.perf_counter() if now is None else now
    return now - last_ship >= staleness_s

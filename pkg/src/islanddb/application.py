"""Update application on dictionary-encoded columns, plus atomic publication.

Two paths produce identical column versions:

* ``apply_batch``: sort and dedupe only the batch payloads, merge that small
  dictionary into the old one in one linear pass, and move every old code
  through an old-code -> new-code remap table.  Work is O(n + m).
* ``naive_apply``: decode the whole column, apply the updates, sort the full
  value set to rebuild the dictionary and re-encode every value by binary
  search.  Work is O((n + m) log(n + m)).

Dictionary retention is shared: the new dictionary is the old one plus every
insert/modify payload in the batch, and it is compacted to the live distinct
values only when it grows past ``rebuild_factor`` times that count.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .shipping import ColumnUpdate
from .storage import ColumnVersion, Dictionary, EncodedColumn, StorageError, decode_values
from .txn import UpdateKind

MAX_BATCH = 1024
DEFAULT_REBUILD_FACTOR = 2.0


class CorruptBatchError(StorageError):
    """A batch cannot be applied to the column it targets; nothing was changed."""


@dataclass
class LookupCounter:
    lookups: int = 0
    comparisons: int = 0

    def add(self, other: "LookupCounter") -> None:
        self.lookups += other.lookups
        self.comparisons += other.comparisons


@dataclass
class UpdateBatch:
    key: tuple
    updates: list[ColumnUpdate] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.updates) > MAX_BATCH:
            raise CorruptBatchError(f"batch of {len(self.updates)} exceeds {MAX_BATCH} updates")
        cids = [u.commit_id for u in self.updates]
        if any(b < a for a, b in zip(cids, cids[1:])):
            raise CorruptBatchError("batch is not commit-ordered")

    def __len__(self) -> int:
        return len(self.updates)

    def payloads(self) -> list[int]:
        return [u.payload for u in self.updates if u.kind != UpdateKind.DELETE]


@dataclass(frozen=True)
class RemapIndex:
    """``old_to_new[c]`` is the new code of old code ``c``."""

    old_to_new: np.ndarray

    def __getitem__(self, code: int) -> int:
        return int(self.old_to_new[code])

    def __len__(self) -> int:
        return int(self.old_to_new.size)

    def as_dict(self) -> dict[int, int]:
        return {i: int(v) for i, v in enumerate(self.old_to_new.tolist())}


def build_update_dictionary(batch: UpdateBatch) -> Dictionary:
    payloads = batch.payloads()
    return Dictionary.from_sorted(np.unique(np.asarray(payloads, dtype=np.int64)))


def _linear_merge(
    a: np.ndarray, b: np.ndarray, counter: Optional[LookupCounter]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Merge two strictly ascending arrays; return (union, pos_of_a, pos_of_b).

    A stable merge of two sorted runs (numpy's timsort detects the runs and
    merges them linearly), then adjacent duplicates collapse into one code.
    Each emitted element costs one comparison.
    """
    both = np.concatenate([a, b])
    order = np.argsort(both, kind="stable")
    merged = both[order]
    if counter is not None:
        counter.comparisons += int(both.size)
        counter.lookups += int(both.size)
    if merged.size:
        fresh = np.empty(merged.size, dtype=bool)
        fresh[0] = True
        np.not_equal(merged[1:], merged[:-1], out=fresh[1:])
        code_sorted = np.cumsum(fresh) - 1
    else:
        fresh = np.zeros(0, dtype=bool)
        code_sorted = np.zeros(0, dtype=np.int64)
    code = np.empty(both.size, dtype=np.int64)
    code[order] = code_sorted
    return merged[fresh], code[: a.size], code[a.size :]


def merge_dictionaries(
    old: Dictionary, upd: Dictionary, counter: Optional[LookupCounter] = None
) -> tuple[Dictionary, RemapIndex]:
    union, remap, _ = _linear_merge(old.values, upd.values, counter)
    return Dictionary.from_sorted(union), RemapIndex(remap)


def _resolve_modifies(version: ColumnVersion, batch: UpdateBatch, old_valid: np.ndarray):
    """Vectorized ``_resolve`` for the common all-modify, all-live batch; else None."""
    offs, kinds, payloads, cids = zip(*batch.updates)
    if any(k != UpdateKind.MODIFY for k in kinds):
        return None
    offs_a = np.asarray(offs, dtype=np.int64)
    if offs_a.min() < 0 or offs_a.max() >= version.length or not old_valid[offs_a].all():
        return None
    m = offs_a.size
    uniq, first_in_reversed = np.unique(offs_a[::-1], return_index=True)
    slots = (m - 1 - first_in_reversed).astype(np.int64)
    max_cid = max(version.created_at, max(cids))
    return old_valid, version.length, uniq, slots, np.asarray(payloads, dtype=np.int64), max_cid


def _resolve(version: ColumnVersion, batch: UpdateBatch):
    """Validate a batch against the column and fold it into final per-offset effects.

    Returns (old_valid, length, offsets, live, value_slot, payload_list, max_cid)
    where ``value_slot[i]`` indexes ``payload_list`` for live effects.
    """
    n = version.length
    m = len(batch)
    old_valid = version.column.valid()
    fast = _resolve_modifies(version, batch, old_valid)
    if fast is not None:
        return fast
    state: dict[int, Optional[int]] = {}
    payloads: list[int] = []
    length = n
    max_cid = version.created_at
    for off, kind, payload, cid in batch.updates:
        if off < 0 or off >= n + m:
            raise CorruptBatchError(f"offset {off} outside column of {n} rows (+{m} updates)")
        if off in state:
            live = state[off] is not None
        else:
            live = off < n and bool(old_valid[off])
        if kind == UpdateKind.INSERT:
            if off < n or live:
                raise CorruptBatchError(f"insert at occupied offset {off}")
            state[off] = len(payloads)
            payloads.append(int(payload))
            length = max(length, off + 1)
        elif kind == UpdateKind.MODIFY:
            if not live:
                raise CorruptBatchError(f"modify of dead offset {off}")
            state[off] = len(payloads)
            payloads.append(int(payload))
        elif kind == UpdateKind.DELETE:
            if not live:
                raise CorruptBatchError(f"delete of dead offset {off}")
            state[off] = None
        else:
            raise CorruptBatchError(f"unknown update kind {kind!r}")
        if cid > max_cid:
            max_cid = cid
    offsets = np.fromiter(state.keys(), dtype=np.int64, count=len(state))
    slots = np.fromiter(
        (-1 if s is None else s for s in state.values()), dtype=np.int64, count=len(state)
    )
    return old_valid, length, offsets, slots, np.asarray(payloads, dtype=np.int64), max_cid


def _finish(codes, valid, dictionary: Dictionary, created_at: int) -> ColumnVersion:
    column = EncodedColumn.from_codes(codes, valid, dictionary.code_width_bits)
    return ColumnVersion(dictionary, column, created_at)


def apply_batch(
    version: ColumnVersion,
    batch: UpdateBatch,
    rebuild_factor: float = DEFAULT_REBUILD_FACTOR,
    counter: Optional[LookupCounter] = None,
) -> ColumnVersion:
    """Optimized two-stage application; returns a new, unpublished version."""
    if not batch.updates:
        return ColumnVersion(version.dictionary, version.column, version.created_at)
    old_valid, length, offsets, slots, payloads, max_cid = _resolve(version, batch)
    n = version.length
    c = counter if counter is not None else LookupCounter()

    # stage 1: dictionary of the updates alone, then one linear merge
    upd_values, upd_inverse = np.unique(payloads, return_inverse=True)
    union, old_to_new, upd_to_new = _linear_merge(version.dictionary.values, upd_values, c)

    # stage 2: push every surviving old code through the remap index
    old_codes = version.column.codes()
    keep = old_valid.copy()
    touched_old = offsets[offsets < n]
    keep[touched_old] = False
    codes = np.zeros(length, dtype=np.int64)
    valid = np.zeros(length, dtype=bool)
    codes[:n][keep] = old_to_new[old_codes[keep]]
    valid[:n] = keep
    c.lookups += int(keep.sum())
    live = slots >= 0
    codes[offsets[live]] = upd_to_new[upd_inverse[slots[live]]]
    valid[offsets[live]] = True
    c.lookups += int(live.sum())

    used = np.zeros(union.size, dtype=bool)
    used[codes[valid]] = True
    n_live_distinct = int(used.sum())
    if union.size > rebuild_factor * n_live_distinct:
        relabel = np.cumsum(used) - 1
        codes[valid] = relabel[codes[valid]]
        c.lookups += int(valid.sum())
        union = union[used]
    return _finish(codes, valid, Dictionary.from_sorted(union), max_cid)


def counted_searchsorted(
    values: np.ndarray, x: np.ndarray, counter: Optional[LookupCounter] = None
) -> np.ndarray:
    """Lower-bound binary search, one vectorized probe round at a time.

    Every element probes the dictionary once per round until its interval
    closes; each probe is counted as one dictionary lookup.
    """
    d = values.size
    lo = np.zeros(x.size, dtype=np.int64)
    hi = np.full(x.size, d, dtype=np.int64)
    if d == 0:
        return lo
    probes = 0
    for _ in range(math.ceil(math.log2(d + 1))):
        active = lo < hi
        k = int(active.sum())
        if k == 0:
            break
        probes += k
        mid = (lo + hi) >> 1
        less = values[np.minimum(mid, d - 1)] < x
        lo = np.where(active & less, mid + 1, lo)
        hi = np.where(active & ~less, mid, hi)
    if counter is not None:
        counter.lookups += probes
        counter.comparisons += probes
    return lo


def naive_apply(
    version: ColumnVersion,
    batch: UpdateBatch,
    rebuild_factor: float = DEFAULT_REBUILD_FACTOR,
    counter: Optional[LookupCounter] = None,
) -> ColumnVersion:
    """Decompress, apply, sort, recompress."""
    if not batch.updates:
        return ColumnVersion(version.dictionary, version.column, version.created_at)
    _, length, offsets, slots, payloads, max_cid = _resolve(version, batch)
    n = version.length
    c = counter if counter is not None else LookupCounter()

    old_values, old_valid = decode_values(version.dictionary, version.column)
    c.lookups += int(old_valid.sum())
    values = np.zeros(length, dtype=np.int64)
    valid = np.zeros(length, dtype=bool)
    values[:n] = old_values
    valid[:n] = old_valid
    live = slots >= 0
    values[offsets[live]] = payloads[slots[live]]
    valid[offsets] = live

    live_values = values[valid]
    everything = np.concatenate([live_values, version.dictionary.values, payloads])
    dict_values = np.unique(everything)  # full sort of the column plus retained entries
    live_distinct = np.unique(live_values)
    if dict_values.size > rebuild_factor * live_distinct.size:
        dict_values = live_distinct
    codes = np.zeros(length, dtype=np.int64)
    codes[valid] = counted_searchsorted(dict_values, live_values, c)
    return _finish(codes, valid, Dictionary.from_sorted(dict_values), max_cid)


ColumnKey = tuple[int, int]  # (table_id, column_id)


@dataclass(frozen=True)
class ReplicaState:
    versions: Mapping[ColumnKey, ColumnVersion]
    cutoff: int


class MainReplica:
    """The analytical island's current column versions.

    The whole state object is replaced on every publication, so a reader that
    loads ``state`` once sees one consistent set of versions and their cutoff.
    Only publishers take ``_lock``; readers never block.
    """

    def __init__(self, versions: Optional[Mapping[ColumnKey, ColumnVersion]] = None, cutoff: int = 0):
        self.state = ReplicaState(dict(versions or {}), cutoff)
        self._lock = threading.Lock()
        self.on_publish: list[Callable[[Sequence[ColumnKey]], None]] = []
        self.publications = 0

    def get(self, key: ColumnKey) -> ColumnVersion:
        return self.state.versions[key]

    @property
    def cutoff(self) -> int:
        return self.state.cutoff

    def keys(self) -> list[ColumnKey]:
        return list(self.state.versions)

    def publish(self, key: ColumnKey, version: ColumnVersion) -> None:
        self.publish_round({key: version}, None)

    def publish_round(
        self, versions: Mapping[ColumnKey, ColumnVersion], cutoff: Optional[int]
    ) -> None:
        with self._lock:
            old = self.state
            merged = dict(old.versions)
            merged.update(versions)
            new_cutoff = old.cutoff if cutoff is None else max(old.cutoff, cutoff)
            self.state = ReplicaState(merged, new_cutoff)
            self.publications += 1
            keys = list(versions)
        for cb in self.on_publish:
            cb(keys)

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from islanddb.shipping import (
    FinalLog,
    Location,
    OrphanUpdateError,
    ReorderBuffer,
    Shipper,
    TargetIndex,
    default_hash,
    merge_logs,
    next_pow2,
    pack_key,
    shipping_trigger,
    splitmix64,
    splitmix64_array,
)
from islanddb.txn import UpdateKind, UpdateLog, UpdateLogEntry


def mod(cid, col=0, row=0, payload=0):
    return UpdateLogEntry(cid, UpdateKind.MODIFY, payload, (0, row, col))


def random_logs(rng, k=8, per=128, max_group=3):
    """k sorted logs, cids unique per commit, each commit owned by one log."""
    logs = [[] for _ in range(k)]
    cid = 0
    while any(len(l) < per for l in logs):
        owner = rng.choice([i for i, l in enumerate(logs) if len(l) < per])
        cid += rng.randint(1, 3)
        for _ in range(min(rng.randint(1, max_group), per - len(logs[owner]))):
            logs[owner].append(mod(cid, rng.randrange(8), rng.randrange(100), rng.randrange(50)))
    return logs


def test_two_way_merge_example():
    out = merge_logs([[mod(1), mod(4)], [mod(2), mod(3)]])
    assert out.commit_ids() == [1, 2, 3, 4]


def test_empty_logs_merge_to_empty():
    out = merge_logs([[], [], []])
    assert out.entries == [] and out.exhausted


def test_eight_log_merge_matches_sort():
    rng = random.Random(3)
    logs = random_logs(rng)
    out = merge_logs(logs, capacity=1024)
    assert out.entries == sorted((e for l in logs for e in l), key=lambda e: e.commit_id)


def test_merge_respects_capacity_and_keeps_groups_whole():
    logs = [[mod(1), mod(1), mod(3)], [mod(2), mod(2)]]
    out = merge_logs(logs, capacity=4)
    assert out.commit_ids() == [1, 1, 2, 2]
    assert not out.exhausted
    with pytest.raises(ValueError):
        merge_logs([[mod(1)] * 5], capacity=4)


def test_merge_drains_update_logs_up_to_bound():
    a, b = UpdateLog(0), UpdateLog(1)
    a.append([mod(1), mod(1)], 0.0)
    b.append([mod(2)], 0.0)
    a.append([mod(3)], 0.0)
    out = merge_logs([a, b], upto=2)
    assert out.commit_ids() == [1, 1, 2]
    assert a.pending() == 1 and b.pending() == 0
    assert merge_logs([a, b]).commit_ids() == [3]


def test_bucket_is_hash_mod_count():
    idx = TargetIndex(16, hash_fn=lambda key: 37)
    assert idx.bucket_count == 16
    assert idx.bucket_of((0, 1, 2)) == 5
    one = TargetIndex(16, hash_fn=default_hash, bucket_count=1)
    for r in range(20):
        one.register((0, r, 0), Location(0, 0, r))
    assert one.bucket_count == 1 and len(one.buckets[0]) == 20


def test_bucket_count_from_partition_size():
    assert TargetIndex(1000).bucket_count == 1024
    assert next_pow2(1) == 1 and next_pow2(1025) == 2048


def test_insert_then_locate_many_keys():
    rng = random.Random(0)
    idx = TargetIndex(64)
    shadow = {}
    for _ in range(10_000):
        key = (rng.randrange(4), rng.randrange(10**6), rng.randrange(8))
        loc = Location(rng.randrange(4), rng.randrange(16), rng.randrange(10**5))
        idx.register(key, loc)
        shadow[key] = loc
    assert len(idx) == len(shadow)
    assert idx.bucket_count > 64  # grew past the load limit
    assert all(idx.locate(k) == v for k, v in shadow.items())


def test_unregistered_locate_is_orphan():
    with pytest.raises(OrphanUpdateError):
        TargetIndex(8).locate((0, 1, 2))


def test_vectorized_hash_matches_scalar():
    keys = [(1, 5, 3), (0, 0, 0), (255, 2**40 - 1, 65535)]
    packed = np.array([pack_key(t, r, c) for t, r, c in keys], dtype=np.uint64)
    assert splitmix64_array(packed).tolist() == [splitmix64(int(p)) for p in packed]


def test_register_rows_matches_register():
    a, b = TargetIndex(100), TargetIndex(100)
    rows = np.arange(300)
    locs = [Location(0, r % 4, r) for r in range(300)]
    a.register_rows(2, 1, rows, locs)
    for r, loc in zip(rows.tolist(), locs):
        b.register((2, r, 1), loc)
    assert [dict(x) for x in a.buckets] == [dict(x) for x in b.buckets]


def test_reorder_buffer_releases_in_sequence():
    rob = ReorderBuffer(4)
    assert rob.complete(2, "c") == []
    assert rob.complete(0, "a") == ["a"]
    assert rob.complete(1, "b") == ["b", "c"]
    assert rob.complete(3, "d") == ["d"]


def _shipper(rows=100, cols=8, groups=2):
    sh = Shipper(lambda t, r: Location(r % groups, r % groups, r))
    for c in range(cols):
        sh.add_column(0, c, rows)
    sh.register_existing(0, range(cols), [Location(r % groups, r % groups, r) for r in range(rows)])
    return sh


def test_ship_partitions_by_column():
    sh = _shipper(groups=1)
    final = FinalLog([mod(1, 0, 1), mod(2, 1, 1), mod(3, 0, 2), mod(4, 1, 3)], [0.0] * 4)
    res = sh.ship(final)
    assert sorted(len(b) for b in res.buffers.values()) == [2, 2]
    assert res.delivered == 4


def test_ship_single_column_keeps_commit_order():
    sh = _shipper(groups=1)
    final = FinalLog([mod(c, 3, c % 50) for c in range(1, 40)], [])
    res = sh.ship(final)
    (buf,) = res.buffers.values()
    assert [u.commit_id for u in buf.updates] == list(range(1, 40))


def test_ship_counts_orphans_and_registers_inserts():
    sh = _shipper(rows=10, cols=1, groups=1)
    entries = [
        UpdateLogEntry(1, UpdateKind.INSERT, 5, (0, 10, 0)),
        UpdateLogEntry(2, UpdateKind.MODIFY, 6, (0, 10, 0)),
        UpdateLogEntry(3, UpdateKind.MODIFY, 6, (0, 77, 0)),
    ]
    res = sh.ship(FinalLog(entries, []))
    assert res.orphans == 1 and res.delivered == 2
    (buf,) = res.buffers.values()
    assert [(u.offset, u.kind) for u in buf.updates] == [(10, UpdateKind.INSERT), (10, UpdateKind.MODIFY)]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_ship_is_stable_partition_of_final_log(seed):
    rng = random.Random(seed)
    entries = [mod(i + 1, rng.randrange(8), rng.randrange(100), rng.randrange(9)) for i in range(1024)]
    res = _shipper().ship(FinalLog(entries, [float(i) for i in range(1024)]))
    seen = []
    for (t, c, g), buf in res.buffers.items():
        expect = [e for e in entries if e.key[2] == c and e.key[1] % 2 == g]
        assert [(u.offset, u.commit_id, u.payload) for u in buf.updates] == [
            (e.key[1], e.commit_id, e.payload) for e in expect
        ]
        assert buf.commit_times == [float(e.commit_id - 1) for e in expect]
        seen.extend(u.commit_id for u in buf.updates)
    assert sorted(seen) == list(range(1, 1025))  # exactly once


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 1024))
def test_merge_property(seed, k, capacity):
    rng = random.Random(seed)
    logs = random_logs(rng, k=k, per=rng.randint(0, 60))
    want = sorted((e for l in logs for e in l), key=lambda e: e.commit_id)
    got = []
    views = [UpdateLog(i) for i in range(k)]
    for v, l in zip(views, logs):
        for e in l:
            v.entries.append(e)
            v.commit_times.append(0.0)
    while True:
        out = merge_logs(views, capacity=max(capacity, 3))
        assert len(out) <= max(capacity, 3)
        if not out.entries:
            break
        got.extend(out.entries)
    assert got == want


def test_trigger_examples():
    assert not shipping_trigger(1023, last_ship=0.0, staleness_s=0.010, now=0.001)
    assert shipping_trigger(1024)
    assert shipping_trigger(1, last_ship=0.0, staleness_s=0.010, now=0.5)
    assert not shipping_trigger(0, last_ship=0.0, staleness_s=0.010, now=0.5)

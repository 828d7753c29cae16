import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchgen import random_batch, random_column
from islanddb.application import (
    CorruptBatchError,
    LookupCounter,
    MainReplica,
    UpdateBatch,
    apply_batch,
    build_update_dictionary,
    counted_searchsorted,
    merge_dictionaries,
    naive_apply,
)
from islanddb.consistency import SnapshotManager, encode_rows
from islanddb.shipping import ColumnUpdate
from islanddb.storage import ColumnVersion, Dictionary, EncodedColumn, decode_column
from islanddb.txn import UpdateKind

MOD, INS, DEL = UpdateKind.MODIFY, UpdateKind.INSERT, UpdateKind.DELETE


def version_of(dict_values, codes, created_at=0):
    d = Dictionary.from_sorted(dict_values)
    col = EncodedColumn.from_codes(np.array(codes), np.ones(len(codes), bool), d.code_width_bits)
    return ColumnVersion(d, col, created_at)


def batch(*updates):
    return UpdateBatch((0, 0, 0), [ColumnUpdate(*u) for u in updates])


def decoded(v):
    return decode_column(v.dictionary, v.column)


def oracle_apply(version, b):
    """Row-at-a-time replay: the plainest possible statement of batch semantics."""
    cells = dict(enumerate(decoded(version)))
    for off, kind, payload, _ in b.updates:
        cells[off] = None if kind == DEL else payload
    length = max(cells) + 1 if cells else 0
    return [cells.get(i) for i in range(length)]


def test_update_dictionary_examples():
    assert build_update_dictionary(batch((0, MOD, 15, 1), (1, MOD, 20, 2), (2, MOD, 15, 3))).values.tolist() == [15, 20]
    assert build_update_dictionary(batch((0, MOD, 5, 1))).values.tolist() == [5]
    rng = np.random.default_rng(1)
    pay = rng.integers(0, 500, 1024).tolist()
    b = UpdateBatch((0, 0, 0), [ColumnUpdate(i, MOD, p, i + 1) for i, p in enumerate(pay)])
    assert build_update_dictionary(b).values.tolist() == sorted(set(pay))


def test_merge_dictionaries_example():
    c = LookupCounter()
    new, remap = merge_dictionaries(Dictionary.from_sorted([10, 20, 30]), Dictionary.from_sorted([15, 20]), c)
    assert new.values.tolist() == [10, 15, 20, 30]
    assert new.code_width_bits == 2
    assert remap.as_dict() == {0: 0, 1: 2, 2: 3}
    assert c.comparisons <= 3 + 2


def test_merge_with_empty_update_is_identity():
    new, remap = merge_dictionaries(Dictionary.from_sorted([10]), Dictionary.from_sorted([]))
    assert new.values.tolist() == [10] and remap.as_dict() == {0: 0}


@settings(max_examples=100, deadline=None)
@given(st.sets(st.integers(-1000, 1000), max_size=500), st.sets(st.integers(-1000, 1000), max_size=300))
def test_merge_dictionaries_property(old, upd):
    c = LookupCounter()
    new, remap = merge_dictionaries(Dictionary.from_sorted(sorted(old)), Dictionary.from_sorted(sorted(upd)), c)
    union = sorted(old | upd)
    assert new.values.tolist() == union
    olds = sorted(old)
    got = [remap[i] for i in range(len(olds))]
    assert [union[g] for g in got] == olds
    assert got == sorted(got)  # order preserving
    assert c.comparisons <= len(old) + len(upd)


def test_apply_example_modify():
    v = version_of([10, 20, 30], [0, 1, 2, 1])
    for fn in (apply_batch, naive_apply):
        out = fn(v, batch((1, MOD, 15, 7)))
        assert out.dictionary.values.tolist() == [10, 15, 20, 30]
        assert out.column.codes().tolist() == [0, 1, 3, 2]
        assert out.created_at == 7


def test_empty_batch_keeps_content():
    v = version_of([10, 20], [0, 1])
    out = apply_batch(v, batch())
    assert out.same_content(v) and out.version_id != v.version_id


def test_insert_and_delete():
    v = version_of([10, 20], [0, 1])
    out = apply_batch(v, batch((2, INS, 5, 1), (0, DEL, None, 2)))
    assert decoded(out) == [None, 20, 5]


def test_last_write_wins_within_batch():
    v = version_of([1], [0, 0])
    out = apply_batch(v, batch((1, MOD, 5, 1), (1, MOD, 9, 2)))
    assert decoded(out) == [1, 9]


@pytest.mark.parametrize(
    "bad",
    [
        [(5, MOD, 1, 1)],  # beyond column and batch
        [(0, INS, 1, 1)],  # insert over a live row
        [(0, DEL, None, 1), (0, DEL, None, 2)],  # double delete
        [(0, DEL, None, 1), (0, MOD, 3, 2)],  # modify of dead row
        [(-1, MOD, 1, 1)],
    ],
)
def test_corrupt_batches_rejected(bad):
    v = version_of([10, 20], [0, 1])
    for fn in (apply_batch, naive_apply):
        with pytest.raises(CorruptBatchError):
            fn(v, batch(*bad))
    assert decoded(v) == [10, 20]


def test_batch_validation():
    with pytest.raises(CorruptBatchError):
        batch((0, MOD, 1, 2), (0, MOD, 1, 1))
    with pytest.raises(CorruptBatchError):
        UpdateBatch((0, 0, 0), [ColumnUpdate(0, MOD, 1, i) for i in range(1025)])


def test_single_row_single_update():
    v = encode_rows(np.array([4]), np.array([True]), 0)
    for b in (batch((0, MOD, 4, 1)), batch((0, MOD, 9, 1)), batch((1, INS, 2, 1))):
        a, n = apply_batch(v, b), naive_apply(v, b)
        assert a.same_content(n)
        assert len(a.dictionary) in (1, 2)


def test_dictionary_retains_then_compacts():
    v = version_of([1, 2, 3, 4], [0, 1, 2, 3])
    out = apply_batch(v, batch((0, MOD, 9, 1)))
    # 5 entries for 4 live distinct values: kept while under 2x
    assert out.dictionary.values.tolist() == [1, 2, 3, 4, 9]
    v = version_of([1, 2, 3], [0, 1, 2])
    out = apply_batch(v, batch((0, MOD, 7, 1), (1, MOD, 7, 2), (2, MOD, 7, 3)))
    # [1, 2, 3, 7] for one live distinct value: 4 > 2 -> compact
    assert out.dictionary.values.tolist() == [7]
    assert out.column.codes().tolist() == [0, 0, 0]


def test_counted_searchsorted_matches_numpy():
    rng = np.random.default_rng(0)
    vals = np.unique(rng.integers(0, 10**6, 5000))
    x = rng.choice(vals, 2000)
    c = LookupCounter()
    assert np.array_equal(counted_searchsorted(vals, x, c), np.searchsorted(vals, x))
    assert c.lookups >= 2000 * 12


def test_large_column_equivalence_example():
    rng = np.random.default_rng(7)
    v = random_column(rng, 100_000, 50_000)
    b = random_batch(rng, v, 1024, 50_000)
    a, n = apply_batch(v, b), naive_apply(v, b)
    assert a.dictionary == n.dictionary
    assert a.same_content(n)
    assert decoded(a) == oracle_apply(v, b)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 300), st.integers(0, 120), st.sampled_from([3, 50, 10**6]))
def test_apply_matches_naive_and_replay(seed, n, m, high):
    rng = np.random.default_rng(seed)
    v = random_column(rng, n, high, dead_frac=0.2)
    b = random_batch(rng, v, m, high)
    a, naive = apply_batch(v, b), naive_apply(v, b)
    assert a.dictionary == naive.dictionary
    assert a.same_content(naive)
    assert decoded(a) == oracle_apply(v, b)
    assert a.column.width == a.dictionary.code_width_bits


def test_publish_and_dirty_flag():
    v1 = version_of([1], [0])
    main = MainReplica({(0, 0): v1})
    snaps = SnapshotManager(main)
    v2, v3 = version_of([2], [0]), version_of([3], [0])
    main.publish((0, 0), v2)
    assert main.get((0, 0)).version_id == v2.version_id
    main.publish((0, 0), v3)
    assert main.get((0, 0)) is v3
    assert snaps.meta[(0, 0)].dirty


def test_concurrent_reads_never_torn():
    keys = [(0, c) for c in range(4)]
    rounds = [{k: version_of([r * 10 + k[1]], [0], r) for k in keys} for r in range(200)]
    main = MainReplica(rounds[0], cutoff=0)
    stop = threading.Event()
    bad = []

    def reader():
        for _ in range(1000):
            state = main.state  # one atomic load
            cutoffs = {state.versions[k].created_at for k in keys}
            if len(cutoffs) != 1 or cutoffs != {state.cutoff}:
                bad.append(cutoffs)

    def writer():
        for r in range(1, 200):
            main.publish_round(rounds[r], r)
        stop.set()

    ts = [threading.Thread(target=reader) for _ in range(4)] + [threading.Thread(target=writer)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert not bad

"""Random (column, batch) pairs shared by the application tests."""

import numpy as np

from islanddb.application import UpdateBatch
from islanddb.consistency import encode_rows
from islanddb.shipping import ColumnUpdate
from islanddb.txn import UpdateKind


def random_column(rng: np.random.Generator, n: int, value_high: int, dead_frac: float = 0.05):
    values = rng.integers(0, value_high, n)
    valid = rng.random(n) >= dead_frac
    if n:
        valid[0] = True
    return encode_rows(values, valid, 0)


def random_batch(
    rng: np.random.Generator, version, m: int, value_high: int, mix=(0.8, 0.1, 0.1)
) -> UpdateBatch:
    """``m`` commit-ordered modify/delete/insert updates that are valid in sequence."""
    n = version.length
    _, valid = version.values()
    live = set(np.flatnonzero(valid).tolist())
    next_insert = n
    updates = []
    cid = version.created_at
    p_mod, p_del, _ = mix
    for _ in range(m):
        cid += int(rng.integers(1, 3))
        u = rng.random()
        if live and u < p_mod:
            off = _pick(rng, live, next_insert)
            updates.append(ColumnUpdate(off, UpdateKind.MODIFY, int(rng.integers(0, value_high)), cid))
        elif live and u < p_mod + p_del:
            off = _pick(rng, live, next_insert)
            live.discard(off)
            updates.append(ColumnUpdate(off, UpdateKind.DELETE, None, cid))
        else:
            off = next_insert
            next_insert += 1
            live.add(off)
            updates.append(ColumnUpdate(off, UpdateKind.INSERT, int(rng.integers(0, value_high)), cid))
    return UpdateBatch((0, 0, 0), updates)


def _pick(rng, live: set, bound: int) -> int:
    if 4 * len(live) < bound:
        return int(rng.choice(sorted(live)))
    while True:
        off = int(rng.integers(0, bound))
        if off in live:
            return off

import pytest

from islanddb.application import apply_batch, naive_apply
from islanddb.bench.runner import run_synthetic
from islanddb.bench.workloads import WorkloadSpec
from islanddb.engine import (
    ALL_MODES,
    ConfigError,
    EngineConfig,
    MiNaiveEngine,
    PolynesiaEngine,
    build_engine,
)
from islanddb.reference import evaluate
from islanddb.storage import Insert, Modify, TableSchema
from islanddb.txn import Read
from islanddb.verify import check_snapshot_isolation

SCHEMA = [TableSchema.build(0, "t", ["a", "b"])]


def small_config(**kw):
    base = dict(vaults=4, vault_group_size=2, workers_per_vault=1, segment_size=50, txn_threads=2)
    base.update(kw)
    return EngineConfig(**base)


def loaded(mode, rows=200, **kw):
    e = build_engine(mode, SCHEMA, small_config(**kw))
    e.load(0, [(i, i % 7) for i in range(rows)])
    return e.start()


def test_unknown_mode_and_bad_config():
    with pytest.raises(ConfigError):
        build_engine("oracle", SCHEMA)
    for bad in (dict(ship_threshold=2000), dict(vault_group_size=3), dict(placement="far"),
                dict(stealing="sometimes"), dict(txn_threads=0), dict(remote_access_delay_ns=-1)):
        with pytest.raises(ConfigError):
            build_engine("polynesia", SCHEMA, EngineConfig(**bad))
    with pytest.raises(ConfigError):
        EngineConfig.from_mapping({"vaults": 16, "warp": 9})
    assert EngineConfig.from_mapping({"vaults": 8}).vaults == 8


def test_dispatch_per_mode():
    assert PolynesiaEngine.apply_fn is apply_batch
    assert MiNaiveEngine.apply_fn is naive_apply
    replicas = {m: build_engine(m, SCHEMA).two_replicas for m in ALL_MODES}
    assert replicas == {"polynesia": True, "mi-naive": True, "si-ss": False, "si-mvcc": False}


def test_mvcc_mode_routes_tuple_reads_through_chains():
    e = loaded("si-mvcc")
    try:
        assert e.txn.read_hook == e.mvcc.read_latest
        before = e.mvcc.reads
        res = e.submit_txn([Read(0, 5), Modify(0, 3, 1, 40), Read(0, 3)])
        # the untouched row comes from its chain, the own write from the overlay
        assert res.reads == ((5, 5), (3, 40))
        assert e.mvcc.reads == before + 1
        e.submit_txn([Read(0, 3)])
        assert e.mvcc.read_latest(0, 3) == (3, 40)
        e.submit_query("select sum(b) from t")
        assert e.metrics().mvcc_steps > 0
    finally:
        e.stop()


@pytest.mark.parametrize("mode", ALL_MODES)
def test_drained_queries_see_every_commit(mode):
    e = loaded(mode)
    try:
        for i in range(300):
            e.submit_txn([Modify(0, i % 200, 1, i), Insert(0, (i, 1))], i % 2)
        e.drain()
        for q in ("select count(*), sum(b), max(a) from t", "select sum(a) from t where b < 3"):
            plan = e.plan(q)
            assert e.submit_query(q).values == evaluate(plan, e.table_contents())
        if e.two_replicas:
            assert e.analytic_contents() == e.table_contents()
    finally:
        e.stop()


def test_snapshot_copy_mode_counts_bytes():
    e = loaded("si-ss")
    try:
        e.submit_query("select sum(a) from t")
        first = e.metrics().snapshot_bytes
        e.submit_query("select sum(a) from t")
        assert e.metrics().snapshot_bytes == first  # nothing dirty, nothing copied
        e.submit_txn([Modify(0, 0, 0, -5)])
        e.submit_query("select sum(a) from t")
        assert e.metrics().snapshot_bytes > first
    finally:
        e.stop()


def test_lifecycle_errors():
    e = build_engine("polynesia", SCHEMA, small_config(analytics=False))
    e.load(0, [(1, 1)])
    e.start()
    try:
        with pytest.raises(RuntimeError):
            e.load(0, [(2, 2)])
        with pytest.raises(RuntimeError):
            e.submit_query("select count(*) from t")
    finally:
        e.stop()


def test_thread_cap_from_environment(monkeypatch):
    monkeypatch.setenv("ISLANDDB_THREADS", "8")
    e = build_engine("polynesia", SCHEMA, EngineConfig(txn_threads=1))
    # 8 total - 1 txn - 1 shipping agent - 4 application workers
    assert len(e.scheduler.workers) == 2
    monkeypatch.setenv("ISLANDDB_THREADS", "zero")
    with pytest.raises(ConfigError):
        build_engine("polynesia", SCHEMA, EngineConfig())


@pytest.mark.parametrize("mode", ALL_MODES)
def test_concurrent_queries_are_snapshot_consistent(mode):
    spec = WorkloadSpec(txn_threads=2, analytic_threads=2, txn_count=600, query_count=12,
                        rows=300, tables=2, columns=3, seed=11)
    out = run_synthetic(spec, mode, small_config(record_history=True, ship_threshold=64), keep_engine=True)
    try:
        report = check_snapshot_isolation(out.engine)
    finally:
        out.engine.stop()
    assert report.checked == len(out.engine.query_log) >= 24
    assert report.ok, report.mismatches[:3]


def test_modes_agree_on_final_checksum():
    spec = WorkloadSpec(txn_threads=2, analytic_threads=1, txn_count=400, query_count=4,
                        rows=200, tables=2, columns=3, insert_ratio=0.1, delete_ratio=0.1, seed=4)
    sums = {m: run_synthetic(spec, m, small_config()).checksum for m in ALL_MODES}
    assert len(set(sums.values())) == 1, sums


def test_disabled_propagation_leaves_replica_stale():
    e = loaded("polynesia", propagation=False)
    try:
        before = e.submit_query("select sum(b) from t").values
        e.submit_txn([Modify(0, 0, 1, 1000)])
        e.drain()
        assert e.submit_query("select sum(b) from t").values == before
    finally:
        e.stop()


def test_freshness_smoke_bound():
    spec = WorkloadSpec(txn_threads=2, analytic_threads=1, txn_count=1500, query_count=8,
                        write_ratio=0.1, rows=500, tables=2, columns=3, seed=2)
    out = run_synthetic(spec, "polynesia", small_config())
    m = out.metrics
    assert m.freshness_us.size > 0
    timer_us = 10_000.0
    apply_us = max(m.apply_us) if m.apply_us else 0.0
    assert out.row.freshness_p99_us <= 10 * (timer_us + apply_us)

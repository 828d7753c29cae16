"""Run orchestration: start workers, time the phases, collect metrics."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..engine import Engine, EngineConfig, EngineMetrics, build_engine
from ..metrics import BenchRow
from ..storage import NotFoundError
from ..txn import TxnAborted
from ..verify import final_checksum
from .workloads import (
    TxnProgram,
    Workload,
    WorkloadSpec,
    gen_hotspot,
    gen_synthetic,
    gen_tpcc_lite,
    gen_tpch6_lite,
    tpcc_queries,
)


@dataclass
class RunOutcome:
    mode: str
    row: BenchRow
    metrics: EngineMetrics
    txn_seconds: float
    ana_seconds: float
    checksum: str
    engine: Optional[Engine] = None

    @property
    def txn_tput(self) -> float:
        return self.row.txn_tput or 0.0

    @property
    def ana_tput(self) -> float:
        return self.row.ana_tput or 0.0


def drive(engine: Engine, workload: Workload) -> tuple[float, float, int]:
    """Run every stream on its own thread.  Returns (txn s, analytics s, aborts)."""
    n_txn = len(workload.txn_streams)
    n_ana = len(workload.query_streams)
    start = threading.Barrier(n_txn + n_ana + 1)
    ends_txn = [0.0] * n_txn
    ends_ana = [0.0] * n_ana
    errors: list[BaseException] = []
    aborts = [0] * n_txn

    def txn_worker(i: int) -> None:
        stream = workload.txn_streams[i]
        start.wait()
        try:
            for item in stream:
                try:
                    if isinstance(item, TxnProgram):
                        engine.run_txn(i, item.tables, item.body)
                    else:
                        engine.submit_txn(item, i)
                except (NotFoundError, TxnAborted):
                    aborts[i] += 1
        except BaseException as exc:
            errors.append(exc)
        ends_txn[i] = time.perf_counter()

    def ana_worker(i: int) -> None:
        queries = workload.query_streams[i]
        start.wait()
        try:
            for q in queries:
                engine.submit_query(q)
        except BaseException as exc:
            errors.append(exc)
        ends_ana[i] = time.perf_counter()

    threads = [threading.Thread(target=txn_worker, args=(i,), name=f"txn{i}") for i in range(n_txn)]
    threads += [threading.Thread(target=ana_worker, args=(i,), name=f"ana{i}") for i in range(n_ana)]
    for t in threads:
        t.start()
    start.wait()
    t0 = time.perf_counter()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    txn_s = max(ends_txn) - t0 if n_txn else 0.0
    ana_s = max(ends_ana) - t0 if n_ana else 0.0
    return txn_s, ana_s, sum(aborts)


def run_workload(
    mode: str,
    workload: Workload,
    config: EngineConfig,
    *,
    seed: int,
    write_ratio: float,
    txn_count: int,
    query_count: int,
    keep_engine: bool = False,
) -> RunOutcome:
    n_ana = sum(1 for s in workload.query_streams if s)
    config = replace(
        config,
        txn_threads=len(workload.txn_streams),
        analytic_clients=len(workload.query_streams),
        analytics=config.analytics and (n_ana > 0 or bool(workload.verification)),
    )
    engine = build_engine(mode, workload.schemas, config)
    for tid, rows in workload.initial.items():
        engine.load(tid, rows)
    engine.start()
    try:
        txn_s, ana_s, _ = drive(engine, workload)
        engine.drain()
        checksum = final_checksum(engine, workload.verification)
        metrics = engine.metrics()
    finally:
        if not keep_engine:
            engine.stop()
    committed = metrics.committed
    n_queries = sum(len(s) for s in workload.query_streams)
    fr = metrics.freshness_us
    row = BenchRow(
        mode=engine.mode.value,
        seed=seed,
        txn_threads=len(workload.txn_streams),
        analytic_threads=len(workload.query_streams),
        txn_count=txn_count,
        query_count=query_count,
        write_ratio=write_ratio,
        txn_tput=committed / txn_s if txn_s > 0 and committed else None,
        ana_tput=n_queries / ana_s if n_queries and ana_s > 0 else None,
        freshness_mean_us=float(np.mean(fr)) if fr.size else None,
        freshness_p99_us=float(np.percentile(fr, 99)) if fr.size else None,
        ship_latency_us=float(np.mean(metrics.ship_us)) if metrics.ship_us else None,
        apply_latency_us=float(np.mean(metrics.apply_us)) if metrics.apply_us else None,
        dict_lookups=metrics.dict_lookups,
        local_accesses=metrics.accesses.local,
        remote_accesses=metrics.accesses.remote,
        snapshot_bytes=metrics.snapshot_bytes,
        mvcc_steps=metrics.mvcc_steps,
        checksum=checksum,
    )
    return RunOutcome(engine.mode.value, row, metrics, txn_s, ana_s, checksum,
                      engine if keep_engine else None)


def run_synthetic(
    spec: WorkloadSpec, mode: str, config: Optional[EngineConfig] = None, **kw
) -> RunOutcome:
    config = config or EngineConfig()
    spec = spec.capped(config.thread_cap())
    wl = gen_synthetic(spec)
    return run_workload(
        mode, wl, config, seed=spec.seed, write_ratio=spec.write_ratio,
        txn_count=spec.txn_count, query_count=spec.query_count, **kw,
    )


def run_tpcc(
    mode: str,
    *,
    warehouses: int = 1,
    txn_threads: int = 4,
    txn_count: int = 1000,
    analytic_threads: int = 0,
    query_count: int = 0,
    seed: int = 0,
    config: Optional[EngineConfig] = None,
    **kw,
) -> RunOutcome:
    config = config or EngineConfig()
    cap = config.thread_cap()
    if cap is not None:
        txn_threads = max(1, min(txn_threads, cap))
        analytic_threads = max(0, min(analytic_threads, cap - txn_threads))
    wl = gen_tpcc_lite(warehouses, txn_threads, txn_count, seed)
    qs = tpcc_queries()
    wl.query_streams = [
        [qs[(a + k) % len(qs)] for k in range(query_count)] for a in range(analytic_threads)
    ]
    return run_workload(
        mode, wl, config, seed=seed, write_ratio=0.0, txn_count=txn_count,
        query_count=query_count, **kw,
    )


def run_tpch6(
    mode: str,
    *,
    rows: int = 60_000,
    seed: int = 0,
    analytic_threads: int = 1,
    query_count: int = 1,
    config: Optional[EngineConfig] = None,
    **kw,
) -> RunOutcome:
    config = config or EngineConfig()
    cap = config.thread_cap()
    if cap is not None:
        analytic_threads = max(1, min(analytic_threads, cap - 1))
    schema, data, q6 = gen_tpch6_lite(rows, seed)
    wl = Workload([schema], {schema.table_id: data}, [[]], [[q6] * query_count for _ in range(analytic_threads)], [q6])
    return run_workload(
        mode, wl, config, seed=seed, write_ratio=0.0, txn_count=0, query_count=query_count, **kw,
    )


def run_hotspot(
    *,
    placement: str,
    stealing: str,
    rows: int = 64_000,
    analytic_threads: int = 4,
    query_count: int = 8,
    seed: int = 0,
    config: Optional[EngineConfig] = None,
    **kw,
) -> RunOutcome:
    """Analytical throughput when every query hits one column of one table."""
    config = replace(config or EngineConfig(), placement=placement, stealing=stealing)
    cap = config.thread_cap()
    if cap is not None:
        analytic_threads = max(1, min(analytic_threads, cap - 1))
    wl = gen_hotspot(rows, analytic_threads, query_count, seed)
    return run_workload(
        "polynesia", wl, config, seed=seed, write_ratio=0.0, txn_count=0,
        query_count=query_count, **kw,
    )

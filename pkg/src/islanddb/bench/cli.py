"""``islanddb`` command-line driver."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from typing import Optional, Sequence

from ..engine import ALL_MODES, ConfigError, EngineConfig
from ..metrics import BenchRow, read_csv, write_csv
from ..verify import check_snapshot_isolation
from .runner import run_synthetic, run_tpcc, run_tpch6
from .workloads import WorkloadSpec

log = logging.getLogger("islanddb")

ENGINE_CHOICES = list(ALL_MODES) + ["all"]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--engine", choices=ENGINE_CHOICES, default="polynesia")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--txn-threads", type=int, default=4)
    p.add_argument("--analytic-threads", type=int, default=4)
    p.add_argument("--txn-count", type=int, default=1000, help="transactions per txn thread")
    p.add_argument("--query-count", type=int, default=32, help="queries per analytic thread")
    p.add_argument("--write-ratio", type=float, default=0.5)
    p.add_argument("--warehouses", type=int, default=1)
    p.add_argument("--rows", type=int, default=10_000)
    p.add_argument("--vaults", type=int, default=16)
    p.add_argument("--vault-group-size", type=int, default=4)
    p.add_argument("--segment-size", type=int, default=1000)
    p.add_argument("--ship-threshold", type=int, default=1024)
    p.add_argument("--placement", choices=["local", "remote", "hybrid"], default="hybrid")
    p.add_argument("--stealing", choices=["none", "group", "all"], default="all")
    p.add_argument("--remote-delay-ns", type=float, default=0.0)
    p.add_argument("--local-delay-ns", type=float, default=0.0)
    p.add_argument("--disable-analytics", action="store_true",
                   help="run without analytical queries or replica upkeep (ideal-txn)")
    p.add_argument("--disable-propagation", action="store_true",
                   help="never ship updates to the analytical replica (ideal-analytics)")
    p.add_argument("--output", default="-", help="CSV path, '-' for stdout")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="islanddb", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("bench-synthetic", "random read/write transactions plus select/join queries"),
        ("bench-tpcc", "Payment/New-Order mix over a reduced TPC-C schema"),
        ("bench-tpch6", "Q6 revenue query over a Lineitem-shaped table"),
        ("verify", "check query results against log replay and across engines"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "verify":
            p.add_argument("--histories", type=int, default=1,
                           help="number of seeds checked, starting at --seed")
    return ap


def _config(args) -> EngineConfig:
    return EngineConfig(
        txn_threads=max(1, args.txn_threads),
        vaults=args.vaults,
        vault_group_size=args.vault_group_size,
        segment_size=args.segment_size,
        ship_threshold=args.ship_threshold,
        placement=args.placement,
        stealing=args.stealing,
        remote_access_delay_ns=args.remote_delay_ns,
        local_access_delay_ns=args.local_delay_ns,
        analytics=not args.disable_analytics,
        propagation=not args.disable_propagation,
    ).validate()


def _modes(engine: str) -> list[str]:
    return list(ALL_MODES) if engine == "all" else [engine]


def _spec(args, seed: Optional[int] = None) -> WorkloadSpec:
    return WorkloadSpec(
        txn_threads=args.txn_threads,
        analytic_threads=0 if args.disable_analytics else args.analytic_threads,
        txn_count=args.txn_count,
        query_count=0 if args.disable_analytics else args.query_count,
        write_ratio=args.write_ratio,
        rows=args.rows,
        seed=args.seed if seed is None else seed,
    )


def _bench(args) -> list[BenchRow]:
    cfg = _config(args)
    rows = []
    for mode in _modes(args.engine):
        if args.command == "bench-synthetic":
            out = run_synthetic(_spec(args), mode, cfg)
        elif args.command == "bench-tpcc":
            n_ana = 0 if args.disable_analytics else args.analytic_threads
            out = run_tpcc(
                mode, warehouses=args.warehouses, txn_threads=args.txn_threads,
                txn_count=args.txn_count, analytic_threads=n_ana,
                query_count=args.query_count if n_ana else 0, seed=args.seed, config=cfg,
            )
        else:
            out = run_tpch6(
                mode, rows=args.rows, seed=args.seed,
                analytic_threads=max(1, args.analytic_threads),
                query_count=max(1, args.query_count), config=cfg,
            )
        log.info("%s: %.0f txn/s, checksum %s", mode, out.txn_tput, out.checksum)
        rows.append(out.row)
    return rows


def _verify(args) -> tuple[list[BenchRow], bool]:
    cfg = replace(_config(args), record_history=True)
    rows: list[BenchRow] = []
    ok = True
    for seed in range(args.seed, args.seed + max(1, args.histories)):
        sums = set()
        for mode in _modes(args.engine):
            out = run_synthetic(_spec(args, seed), mode, cfg, keep_engine=True)
            try:
                report = check_snapshot_isolation(out.engine)
            finally:
                out.engine.stop()
            if not report.ok:
                ok = False
                for m in report.mismatches[:5]:
                    print(f"seed {seed} {mode}: mismatch {m}", file=sys.stderr)
            print(
                f"seed {seed} {mode}: {report.checked} queries checked, "
                f"{report.distinct_cutoffs} cutoffs, {len(report.mismatches)} mismatches",
                file=sys.stderr,
            )
            sums.add(out.checksum)
            rows.append(out.row)
        if len(sums) > 1:
            ok = False
            print(f"seed {seed}: engines disagree on checksums {sorted(sums)}", file=sys.stderr)
    return rows, ok


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "verify":
            rows, ok = _verify(args)
        else:
            rows, ok = _bench(args), True
    except (ConfigError, ValueError) as exc:
        print(f"islanddb: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # engine failure: report and exit nonzero
        log.debug("run failed", exc_info=True)
        print(f"islanddb: engine error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.output == "-":
        write_csv(rows, sys.stdout)
    else:
        with open(args.output, "w", newline="") as fh:
            write_csv(rows, fh)
    return 0 if ok else 1


__all__ = ["main", "build_parser", "read_csv"]

if __name__ == "__main__":
    sys.exit(main())

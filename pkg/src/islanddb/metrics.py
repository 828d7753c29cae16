"""Benchmark result rows and their CSV schema."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import IO, Iterable, Optional, Sequence

import numpy as np

CSV_FIELDS = (
    "mode",
    "seed",
    "txn_threads",
    "analytic_threads",
    "txn_count",
    "query_count",
    "write_ratio",
    "txn_tput",
    "ana_tput",
    "freshness_mean_us",
    "freshness_p99_us",
    "ship_latency_us",
    "apply_latency_us",
    "dict_lookups",
    "local_accesses",
    "remote_accesses",
    "snapshot_bytes",
    "mvcc_steps",
)
# appended after the fixed schema so positional readers of the first 18 columns still work
EXTRA_FIELDS = ("checksum",)


def _mean(xs) -> Optional[float]:
    return float(np.mean(xs)) if len(xs) else None


def _p99(xs) -> Optional[float]:
    return float(np.percentile(xs, 99)) if len(xs) else None


@dataclass
class BenchRow:
    mode: str
    seed: int
    txn_threads: int
    analytic_threads: int
    txn_count: int
    query_count: int
    write_ratio: float
    txn_tput: Optional[float]
    ana_tput: Optional[float]
    freshness_mean_us: Optional[float]
    freshness_p99_us: Optional[float]
    ship_latency_us: Optional[float]
    apply_latency_us: Optional[float]
    dict_lookups: int
    local_accesses: int
    remote_accesses: int
    snapshot_bytes: int
    mvcc_steps: int
    checksum: str = ""

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS + EXTRA_FIELDS}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def write_csv(rows: Iterable[BenchRow], out: IO[str], header: bool = True) -> None:
    w = csv.writer(out, lineterminator="\n")
    if header:
        w.writerow(CSV_FIELDS + EXTRA_FIELDS)
    for r in rows:
        d = r.as_dict()
        w.writerow([_fmt(d[k]) for k in CSV_FIELDS + EXTRA_FIELDS])


def to_csv(rows: Sequence[BenchRow]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def read_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))

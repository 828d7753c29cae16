"""Correctness checks shared by the test-suite and the ``verify`` CLI command."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .engine import Engine
from .reference import ReplayReplica, checksum_tables, evaluate


@dataclass
class IsolationReport:
    checked: int = 0
    mismatches: list[tuple] = field(default_factory=list)
    distinct_cutoffs: int = 0

    @property
    def ok(self) -> bool:
        return not self.mismatches


def check_snapshot_isolation(engine: Engine) -> IsolationReport:
    """Compare every logged query result with a replay of the log through its cutoff.

    The engine must have been built with ``record_history=True``.
    """
    if not engine.config.record_history:
        raise ValueError("snapshot-isolation checking needs record_history=True")
    entries = engine.history()
    widths = {t: s.schema.width for t, s in engine.txn.stores.items()}
    replica = ReplayReplica(engine.initial_rows)
    report = IsolationReport()
    log = sorted(engine.query_log, key=lambda pr: (pr[1].cutoff, pr[1].query_id))
    report.distinct_cutoffs = len({r.cutoff for _, r in log})
    for plan, res in log:
        replica.replay(entries, res.cutoff, widths)
        expected = replica.evaluate(plan)
        report.checked += 1
        if tuple(expected) != tuple(res.values):
            report.mismatches.append((plan.describe(), res.cutoff, res.values, expected))
    return report


def results_digest(results: Iterable[Sequence]) -> str:
    h = hashlib.blake2b(digest_size=16)
    for r in results:
        h.update(repr(tuple(r)).encode())
    return h.hexdigest()


class ReplicaDivergence(AssertionError):
    """The analytical replica does not match the transactional one after draining."""


def final_checksum(engine: Engine, verification) -> str:
    """Digest of the drained database state plus verification-query answers.

    Verification answers come from the reference evaluator over the row store
    and, when the analytical side is live and fed, must agree with the
    engine's own answers.
    """
    tables = engine.table_contents()
    # without propagation the replica is stale by design; nothing to compare
    compare = engine.config.analytics and (engine.config.propagation or not engine.two_replicas)
    if compare and engine.two_replicas:
        if engine.analytic_contents() != tables:
            raise ReplicaDivergence(f"{engine.mode.value}: analytical replica diverged")
    answers = []
    for q in verification:
        plan = engine.plan(q)
        expected = evaluate(plan, tables)
        if compare:
            got = engine.submit_query(q).values
            if tuple(got) != tuple(expected):
                raise ReplicaDivergence(
                    f"{engine.mode.value}: {plan.describe()} gave {got}, expected {expected}"
                )
        answers.append(expected)
    h = hashlib.blake2b(digest_size=16)
    h.update(checksum_tables(tables).encode())
    h.update(results_digest(answers).encode())
    return h.hexdigest()

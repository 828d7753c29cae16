"""Simulated vault topology and data placement."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence


class Placement(str, Enum):
    LOCAL = "local"
    REMOTE = "remote"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class Worker:
    worker_id: int
    vault: int
    group: int


@dataclass(frozen=True)
class VaultTopology:
    vault_count: int = 16
    group_size: int = 4
    workers_per_vault: int = 4

    def __post_init__(self) -> None:
        if self.vault_count < 1 or self.group_size < 1 or self.workers_per_vault < 1:
            raise ValueError("topology sizes must be positive")
        if self.vault_count % self.group_size:
            raise ValueError(
                f"group size {self.group_size} does not divide vault count {self.vault_count}"
            )

    @property
    def group_count(self) -> int:
        return self.vault_count // self.group_size

    @property
    def groups(self) -> list[tuple[int, ...]]:
        g = self.group_size
        return [tuple(range(i * g, (i + 1) * g)) for i in range(self.group_count)]

    def group_of(self, vault: int) -> int:
        return vault // self.group_size

    def vaults_of(self, group: int) -> tuple[int, ...]:
        g = self.group_size
        return tuple(range(group * g, (group + 1) * g))

    @property
    def workers_per_group(self) -> int:
        return self.group_size * self.workers_per_vault

    def workers(self, cap: int | None = None) -> list[Worker]:
        """Worker pool, vault-major; ``cap`` trims it round-robin across vaults."""
        out = []
        for slot in range(self.workers_per_vault):
            for v in range(self.vault_count):
                out.append((v, slot))
        if cap is not None:
            out = out[: max(1, cap)]
        out.sort()
        return [Worker(i, v, self.group_of(v)) for i, (v, _) in enumerate(out)]


@dataclass(frozen=True)
class TablePlacement:
    """Where a table's columns live.  All columns of a table are co-partitioned.

    Segment ``k`` of every column lives in ``vaults[k % len(vaults)]``.
    ``dict_vaults`` hold a copy of each column's dictionary.  ``home_group``
    is the group whose application worker rebuilds the table's columns.
    """

    table_id: int
    strategy: Placement
    vaults: tuple[int, ...]
    dict_vaults: frozenset[int]
    home_group: int

    def segment_vault(self, segment: int) -> int:
        return self.vaults[segment % len(self.vaults)]

    def row_vault(self, row: int, segment_size: int) -> int:
        return self.vaults[(row // segment_size) % len(self.vaults)]

    @property
    def partitions(self) -> int:
        return len(self.vaults)


@dataclass(frozen=True)
class ColumnPlacement:
    partitions: tuple[tuple[int, int], ...]  # (vault, rows held)
    dictionary_replicas: tuple[int, ...]


def place_table(
    table_id: int, topology: VaultTopology, strategy: Placement | str, group: int = 0
) -> TablePlacement:
    strategy = Placement(strategy)
    group %= topology.group_count
    if strategy is Placement.LOCAL:
        v = topology.vaults_of(group)[0]
        return TablePlacement(table_id, strategy, (v,), frozenset({v}), group)
    if strategy is Placement.REMOTE:
        vaults = tuple(range(topology.vault_count))
        return TablePlacement(table_id, strategy, vaults, frozenset({0}), topology.group_of(0))
    vaults = topology.vaults_of(group)
    return TablePlacement(table_id, strategy, vaults, frozenset(vaults), group)


def place_column(
    rows: int,
    topology: VaultTopology,
    strategy: Placement | str,
    group: int = 0,
    segment_size: int = 1000,
) -> ColumnPlacement:
    """Row count per partition for a column of ``rows`` tuples."""
    tp = place_table(0, topology, strategy, group)
    held = {v: 0 for v in tp.vaults}
    nseg = -(-rows // segment_size)
    for k in range(nseg):
        held[tp.segment_vault(k)] += min(segment_size, rows - k * segment_size)
    return ColumnPlacement(tuple(held.items()), tuple(sorted(tp.dict_vaults)))


def assign_placements(
    table_ids: Sequence[int],
    topology: VaultTopology,
    strategy: Placement | str,
    overrides: dict[int, int] | None = None,
) -> dict[int, TablePlacement]:
    """Spread tables across vault groups round-robin (``overrides`` pins a table's group)."""
    overrides = overrides or {}
    out = {}
    for i, t in enumerate(table_ids):
        g = overrides.get(t, i % topology.group_count)
        out[t] = place_table(t, topology, strategy, g)
    return out


@dataclass
class AccessCounters:
    local: int = 0
    remote: int = 0
    local_dict: int = 0
    remote_dict: int = 0

    def add(self, other: "AccessCounters") -> None:
        self.local += other.local
        self.remote += other.remote
        self.local_dict += other.local_dict
        self.remote_dict += other.remote_dict

    @property
    def total(self) -> int:
        return self.local + self.remote

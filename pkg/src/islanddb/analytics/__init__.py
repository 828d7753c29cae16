"""Columnar query planning, placement and scheduling over simulated vaults."""

from .executor import QueryExecutor, segments
from .plan import QueryPlan, plan_query
from .query import Aggregate, Catalog, JoinSpec, PlanningError, Predicate, Query, parse_query
from .scheduler import STEAL_ALL, STEAL_GROUP, STEAL_NONE, Task, TaskError, TaskScheduler
from .topology import (
    AccessCounters,
    Placement,
    TablePlacement,
    VaultTopology,
    assign_placements,
    place_column,
    place_table,
)

__all__ = [
    "AccessCounters",
    "Aggregate",
    "Catalog",
    "JoinSpec",
    "Placement",
    "PlanningError",
    "Predicate",
    "Query",
    "QueryExecutor",
    "QueryPlan",
    "STEAL_ALL",
    "STEAL_GROUP",
    "STEAL_NONE",
    "TablePlacement",
    "Task",
    "TaskError",
    "TaskScheduler",
    "VaultTopology",
    "assign_placements",
    "parse_query",
    "place_column",
    "place_table",
    "plan_query",
    "segments",
]

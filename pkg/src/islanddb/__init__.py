"""In-memory HTAP engine with isolated transactional and analytical replicas."""

from .engine import (
    ALL_MODES,
    ConfigError,
    Engine,
    EngineConfig,
    EngineMode,
    QueryResult,
    build_engine,
)
from .storage import ColumnDef, LogicalType, TableSchema

__all__ = [
    "ALL_MODES",
    "ColumnDef",
    "ConfigError",
    "Engine",
    "EngineConfig",
    "EngineMode",
    "LogicalType",
    "QueryResult",
    "TableSchema",
    "build_engine",
]

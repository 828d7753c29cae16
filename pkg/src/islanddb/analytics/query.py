"""Small structured query format and its text syntax.

Grammar (case-insensitive keywords)::

    select AGG [, AGG]* from T [join U on T.a = U.b] [where PRED [and PRED]*]
    AGG  := count(*) | count(col) | sum(col) | sum(col * col) | min(col) | max(col)
    PRED := col OP int | col between int and int      OP in < <= > >= = !=

Columns may be qualified as ``table.column``; unqualified columns belong to
the ``from`` table.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

from ..storage import NotFoundError, TableSchema

COMPARISONS = ("<", "<=", ">", ">=", "=", "!=")
AGGREGATES = ("count", "sum", "min", "max")


class PlanningError(ValueError):
    """The query references something that does not exist or is unsupported."""


@dataclass(frozen=True)
class Predicate:
    column: str
    op: str
    value: int
    table: Optional[str] = None

    def __post_init__(self) -> None:
        if self.op not in COMPARISONS:
            raise PlanningError(f"unknown comparison {self.op!r}")


@dataclass(frozen=True)
class Aggregate:
    func: str
    columns: tuple[str, ...] = ()  # () for count(*), two names for a product
    table: Optional[str] = None

    def __post_init__(self) -> None:
        if self.func not in AGGREGATES:
            raise PlanningError(f"unknown aggregate {self.func!r}")
        if self.func != "count" and not self.columns:
            raise PlanningError(f"{self.func} needs a column")
        if len(self.columns) > 2:
            raise PlanningError("at most a product of two columns is supported")


@dataclass(frozen=True)
class JoinSpec:
    table: str
    left_column: str
    right_column: str


@dataclass(frozen=True)
class Query:
    table: str
    aggregates: tuple[Aggregate, ...]
    predicates: tuple[Predicate, ...] = ()
    join: Optional[JoinSpec] = None
    text: Optional[str] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.aggregates:
            raise PlanningError("a query needs at least one aggregate")

    def describe(self) -> str:
        if self.text:
            return self.text
        return render_query(self)


class Catalog:
    def __init__(self, schemas: Iterable[TableSchema]) -> None:
        self.by_name: dict[str, TableSchema] = {}
        self.by_id: dict[int, TableSchema] = {}
        for s in schemas:
            self.add(s)

    def add(self, schema: TableSchema) -> None:
        if schema.name in self.by_name or schema.table_id in self.by_id:
            raise ValueError(f"duplicate table {schema.name!r}/{schema.table_id}")
        self.by_name[schema.name] = schema
        self.by_id[schema.table_id] = schema

    def table(self, name: str) -> TableSchema:
        try:
            return self.by_name[name]
        except KeyError:
            raise PlanningError(f"unknown table {name!r}") from None

    def __iter__(self):
        return iter(self.by_id.values())


def _col(ref: str) -> tuple[Optional[str], str]:
    if "." in ref:
        t, c = ref.split(".", 1)
        return t, c
    return None, ref


_SELECT = re.compile(
    r"^\s*select\s+(?P<aggs>.+?)\s+from\s+(?P<table>\w+)"
    r"(?:\s+join\s+(?P<jt>\w+)\s+on\s+(?P<jl>[\w.]+)\s*=\s*(?P<jr>[\w.]+))?"
    r"(?:\s+where\s+(?P<where>.+?))?\s*;?\s*$",
    re.IGNORECASE | re.DOTALL,
)
_AGG = re.compile(r"^\s*(\w+)\s*\(\s*(.*?)\s*\)\s*$")
_BETWEEN = re.compile(r"^\s*([\w.]+)\s+between\s+(-?\d+)\s+and\s+(-?\d+)\s*$", re.IGNORECASE)
_CMP = re.compile(r"^\s*([\w.]+)\s*(<=|>=|!=|<|>|=)\s*(-?\d+)\s*$")


def _split_and(where: str) -> list[str]:
    parts = re.split(r"\s+and\s+", where, flags=re.IGNORECASE)
    out: list[str] = []
    i = 0
    while i < len(parts):
        p = parts[i]
        if re.search(r"\sbetween\s", p, re.IGNORECASE) and i + 1 < len(parts):
            out.append(p + " and " + parts[i + 1])
            i += 2
        else:
            out.append(p)
            i += 1
    return out


def parse_query(text: str) -> Query:
    m = _SELECT.match(text)
    if not m:
        raise PlanningError(f"cannot parse query: {text!r}")
    aggs = []
    for piece in m.group("aggs").split(","):
        am = _AGG.match(piece)
        if not am:
            raise PlanningError(f"cannot parse aggregate {piece.strip()!r}")
        func, arg = am.group(1).lower(), am.group(2)
        if arg == "*":
            if func != "count":
                raise PlanningError(f"{func}(*) is not supported")
            aggs.append(Aggregate("count"))
            continue
        refs = [_col(a.strip()) for a in arg.split("*")]
        tables = {t for t, _ in refs}
        if len(tables) > 1:
            raise PlanningError(f"aggregate {piece.strip()!r} mixes tables")
        aggs.append(Aggregate(func, tuple(c for _, c in refs), refs[0][0]))
    preds = []
    if m.group("where"):
        for clause in _split_and(m.group("where")):
            bm = _BETWEEN.match(clause)
            if bm:
                t, c = _col(bm.group(1))
                preds.append(Predicate(c, ">=", int(bm.group(2)), t))
                preds.append(Predicate(c, "<=", int(bm.group(3)), t))
                continue
            cm = _CMP.match(clause)
            if not cm:
                raise PlanningError(f"cannot parse predicate {clause.strip()!r}")
            t, c = _col(cm.group(1))
            preds.append(Predicate(c, cm.group(2), int(cm.group(3)), t))
    join = None
    if m.group("jt"):
        lt, lc = _col(m.group("jl"))
        rt, rc = _col(m.group("jr"))
        base, other = m.group("table"), m.group("jt")
        if lt == other and rt in (base, None):
            lt, lc, rt, rc = rt, rc, lt, lc
        if lt not in (base, None) or rt != other:
            raise PlanningError("join condition must relate the two joined tables")
        join = JoinSpec(other, lc, rc)
    return Query(m.group("table"), tuple(aggs), tuple(preds), join, text.strip())


def render_query(q: Query) -> str:
    def ref(t: Optional[str], c: str) -> str:
        return f"{t}.{c}" if t else c

    aggs = []
    for a in q.aggregates:
        arg = "*" if not a.columns else " * ".join(ref(a.table, c) for c in a.columns)
        aggs.append(f"{a.func}({arg})")
    s = f"select {', '.join(aggs)} from {q.table}"
    if q.join:
        s += f" join {q.join.table} on {q.table}.{q.join.left_column} = {q.join.table}.{q.join.right_column}"
    if q.predicates:
        s += " where " + " and ".join(f"{ref(p.table, p.column)} {p.op} {p.value}" for p in q.predicates)
    return s


QueryLike = Union[Query, str]


def as_query(q: QueryLike) -> Query:
    return parse_query(q) if isinstance(q, str) else q

"""Shared data model for both replicas.

The transactional replica is a row store (one Python list per tuple, keyed by
row id).  The analytical replica stores every column as a sorted dictionary of
distinct values plus a vector of fixed-width codes, bit-packed little-endian
into 64-bit words.  Field values are always 64-bit integers; decimals are
carried as scaled integers and dates as day numbers.
"""

from __future__ import annotations

import hashlib
import itertools
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np


class StorageError(Exception):
    """Base class for storage-level failures."""


class NotFoundError(LookupError, StorageError):
    """A row, column or table that was asked for does not exist."""


class CorruptionError(StorageError):
    """Encoded data violates its own invariants (e.g. a code outside the dictionary)."""


class LogicalType(str, Enum):
    INT64 = "int64"
    DECIMAL = "decimal"
    DATE = "date"


@dataclass(frozen=True)
class ColumnDef:
    column_id: int
    name: str
    type: LogicalType = LogicalType.INT64
    scale: int = 0  # decimal places carried by a DECIMAL column


@dataclass(frozen=True)
class TableSchema:
    table_id: int
    name: str
    columns: tuple[ColumnDef, ...]

    def __post_init__(self) -> None:
        if not self.columns:
            raise ValueError(f"table {self.name!r} needs at least one column")
        ids = [c.column_id for c in self.columns]
        if ids != list(range(len(ids))):
            raise ValueError(f"column ids of {self.name!r} must be dense 0..k-1, got {ids}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column names in {self.name!r}")

    @classmethod
    def build(
        cls,
        table_id: int,
        name: str,
        columns: Sequence[Union[str, tuple[str, LogicalType], tuple[str, LogicalType, int]]],
    ) -> "TableSchema":
        defs = []
        for i, spec in enumerate(columns):
            if isinstance(spec, str):
                defs.append(ColumnDef(i, spec))
            else:
                defs.append(ColumnDef(i, *spec))
        return cls(table_id, name, tuple(defs))

    @property
    def width(self) -> int:
        return len(self.columns)

    def column_id(self, name: str) -> int:
        for c in self.columns:
            if c.name == name:
                return c.column_id
        raise NotFoundError(f"table {self.name!r} has no column {name!r}")


# ---------------------------------------------------------------------------
# row-store operations


class Insert(NamedTuple):
    table_id: int
    values: tuple[int, ...]


class Delete(NamedTuple):
    table_id: int
    row_id: int


class Modify(NamedTuple):
    table_id: int
    row_id: int
    column_id: int
    value: int


RowOp = Union[Insert, Delete, Modify]


class RowStore:
    """NSM replica of one table.  Single writer; callers hold ``lock``."""

    def __init__(self, schema: TableSchema) -> None:
        self.schema = schema
        self.table_id = schema.table_id
        self.rows: dict[int, list[int]] = {}
        self.next_row_id = 0
        self.lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.rows)

    def allocate_row_id(self) -> int:
        row_id = self.next_row_id
        self.next_row_id += 1
        return row_id

    def insert(self, values: Sequence[int], row_id: int | None = None) -> int:
        if len(values) != self.schema.width:
            raise ValueError(
                f"{self.schema.name}: expected {self.schema.width} fields, got {len(values)}"
            )
        if row_id is None:
            row_id = self.allocate_row_id()
        elif row_id >= self.next_row_id:
            self.next_row_id = row_id + 1
        self.rows[row_id] = [int(v) for v in values]
        return row_id

    def read(self, row_id: int) -> tuple[int, ...]:
        try:
            return tuple(self.rows[row_id])
        except KeyError:
            raise NotFoundError(f"{self.schema.name}: row {row_id} not found") from None

    def modify(self, row_id: int, column_id: int, value: int) -> None:
        row = self.rows.get(row_id)
        if row is None:
            raise NotFoundError(f"{self.schema.name}: row {row_id} not found")
        row[column_id] = int(value)

    def delete(self, row_id: int) -> None:
        if self.rows.pop(row_id, None) is None:
            raise NotFoundError(f"{self.schema.name}: row {row_id} not found")

    def column_values(self, column_id: int) -> tuple[np.ndarray, np.ndarray]:
        """Gather one field of every slot 0..next_row_id-1 (values, validity)."""
        n = self.next_row_id
        values = np.zeros(n, dtype=np.int64)
        valid = np.zeros(n, dtype=bool)
        if self.rows:
            ids = np.fromiter(self.rows.keys(), dtype=np.int64, count=len(self.rows))
            vals = np.fromiter(
                (row[column_id] for row in self.rows.values()), dtype=np.int64, count=len(self.rows)
            )
            values[ids] = vals
            valid[ids] = True
        return values, valid


def row_store_apply(store: RowStore, op: RowOp) -> int:
    """Apply one insert/delete/modify to ``store`` and return the affected row id."""
    if isinstance(op, Insert):
        return store.insert(op.values)
    if isinstance(op, Delete):
        store.delete(op.row_id)
        return op.row_id
    if isinstance(op, Modify):
        store.modify(op.row_id, op.column_id, op.value)
        return op.row_id
    raise TypeError(f"not a row operation: {op!r}")


# ---------------------------------------------------------------------------
# bit packing


def code_width(cardinality: int) -> int:
    """Bits per code for a dictionary of ``cardinality`` entries (never below 1)."""
    if cardinality <= 2:
        return 1
    return (cardinality - 1).bit_length()


def pack_codes(codes: np.ndarray, width: int) -> np.ndarray:
    n = len(codes)
    nwords = (n * width + 63) // 64
    if n == 0:
        return np.zeros(0, dtype=np.uint64)
    shifts = np.arange(width, dtype=np.uint64)
    bits = ((codes.astype(np.uint64)[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    packed = np.packbits(bits.ravel(), bitorder="little")
    buf = np.zeros(nwords * 8, dtype=np.uint8)
    buf[: packed.size] = packed
    return buf.view("<u8")


def unpack_codes(words: np.ndarray, width: int, start: int, stop: int) -> np.ndarray:
    if stop <= start:
        return np.zeros(0, dtype=np.int64)
    bitpos = np.arange(start, stop, dtype=np.uint64) * np.uint64(width)
    word = (bitpos >> np.uint64(6)).astype(np.intp)
    shift = bitpos & np.uint64(63)
    out = words[word] >> shift
    spill = shift + np.uint64(width) > np.uint64(64)
    if spill.any():
        nxt = words[np.minimum(word[spill] + 1, len(words) - 1)]
        out[spill] |= nxt << (np.uint64(64) - shift[spill])
    out &= np.uint64((1 << width) - 1)
    return out.astype(np.int64)


def pack_bits(flags: np.ndarray) -> np.ndarray:
    return np.packbits(flags.astype(bool), bitorder="little")


def unpack_bits(bitmap: np.ndarray, start: int, stop: int) -> np.ndarray:
    if stop <= start:
        return np.zeros(0, dtype=bool)
    lo, hi = start // 8, (stop + 7) // 8
    bits = np.unpackbits(bitmap[lo:hi], bitorder="little")
    off = start - lo * 8
    return bits[off : off + (stop - start)].astype(bool)


# ---------------------------------------------------------------------------
# encoded column types


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Sorted distinct values; the code of a value is its index."""

    values: np.ndarray
    code_width_bits: int

    @classmethod
    def from_sorted(cls, values: np.ndarray | Sequence[int]) -> "Dictionary":
        arr = np.asarray(values, dtype=np.int64)
        if arr.ndim != 1:
            raise ValueError("dictionary values must be one-dimensional")
        if arr.size > 1 and not np.all(arr[1:] > arr[:-1]):
            raise ValueError("dictionary values must be strictly ascending")
        arr.setflags(write=False)
        return cls(arr, code_width(arr.size))

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dictionary):
            return NotImplemented
        return self.code_width_bits == other.code_width_bits and np.array_equal(
            self.values, other.values
        )

    def __hash__(self) -> int:
        return hash((self.code_width_bits, self.values.tobytes()))

    def code_of(self, value: int) -> int:
        i = int(np.searchsorted(self.values, value))
        if i >= self.values.size or self.values[i] != value:
            raise NotFoundError(f"value {value} not in dictionary")
        return i

    @property
    def nbytes(self) -> int:
        return int(self.values.nbytes)


@dataclass(frozen=True, eq=False)
class EncodedColumn:
    """Bit-packed code vector plus a packed validity bitmap (1 = live row)."""

    words: np.ndarray
    width: int
    length: int
    validity: np.ndarray

    @classmethod
    def from_codes(cls, codes: np.ndarray, valid: np.ndarray, width: int) -> "EncodedColumn":
        codes = np.asarray(codes, dtype=np.int64)
        valid = np.asarray(valid, dtype=bool)
        if codes.shape != valid.shape:
            raise ValueError("codes and validity must have the same length")
        words = pack_codes(codes, width)
        bitmap = pack_bits(valid)
        words.setflags(write=False)
        bitmap.setflags(write=False)
        return cls(words, width, int(codes.size), bitmap)

    def __len__(self) -> int:
        return self.length

    def codes(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        stop = self.length if stop is None else min(stop, self.length)
        return unpack_codes(self.words, self.width, start, stop)

    def valid(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        stop = self.length if stop is None else min(stop, self.length)
        return unpack_bits(self.validity, start, stop)

    def live_count(self) -> int:
        return int(self.valid().sum())

    @property
    def nbytes(self) -> int:
        return int(self.words.nbytes + self.validity.nbytes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EncodedColumn):
            return NotImplemented
        return (
            self.width == other.width
            and self.length == other.length
            and np.array_equal(self.words, other.words)
            and np.array_equal(self.validity, other.validity)
        )

    __hash__ = None  # type: ignore[assignment]


_version_ids = itertools.count(1)


def next_version_id() -> int:
    return next(_version_ids)


@dataclass(frozen=True, eq=False)
class ColumnVersion:
    """One immutable, publishable state of an analytical column."""

    dictionary: Dictionary
    column: EncodedColumn
    created_at: int
    version_id: int = field(default_factory=next_version_id)

    @property
    def length(self) -> int:
        return self.column.length

    @property
    def nbytes(self) -> int:
        return self.column.nbytes + self.dictionary.nbytes

    def values(self, start: int = 0, stop: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        return decode_values(self.dictionary, self.column, start, stop)

    def same_content(self, other: "ColumnVersion") -> bool:
        return self.dictionary == other.dictionary and self.column == other.column

    def checksum(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(self.dictionary.values.tobytes())
        h.update(self.column.words.tobytes())
        h.update(self.column.validity.tobytes())
        h.update(self.column.length.to_bytes(8, "little"))
        return h.hexdigest()


# ---------------------------------------------------------------------------
# encode / decode


def encode_column(
    values: Iterable[int] | np.ndarray, validity: Iterable[bool] | np.ndarray | None = None
) -> tuple[Dictionary, EncodedColumn]:
    """Dictionary-encode a column.  Dead positions get code 0 and validity 0."""
    vals = np.asarray(values if isinstance(values, np.ndarray) else list(values), dtype=np.int64)
    if vals.size == 0:
        raise ValueError("cannot encode an empty column")
    if validity is None:
        valid = np.ones(vals.size, dtype=bool)
    else:
        valid = np.asarray(
            validity if isinstance(validity, np.ndarray) else list(validity), dtype=bool
        )
        if valid.shape != vals.shape:
            raise ValueError("validity must match values in length")
    dict_values = np.unique(vals[valid])
    dictionary = Dictionary.from_sorted(dict_values)
    codes = np.zeros(vals.size, dtype=np.int64)
    if dict_values.size:
        codes[valid] = np.searchsorted(dict_values, vals[valid])
    return dictionary, EncodedColumn.from_codes(codes, valid, dictionary.code_width_bits)


def decode_values(
    dictionary: Dictionary, column: EncodedColumn, start: int = 0, stop: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Decode a range into (values, validity); dead slots decode as 0."""
    codes = column.codes(start, stop)
    valid = column.valid(start, stop)
    live = codes[valid]
    if live.size and int(live.max()) >= len(dictionary):
        raise CorruptionError(
            f"code {int(live.max())} outside dictionary of size {len(dictionary)}"
        )
    out = np.zeros(codes.size, dtype=np.int64)
    if live.size:
        out[valid] = dictionary.values[live]
    return out, valid


def decode_column(dictionary: Dictionary, column: EncodedColumn) -> list[int | None]:
    """Decode a whole column; dead rows come back as ``None``."""
    values, valid = decode_values(dictionary, column)
    return [int(v) if ok else None for v, ok in zip(values.tolist(), valid.tolist())]

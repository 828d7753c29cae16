import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from islanddb.storage import (
    ColumnVersion,
    CorruptionError,
    Dictionary,
    EncodedColumn,
    NotFoundError,
    RowStore,
    TableSchema,
    code_width,
    decode_column,
    decode_values,
    encode_column,
    pack_codes,
    unpack_codes,
)


def test_encode_example_roundtrip():
    d, col = encode_column([30, 10, 20, 10])
    assert d.values.tolist() == [10, 20, 30]
    assert col.codes().tolist() == [2, 0, 1, 0]
    assert col.width == 2
    assert decode_column(d, col) == [30, 10, 20, 10]


def test_code_width_small_cardinalities():
    assert [code_width(c) for c in (0, 1, 2, 3, 4, 5, 256, 257)] == [1, 1, 1, 2, 2, 3, 8, 9]


def test_empty_column_rejected():
    with pytest.raises(ValueError):
        encode_column([])


def test_dictionary_must_be_strictly_ascending():
    with pytest.raises(ValueError):
        Dictionary.from_sorted([1, 3, 3])
    with pytest.raises(ValueError):
        Dictionary.from_sorted([5, 2])


def test_code_out_of_range_is_corruption():
    d = Dictionary.from_sorted([1, 2])
    col = EncodedColumn.from_codes(np.array([0, 3]), np.array([True, True]), 2)
    with pytest.raises(CorruptionError):
        decode_values(d, col)


def test_dead_rows_decode_as_none():
    d, col = encode_column([7, 8, 9], [True, False, True])
    assert decode_column(d, col) == [7, None, 9]
    assert d.values.tolist() == [7, 9]


def test_dictionary_code_of():
    d = Dictionary.from_sorted([4, 9, 12])
    assert d.code_of(9) == 1
    with pytest.raises(NotFoundError):
        d.code_of(5)


def test_row_store_crud():
    s = RowStore(TableSchema.build(0, "t", ["a", "b"]))
    r = s.insert((1, 2))
    s.modify(r, 1, 5)
    assert s.read(r) == (1, 5)
    s.delete(r)
    with pytest.raises(NotFoundError):
        s.read(r)
    values, valid = s.column_values(1)
    assert valid.tolist() == [False]


def test_schema_validation():
    with pytest.raises(ValueError):
        TableSchema.build(0, "t", [])
    with pytest.raises(ValueError):
        TableSchema.build(0, "t", ["a", "a"])


def test_version_checksum_tracks_content():
    d, col = encode_column([1, 2, 3])
    a = ColumnVersion(d, col, 0)
    b = ColumnVersion(*encode_column([1, 2, 3]), 5)
    c = ColumnVersion(*encode_column([1, 2, 4]), 0)
    assert a.checksum() == b.checksum()
    assert a.checksum() != c.checksum()
    assert a.version_id != b.version_id


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 2**20), min_size=1, max_size=300), st.integers(1, 21))
def test_pack_unpack_roundtrip(codes, width):
    arr = np.array(codes, dtype=np.int64) & ((1 << width) - 1)
    words = pack_codes(arr, width)
    assert words.size == (arr.size * width + 63) // 64
    assert unpack_codes(words, width, 0, arr.size).tolist() == arr.tolist()


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.tuples(st.integers(-(2**40), 2**40), st.booleans()), min_size=1, max_size=200),
    st.data(),
)
def test_encode_decode_property(cells, data):
    values = [v for v, _ in cells]
    valid = [ok for _, ok in cells]
    d, col = encode_column(values, valid)
    # dictionary is exactly the sorted distinct live values
    assert d.values.tolist() == sorted({v for v, ok in cells if ok})
    assert col.width == code_width(len(d))
    assert decode_column(d, col) == [v if ok else None for v, ok in cells]
    start = data.draw(st.integers(0, len(values)))
    stop = data.draw(st.integers(start, len(values)))
    got, got_valid = decode_values(d, col, start, stop)
    assert got_valid.tolist() == valid[start:stop]
    assert [g for g, ok in zip(got.tolist(), got_valid.tolist()) if ok] == [
        v for v, ok in cells[start:stop] if ok
    ]

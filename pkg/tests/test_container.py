"""Container format: bit-exact round trips and hard failures on bad files."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctgraph.container import load_tensor, load_tensors, save_tensor, save_tensors
from ctgraph.errors import FormatError


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((16, 16, 16))
    path = tmp_path / "vol.bin"
    save_tensor(path, arr, name="volume")
    back, header = load_tensor(path)
    assert np.array_equal(back, arr)
    assert back.dtype == np.float64
    assert header["name"] == "volume"
    assert header["byte_order"] == "little"


@given(
    shape=st.lists(st.integers(1, 5), min_size=1, max_size=4),
    dtype=st.sampled_from(["float64", "float32", "int32", "int64"]),
)
@settings(max_examples=40, deadline=None)
def test_round_trip_any_shape_dtype(tmp_path_factory, shape, dtype):
    tmp = tmp_path_factory.mktemp("rt")
    rng = np.random.default_rng(1)
    if dtype.startswith("float"):
        arr = rng.standard_normal(shape).astype(dtype)
    else:
        arr = rng.integers(-100, 100, size=shape).astype(dtype)
    save_tensor(tmp / "t.bin", arr)
    back, _ = load_tensor(tmp / "t.bin")
    assert np.array_equal(back, arr)
    assert back.dtype == arr.dtype


def test_truncated_payload_raises_and_builds_nothing(tmp_path):
    path = tmp_path / "t.bin"
    save_tensor(path, np.ones((4, 4)))
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(FormatError, match="truncated"):
        load_tensor(path)


def test_header_payload_shape_mismatch(tmp_path):
    path = tmp_path / "t.bin"
    header = {"name": "x", "dtype": "float64", "shape": [3, 3], "byte_order": "little"}
    path.write_bytes(json.dumps(header).encode() + b"\n" + b"\x00" * 8 * 4)
    with pytest.raises(FormatError):
        load_tensor(path)


def test_rejects_garbage_header(tmp_path):
    path = tmp_path / "t.bin"
    path.write_bytes(b"not json at all\n....")
    with pytest.raises(FormatError):
        load_tensor(path)


def test_rejects_big_endian(tmp_path):
    path = tmp_path / "t.bin"
    header = {"name": "x", "dtype": "float64", "shape": [1], "byte_order": "big"}
    path.write_bytes(json.dumps(header).encode() + b"\n" + b"\x00" * 8)
    with pytest.raises(FormatError, match="byte order"):
        load_tensor(path)


def test_multi_record_file(tmp_path):
    rng = np.random.default_rng(2)
    named = {
        "a": rng.standard_normal((2, 3)),
        "b": rng.integers(0, 9, size=(4,)).astype(np.int32),
        "c": rng.standard_normal(5).astype(np.float32),
    }
    path = tmp_path / "multi.bin"
    save_tensors(path, named)
    back = load_tensors(path)
    assert set(back) == set(named)
    for name in named:
        assert np.array_equal(back[name], named[name])


def test_trailing_bytes_after_single_record(tmp_path):
    path = tmp_path / "t.bin"
    save_tensor(path, np.zeros(2))
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(FormatError, match="trailing"):
        load_tensor(path)

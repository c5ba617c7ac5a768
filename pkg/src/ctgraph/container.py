"""Tensor container files.

A record is one JSON header line (name, dtype, shape, byte_order) followed
by the raw contiguous little-endian payload. A file may hold several
records back to back; readers consume records until EOF. Round trips are
bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import FormatError

_TO_NUMPY = {"float64": "<f8", "float32": "<f4", "int64": "<i8", "int32": "<i4"}
_FROM_KIND = {("f", 8): "float64", ("f", 4): "float32", ("i", 8): "int64", ("i", 4): "int32"}
_MAX_HEADER_BYTES = 1 << 20


def _dtype_name(arr: np.ndarray) -> str:
    key = (arr.dtype.kind, arr.dtype.itemsize)
    if key not in _FROM_KIND:
        raise FormatError(f"unsupported dtype for container: {arr.dtype}")
    return _FROM_KIND[key]


def write_record(fh: BinaryIO, array: np.ndarray, name: str = "tensor", meta: dict | None = None) -> None:
    arr = np.asarray(array)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.int32)
    dtype_name = _dtype_name(arr)
    header: dict = {
        "name": name,
        "dtype": dtype_name,
        "shape": list(arr.shape),
        "byte_order": "little",
    }
    if meta:
        header["meta"] = meta
    fh.write(json.dumps(header).encode("utf-8") + b"\n")
    fh.write(np.ascontiguousarray(arr).astype(_TO_NUMPY[dtype_name]).tobytes())


def read_record(fh: BinaryIO):
    """Read one record; returns (name, array, header) or None at EOF."""
    line = fh.readline(_MAX_HEADER_BYTES)
    if not line:
        return None
    if not line.endswith(b"\n"):
        raise FormatError("container header line is unterminated or oversized")
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"container header is not valid JSON: {exc}") from exc
    for key in ("name", "dtype", "shape", "byte_order"):
        if key not in header:
            raise FormatError(f"container header misses required key '{key}'")
    if header["byte_order"] != "little":
        raise FormatError(f"unsupported byte order: {header['byte_order']}")
    dtype_name = header["dtype"]
    if dtype_name not in _TO_NUMPY:
        raise FormatError(f"unknown container dtype: {dtype_name}")
    shape = header["shape"]
    if not isinstance(shape, list) or any(
        not isinstance(d, int) or d <= 0 for d in shape
    ):
        raise FormatError(f"container shape must be a list of positive extents, got {shape}")
    np_dtype = np.dtype(_TO_NUMPY[dtype_name])
    nbytes = int(np.prod(shape, dtype=np.int64)) * np_dtype.itemsize
    payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise FormatError(
            f"truncated payload for record '{header['name']}': "
            f"expected {nbytes} bytes, got {len(payload)}"
        )
    array = np.frombuffer(payload, dtype=np_dtype).reshape(shape).copy()
    return header["name"], array, header


def save_tensor(path, array: np.ndarray, name: str = "tensor", meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        write_record(fh, array, name=name, meta=meta)


def load_tensor(path):
    """Load a single-record container; returns (array, header)."""
    with open(path, "rb") as fh:
        rec = read_record(fh)
        if rec is None:
            raise FormatError(f"{path}: empty container")
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"{path}: trailing data after single record")
    _, array, header = rec
    return array, header


def save_tensors(path, named: dict[str, np.ndarray], meta: dict[str, dict] | None = None) -> None:
    meta = meta or {}
    with open(path, "wb") as fh:
        for name, arr in named.items():
            write_record(fh, arr, name=name, meta=meta.get(name))


def load_records(path) -> list[tuple[str, np.ndarray, dict]]:
    records = []
    with open(path, "rb") as fh:
        while True:
            rec = read_record(fh)
            if rec is None:
                break
            records.append(rec)
    if not records:
        raise FormatError(f"{path}: empty container")
    return records


def load_tensors(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name, arr, _ in load_records(path):
        out[name] = arr
    return out


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p

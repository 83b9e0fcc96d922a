"""Portable single-array container ("DAVG").

Layout, all little-endian:

    bytes 0-3   magic b"DAVG"
    byte  4     format version (currently 1)
    byte  5     dtype code (1 = float32, 2 = uint8)
    bytes 6-9   height (u32)
    bytes 10-13 width  (u32)
    bytes 14-   row-major payload

Writes are bit-exact round trips; readers reject anything they do not
recognize instead of guessing.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ValidationError

MAGIC = b"DAVG"
VERSION = 1
_HEADER = struct.Struct("<4sBBII")
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.uint8): 2}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def encode_array(arr: np.ndarray) -> bytes:
    """Serialize a 2-D float32 or uint8 array to container bytes."""
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValidationError(f"container stores 2-D arrays, got shape {arr.shape}")
    if arr.dtype not in _DTYPE_CODES:
        raise ValidationError(f"unsupported dtype {arr.dtype}; use float32 or uint8")
    header = _HEADER.pack(MAGIC, VERSION, _DTYPE_CODES[arr.dtype], arr.shape[0], arr.shape[1])
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
    return header + payload


def decode_array(data: bytes, origin: str = "buffer") -> np.ndarray:
    """Deserialize container bytes; ``origin`` only labels error messages."""
    if len(data) < _HEADER.size:
        raise ValidationError(f"{origin}: truncated container header")
    magic, version, code, height, width = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError(f"{origin}: bad magic {magic!r}")
    if version != VERSION:
        raise ValidationError(f"{origin}: unsupported container version {version}")
    if code not in _CODE_DTYPES:
        raise ValidationError(f"{origin}: unknown dtype code {code}")
    dtype = _CODE_DTYPES[code].newbyteorder("<")
    expected = _HEADER.size + height * width * dtype.itemsize
    if len(data) != expected:
        raise ValidationError(f"{origin}: payload size {len(data)} != expected {expected}")
    arr = np.frombuffer(data, dtype=dtype, offset=_HEADER.size).reshape(height, width)
    return arr.astype(_CODE_DTYPES[code])


def save_array(path, arr: np.ndarray) -> None:
    """Write a 2-D float32 or uint8 array to the container format."""
    Path(path).write_bytes(encode_array(arr))


def load_array(path) -> np.ndarray:
    """Read an array written by :func:`save_array`."""
    return decode_array(Path(path).read_bytes(), origin=str(path))

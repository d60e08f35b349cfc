"""RTN1 tensor files.

Layout: ``b"RTN1"``, u8 dtype code (0 = f32, 1 = f64), u8 rank, ``rank`` x
u32 little-endian extents, then the raw little-endian values in row-major
order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from ..errors import FormatError
from .tensor import Tensor

MAGIC = b"RTN1"
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def encode(arr) -> bytes:
    arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
    if arr.dtype == np.float32:
        code = 0
    elif arr.dtype == np.float64:
        code = 1
    else:
        raise FormatError(f"RTN1 stores f32/f64 only, got {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError("missing RTN1 magic")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in _CODES:
        raise FormatError(f"unknown dtype code {code}")
    off = 6 + 4 * rank
    if len(buf) < off:
        raise FormatError("truncated RTN1 header")
    shape = struct.unpack_from(f"<{rank}I", buf, 6)
    dt = _CODES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != off + count * dt.itemsize:
        raise FormatError(f"RTN1 payload has {len(buf) - off} bytes, expected {count * dt.itemsize}")
    arr = np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(shape)
    return arr.astype(dt.newbyteorder("="))


def write(path: str | Path | BinaryIO, arr) -> None:
    data = encode(arr)
    if hasattr(path, "write"):
        path.write(data)
    else:
        Path(path).write_bytes(data)


def read(path: str | Path | BinaryIO) -> np.ndarray:
    if hasattr(path, "read"):
        return decode(path.read())
    return decode(Path(path).read_bytes())

"""Netpbm helpers: binary PPM (P6) in and out."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import FormatError

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def _header(buf: bytes, fields: int) -> tuple[list[bytes], int]:
    pos = 0
    out = []
    for _ in range(fields):
        m = _TOKEN.match(buf, pos)
        if not m:
            raise FormatError("truncated netpbm header")
        out.append(m.group(1))
        pos = m.end()
    if pos >= len(buf) or buf[pos:pos + 1] not in b" \t\r\n":
        raise FormatError("netpbm header must end with one whitespace byte")
    return out, pos + 1


def parse_ppm(buf: bytes) -> np.ndarray:
    """Decode a P6 image into a float64 3 x H x W array scaled to [0, 1]."""
    (magic, w, h, maxval), off = _header(buf, 4)
    if magic != b"P6":
        raise FormatError(f"expected P6 magic, got {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError("non-integer PPM header field") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError(f"bad PPM geometry {w}x{h} maxval {maxval}")
    dt = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * 3 * dt.itemsize
    if len(buf) - off < need:
        raise FormatError(f"PPM payload has {len(buf) - off} bytes, need {need}")
    pix = np.frombuffer(buf, dtype=dt, count=w * h * 3, offset=off).reshape(h, w, 3)
    return np.ascontiguousarray(pix.transpose(2, 0, 1), dtype=np.float64) / maxval


def read_ppm(path: str | Path) -> np.ndarray:
    return parse_ppm(Path(path).read_bytes())


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write a 3 x H x W array in [0, 1] as an 8-bit P6 file."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise FormatError(f"PPM needs a 3 x H x W array, got {arr.shape}")
    pix = np.clip(np.rint(arr * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    header = f"P6\n{arr.shape[2]} {arr.shape[1]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pix.tobytes())

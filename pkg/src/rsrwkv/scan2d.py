"""Four-direction 2D-WKV: grid traversals, per-direction Bi-WKV, re-scan, gating."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import ops
from .numerics.init import trunc_normal
from .numerics.tensor import Tensor
from .wkv import WkvParams, bi_wkv

# head concatenation order
DIRECTIONS = ("horizontal", "vertical", "diag_anti", "diag_main")
DIRECTION_SETS = {
    1: ("horizontal",),
    2: ("horizontal", "vertical"),
    4: DIRECTIONS,
}


@dataclass(frozen=True)
class ScanOrder:
    """A bijection between grid cells (row-major index) and sequence positions.

    ``forward[g]`` is the sequence position of grid cell ``g``;
    ``inverse[p]`` is the grid cell visited at position ``p``.
    """

    name: str
    forward: np.ndarray
    inverse: np.ndarray

    def scan(self, grid_tokens: np.ndarray) -> np.ndarray:
        return grid_tokens[self.inverse]

    def rescan(self, seq_tokens: np.ndarray) -> np.ndarray:
        return seq_tokens[self.forward]


def _visit_order(name: str, h: int, w: int) -> list[int]:
    if name == "horizontal":
        return list(range(h * w))
    if name == "vertical":
        return [i * w + j for j in range(w) for i in range(h)]
    cells = []
    if name == "diag_anti":
        # anti-diagonals s = i + j ascending, i ascending inside
        for s in range(h + w - 1):
            for i in range(max(0, s - w + 1), min(h - 1, s) + 1):
                cells.append(i * w + (s - i))
        return cells
    if name == "diag_main":
        # diagonals d = i - j + (w - 1) ascending, i ascending inside
        for d in range(h + w - 1):
            off = d - (w - 1)
            for i in range(max(0, off), min(h - 1, off + w - 1) + 1):
                cells.append(i * w + (i - off))
        return cells
    raise ConfigError(f"unknown scan direction {name!r}")


@lru_cache(maxsize=64)
def _cached_orders(h: int, w: int) -> tuple[ScanOrder, ...]:
    out = []
    for name in DIRECTIONS:
        inverse = np.asarray(_visit_order(name, h, w), dtype=np.intp)
        forward = np.empty_like(inverse)
        forward[inverse] = np.arange(inverse.size)
        inverse.setflags(write=False)
        forward.setflags(write=False)
        out.append(ScanOrder(name, forward, inverse))
    return tuple(out)


def build_scan_orders(h: int, w: int) -> dict[str, ScanOrder]:
    """The four canonical traversals of an ``h`` x ``w`` grid, keyed by name."""
    if h < 1 or w < 1:
        raise ConfigError(f"grid extents must be positive, got {h}x{w}")
    return {o.name: o for o in _cached_orders(int(h), int(w))}


def scan_orders_csv(h: int, w: int) -> str:
    """CSV table: grid index, row, col, then the sequence position per direction."""
    orders = build_scan_orders(h, w)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["grid_index", "row", "col", *DIRECTIONS])
    for g in range(h * w):
        writer.writerow([g, g // w, g % w, *(int(orders[n].forward[g]) for n in DIRECTIONS)])
    return buf.getvalue()


@dataclass
class Wkv2dLayer:
    """Projections and shared WKV parameters for one 2D-WKV attention."""

    params: WkvParams
    directions: tuple[str, ...]
    w_r: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    def __post_init__(self):
        c = self.w_r.shape[0]
        n = len(self.directions)
        if c % n:
            raise ConfigError(f"channels {c} not divisible by direction count {n}")
        head = c // n
        expected = {"w_r": (c, c), "w_k": (c, head), "w_v": (c, head), "w_o": (c, c)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} must be {shape}, got {getattr(self, name).shape}")
        if self.params.channels != head:
            raise ShapeError(f"WKV params cover {self.params.channels} channels, need {head}")

    @classmethod
    def initial(cls, channels: int, directions: int, rng: np.random.Generator,
                dtype=np.float64) -> "Wkv2dLayer":
        if directions not in DIRECTION_SETS:
            raise ConfigError(f"direction count must be one of {sorted(DIRECTION_SETS)}, got {directions}")
        if channels % directions:
            raise ConfigError(f"channels {channels} not divisible by direction count {directions}")
        head = channels // directions

        def mat(cout):
            return Tensor(trunc_normal(rng, (channels, cout), dtype=dtype))

        return cls(
            params=WkvParams.initial(head, dtype=dtype),
            directions=DIRECTION_SETS[directions],
            w_r=mat(channels), w_k=mat(head), w_v=mat(head), w_o=mat(channels),
        )

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [
            ("w_r", self.w_r), ("w_k", self.w_k), ("w_v", self.w_v), ("w_o", self.w_o),
            ("decay", self.params.w), ("bonus", self.params.u),
        ]


def wkv_2d_heads(k: Tensor, v: Tensor, params: WkvParams, directions, h: int, w: int) -> Tensor:
    """Run Bi-WKV along each direction and return the heads concatenated (T x n*C').

    All directions go through one kernel call: the permuted copies of k and v
    are laid side by side on the channel axis with ``w``/``u`` repeated, which
    is the same computation as separate calls sharing one parameter set.
    """
    if k.shape[0] != h * w:
        raise ShapeError(f"token count {k.shape[0]} != {h}x{w}")
    orders = build_scan_orders(h, w)
    seqs = [orders[d] for d in directions]
    n = len(seqs)
    ks = ops.concat([ops.take(k, o.inverse, axis=0) for o in seqs], axis=1)
    vs = ops.concat([ops.take(v, o.inverse, axis=0) for o in seqs], axis=1)
    w_all = ops.concat([params.w] * n, axis=0)
    u_all = ops.concat([params.u] * n, axis=0)
    y = bi_wkv(ks, vs, w_all, u_all)
    parts = ops.split(y, n, axis=1) if n > 1 else [y]
    heads = [ops.take(p, o.forward, axis=0) for p, o in zip(parts, seqs)]
    return ops.concat(heads, axis=1) if n > 1 else heads[0]


def wkv_2d(x: Tensor, layer: Wkv2dLayer, h: int, w: int) -> Tensor:
    """Gated multi-direction WKV attention over a T x C token grid."""
    if x.ndim != 2 or x.shape[0] != h * w:
        raise ShapeError(f"expected {h * w} x C tokens, got {x.shape}")
    r = ops.linear(x, layer.w_r)
    k = ops.linear(x, layer.w_k)
    v = ops.linear(x, layer.w_v)
    heads = wkv_2d_heads(k, v, layer.params, layer.directions, h, w)
    return ops.linear(ops.mul(ops.sigmoid(r), heads), layer.w_o)

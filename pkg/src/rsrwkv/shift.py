"""Token shifts: multi-view context shift plus the Q-Shift and 1-D lerp baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import ops
from .numerics.init import trunc_normal
from .numerics.tensor import Tensor, make_result

DILATIONS = (1, 2, 3)


@dataclass
class MvcShiftLayer:
    """Three residual branches: dilated depthwise 3x3 followed by a 1x1 mix.

    No biases anywhere, so the shift is exactly linear in its input.
    """

    depthwise: list[Tensor]   # each C x 3 x 3
    pointwise: list[Tensor]   # each C x C
    dilations: tuple[int, ...] = DILATIONS

    def __post_init__(self):
        if not (len(self.depthwise) == len(self.pointwise) == len(self.dilations) == 3):
            raise ConfigError("MVC shift needs exactly three branches")
        c = self.depthwise[0].shape[0]
        for dw, pw in zip(self.depthwise, self.pointwise):
            if dw.shape != (c, 3, 3) or pw.shape != (c, c):
                raise ShapeError(f"branch weights must be ({c},3,3) and ({c},{c})")

    @property
    def channels(self) -> int:
        return self.depthwise[0].shape[0]

    @classmethod
    def initial(cls, channels: int, rng: np.random.Generator, dtype=np.float64) -> "MvcShiftLayer":
        dw = [Tensor(trunc_normal(rng, (channels, 3, 3), dtype=dtype)) for _ in DILATIONS]
        pw = [Tensor(trunc_normal(rng, (channels, channels), dtype=dtype)) for _ in DILATIONS]
        return cls(dw, pw)

    @classmethod
    def zeros(cls, channels: int, dtype=np.float64) -> "MvcShiftLayer":
        return cls(
            [Tensor(np.zeros((channels, 3, 3)), dtype=dtype) for _ in DILATIONS],
            [Tensor(np.zeros((channels, channels)), dtype=dtype) for _ in DILATIONS],
        )

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (dw, pw) in enumerate(zip(self.depthwise, self.pointwise)):
            out += [(f"branch{i}.depthwise", dw), (f"branch{i}.pointwise", pw)]
        return out


def tokens_to_grid(x: Tensor, h: int, w: int) -> Tensor:
    """T x C -> C x H x W."""
    if x.ndim != 2 or x.shape[0] != h * w:
        raise ShapeError(f"expected {h * w} x C tokens for a {h}x{w} grid, got {x.shape}")
    return ops.transpose(ops.reshape(x, (h, w, x.shape[1])), (2, 0, 1))


def grid_to_tokens(x: Tensor) -> Tensor:
    """C x H x W -> T x C."""
    c, h, w = x.shape
    return ops.reshape(ops.transpose(x, (1, 2, 0)), (h * w, c))


def mvc_shift(x: Tensor, layer: MvcShiftLayer, h: int, w: int) -> Tensor:
    """``x + sum_i pointwise_i(depthwise_i(x, dilation_i))`` on a T x C token grid."""
    grid = tokens_to_grid(x, h, w)
    if grid.shape[0] != layer.channels:
        raise ShapeError(f"layer has {layer.channels} channels, input has {grid.shape[0]}")
    branches = [
        ops.pointwise_conv(ops.depthwise_conv2d(grid, dw, d), pw)
        for dw, pw, d in zip(layer.depthwise, layer.pointwise, layer.dilations)
    ]
    return ops.add(x, grid_to_tokens(ops.add_n(branches)))


def _qshift_sources(h: int, w: int, c: int) -> tuple[np.ndarray, np.ndarray]:
    """Source token per (token, channel) and a validity mask.

    Channel quarters 0..3 read from the neighbour above, below, left, right.
    """
    q = c // 4
    rows, cols = np.divmod(np.arange(h * w), w)
    src = np.zeros((h * w, c), dtype=np.intp)
    valid = np.zeros((h * w, c), dtype=bool)
    for quarter, (di, dj) in enumerate(((-1, 0), (1, 0), (0, -1), (0, 1))):
        r, cc = rows + di, cols + dj
        ok = (r >= 0) & (r < h) & (cc >= 0) & (cc < w)
        sl = slice(quarter * q, (quarter + 1) * q)
        src[:, sl] = np.where(ok, r * w + cc, 0)[:, None]
        valid[:, sl] = ok[:, None]
    return src, valid


def q_shift(x: Tensor, h: int, w: int, mu: Tensor | None = None) -> Tensor:
    """Four-neighbour shift by channel quarter, interpolated with the token itself.

    ``out = mu * x + (1 - mu) * shifted``; ``mu`` is per channel, default 0.5.
    """
    if x.ndim != 2 or x.shape[0] != h * w:
        raise ShapeError(f"expected {h * w} x C tokens, got {x.shape}")
    c = x.shape[1]
    if c % 4:
        raise ConfigError(f"Q-Shift needs channels divisible by 4, got {c}")
    if mu is None:
        mu = Tensor(np.full(c, 0.5), dtype=x.dtype)
    if mu.shape != (c,):
        raise ShapeError(f"mu must have shape ({c},)")
    src, valid = _qshift_sources(h, w, c)
    cols = np.broadcast_to(np.arange(c), src.shape)
    xd, md = x.data, mu.data
    shifted = np.where(valid, xd[src, cols], 0).astype(xd.dtype)

    def bwd(g):
        gx = g * md
        np.add.at(gx, (src[valid], cols[valid]), (g * (1 - md))[valid])
        return gx, (g * (xd - shifted)).sum(axis=0)

    return make_result(md * xd + (1 - md) * shifted, (x, mu), bwd, "q_shift")


def lerp_shift(x: Tensor, mu: Tensor) -> Tensor:
    """``out[t] = mu * x[t] + (1 - mu) * x[t-1]`` with ``x[-1] = 0``."""
    if x.ndim != 2 or mu.shape != (x.shape[1],):
        raise ShapeError(f"lerp_shift needs T x C input and ({x.shape[-1]},) mu")
    xd, md = x.data, mu.data
    prev = np.zeros_like(xd)
    prev[1:] = xd[:-1]

    def bwd(g):
        gx = g * md
        gx[:-1] += g[1:] * (1 - md)
        return gx, (g * (xd - prev)).sum(axis=0)

    return make_result(md * xd + (1 - md) * prev, (x, mu), bwd, "lerp_shift")

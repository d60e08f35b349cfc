"""Parameter and FLOP accounting, effective receptive field maps, channel statistics."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateReportError, ShapeError
from .model import (
    BackboneWeights,
    ModelConfig,
    backbone_forward,
    channel_mix_trace,
    patch_embed,
    rwkv2d_block,
    spatial_mix,
)
from .numerics import ops
from .numerics.tensor import GradTape, Tensor


def worker_count() -> int:
    """Worker cap from ``RSRWKV_THREADS`` (unset or 0 means serial)."""
    try:
        n = int(os.environ.get("RSRWKV_THREADS", "0"))
    except ValueError:
        n = 0
    return max(n, 1)


# --------------------------------------------------------------- parameters


def rkv_projection_params(channels: int, directions: int) -> int:
    """Receptance (C x C) plus key and value (C x C/n each) weights."""
    head = channels // directions
    return channels * channels + 2 * channels * head


@dataclass
class ParamCount:
    per_module: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.per_module.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["module", "params"])
        for name, n in self.per_module.items():
            w.writerow([name, n])
        w.writerow(["total", self.total])
        return buf.getvalue()


def count_params(cfg: ModelConfig) -> ParamCount:
    """Exact stored-value counts, summed over all blocks per module kind."""
    c, hc, n = cfg.embed_dim, cfg.hidden_dim, cfg.directions
    head = c // n
    p = cfg.patch_size
    mvc = 3 * (9 * c + c * c)
    depth = cfg.depth
    counts = {
        "patch_embed": cfg.in_channels * p * p * c + c,
        "spatial.ln": depth * 2 * c,
        "spatial.shift": depth * mvc,
        "spatial.rkv": depth * rkv_projection_params(c, n),
        "spatial.out": depth * c * c,
        "spatial.wkv_params": depth * 2 * head,
        "channel.shift": depth * mvc,
        "channel.ln": depth * 2 * c,
        "channel.rkv": depth * (c * c + 2 * c * hc),
        "channel.eca": depth * cfg.eca_size,
        "head": c * cfg.num_classes + cfg.num_classes,
    }
    return ParamCount(counts)


# -------------------------------------------------------------------- FLOPs

WKV_MACS_PER_ELEMENT = 6


@dataclass
class FlopReport:
    """Multiply-accumulate tally for one forward pass.

    Counted: every matrix product and convolution exactly (patch projection,
    R/K/V/output projections, depthwise and pointwise shift convolutions,
    channel-mix projections, the channel-attention 1-D convolution, the
    classifier) plus ``WKV_MACS_PER_ELEMENT`` per token-channel of each WKV
    pass. Not counted: normalization, activations, gating products, residual
    adds, pooling. FLOPs are reported as ``2 * MACs``.
    """

    macs: dict[str, int]
    tokens: int
    body_keys: tuple[str, ...] = field(default=("patch_embed", "spatial", "wkv", "channel"))

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values())

    @property
    def flops(self) -> int:
        return 2 * self.total_macs

    @property
    def body_macs(self) -> int:
        """Token-proportional part (everything except ECA conv and classifier)."""
        return sum(self.macs[k] for k in self.body_keys)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["component", "macs"])
        for name, n in self.macs.items():
            w.writerow([name, n])
        w.writerow(["total_macs", self.total_macs])
        w.writerow(["total_flops", self.flops])
        return buf.getvalue()


def count_flops(cfg: ModelConfig, height: int, width: int) -> FlopReport:
    h, w = cfg.grid(height, width)
    t = h * w
    c, hc, n = cfg.embed_dim, cfg.hidden_dim, cfg.directions
    p = cfg.patch_size
    mvc = 3 * (9 * c * t + c * c * t)
    depth = cfg.depth
    macs = {
        "patch_embed": t * cfg.in_channels * p * p * c,
        "spatial": depth * (mvc + t * rkv_projection_params(c, n) + t * c * c),
        "wkv": depth * WKV_MACS_PER_ELEMENT * t * (c // n) * n,
        "channel": depth * (mvc + t * (c * c + 2 * c * hc)),
        "eca_conv": depth * c * cfg.eca_size,
        "head": c * cfg.num_classes,
    }
    return FlopReport(macs, t)


# ---------------------------------------------------------------------- ERF


@dataclass
class ErfReport:
    """Normalized log contribution per input pixel and the share above 0.5."""

    grid: np.ndarray
    high_ratio: float
    raw: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "log_contribution"])
        for (i, j), val in np.ndenumerate(self.grid):
            w.writerow([i, j, repr(float(val))])
        return buf.getvalue()

    def write_pgm(self, path: str | Path) -> None:
        write_pgm(path, self.grid)


def _input_gradient(probe: Callable[[Tensor], Tensor], image: np.ndarray) -> np.ndarray:
    x = Tensor(image, requires_grad=True)
    with GradTape() as tape:
        out = probe(x)
    tape.backward(out)
    return np.abs(x.grad.data).sum(axis=0)


def erf_map(probe: Callable[[Tensor], Tensor], images: Sequence[np.ndarray]) -> ErfReport:
    """Effective receptive field of a scalar probe over a set of C x H x W images.

    ``G(p)`` sums ``|d probe / d pixel p|`` over images and input channels;
    the map is ``log(1 + G) / log(1 + max G)`` (base-independent).
    """
    if len(images) == 0:
        raise ShapeError("erf_map needs at least one image")
    workers = min(worker_count(), len(images))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            grads = list(pool.map(lambda im: _input_gradient(probe, im), images))
    else:
        grads = [_input_gradient(probe, im) for im in images]
    total = np.zeros_like(grads[0])
    for g in grads:
        total = total + g
    peak = total.max()
    if not peak > 0:
        raise DegenerateReportError("probe gradient is zero at every pixel")
    grid = np.log1p(total) / np.log1p(peak)
    grid[total == peak] = 1.0
    return ErfReport(grid, float(np.mean(grid > 0.5)), total)


def center_token_probe(weights: BackboneWeights) -> Callable[[Tensor], Tensor]:
    """Scalar probe: sum over channels of the centre token of the last stage."""

    def probe(image: Tensor) -> Tensor:
        out, _ = backbone_forward(image, weights)
        feats = out.stages[-1]
        center = (out.h // 2) * out.w + out.w // 2
        return ops.sum_all(ops.take(feats, np.array([center]), axis=0))

    return probe


def write_pgm(path: str | Path, values: np.ndarray) -> None:
    """Binary 8-bit greyscale image, ``values`` in [0, 1] mapped to 0..255."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"PGM needs a 2-D array, got {arr.shape}")
    pix = np.clip(np.rint(arr * 255), 0, 255).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pix.tobytes())


# ------------------------------------------------------------ channel stats


def channel_stats(x_before, x_after) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean absolute activation before and after a module."""
    a = x_before.data if isinstance(x_before, Tensor) else np.asarray(x_before)
    b = x_after.data if isinstance(x_after, Tensor) else np.asarray(x_after)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"channel_stats needs two equal T x C tensors, got {a.shape} and {b.shape}")
    return np.abs(a).mean(axis=0), np.abs(b).mean(axis=0)


def channel_stats_csv(before: np.ndarray, after: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "mean_abs_before", "mean_abs_after"])
    for i, (x, y) in enumerate(zip(before, after)):
        w.writerow([i, repr(float(x)), repr(float(y))])
    return buf.getvalue()


def eca_channel_stats(image: Tensor, weights: BackboneWeights, block: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """Channel means entering and leaving the channel attention of one block."""
    x, h, w = patch_embed(image, weights.patch_w, weights.patch_b, weights.cfg.patch_size)
    blocks = weights.blocks
    if not blocks:
        raise ShapeError("model has no blocks")
    target = range(len(blocks))[block]
    for i, blk in enumerate(blocks[:target]):
        x = rwkv2d_block(x, blk, h, w)
    y = ops.add(x, spatial_mix(x, blocks[target].spatial, h, w))
    gated, attended = channel_mix_trace(y, blocks[target].channel, h, w)
    return channel_stats(gated, attended)

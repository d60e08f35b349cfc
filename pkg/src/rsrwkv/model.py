"""RSRWKV backbone: patch embedding, 2D-RWKV blocks, stage taps, classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import ops
from .numerics.init import trunc_normal
from .numerics.tensor import Tensor, as_dtype
from .scan2d import DIRECTION_SETS, Wkv2dLayer, wkv_2d
from .shift import MvcShiftLayer, mvc_shift


def eca_kernel_size(channels: int) -> int:
    """Adaptive odd kernel size used by efficient channel attention (gamma=2, b=1)."""
    t = int(abs((math.log2(channels) + 1) / 2))
    return t if t % 2 else t + 1


@dataclass(frozen=True)
class ModelConfig:
    patch_size: int = 16
    embed_dim: int = 192
    stage_depths: tuple[int, int, int, int] = (3, 3, 3, 3)
    hidden_rate: int = 2
    directions: int = 4
    num_classes: int = 45
    eca_kernel: Union[int, str] = "adaptive"
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stage_depths", tuple(int(d) for d in self.stage_depths))
        if self.patch_size < 1 or self.embed_dim < 1 or self.num_classes < 1:
            raise ConfigError("patch size, embed dim and class count must be positive")
        if len(self.stage_depths) != 4 or min(self.stage_depths) < 0:
            raise ConfigError(f"need four non-negative stage depths, got {self.stage_depths}")
        if self.directions not in DIRECTION_SETS:
            raise ConfigError(f"directions must be one of {sorted(DIRECTION_SETS)}")
        if self.embed_dim % self.directions:
            raise ConfigError(f"embed dim {self.embed_dim} not divisible by {self.directions} directions")
        if self.hidden_rate < 1:
            raise ConfigError("hidden rate must be positive")
        if self.eca_kernel != "adaptive" and (not isinstance(self.eca_kernel, int) or self.eca_kernel % 2 == 0
                                              or self.eca_kernel < 1):
            raise ConfigError(f"ECA kernel must be a positive odd int or 'adaptive', got {self.eca_kernel!r}")

    @property
    def depth(self) -> int:
        return sum(self.stage_depths)

    @property
    def eca_size(self) -> int:
        return eca_kernel_size(self.embed_dim) if self.eca_kernel == "adaptive" else int(self.eca_kernel)

    @property
    def hidden_dim(self) -> int:
        return self.hidden_rate * self.embed_dim

    def grid(self, height: int, width: int) -> tuple[int, int]:
        p = self.patch_size
        if height % p or width % p:
            raise ConfigError(f"image {height}x{width} not divisible by patch size {p}")
        return height // p, width // p

    def stage_ends(self) -> list[int]:
        """Block counts after which each stage output is tapped."""
        return list(np.cumsum(self.stage_depths))


TOY_CONFIG = ModelConfig(patch_size=8, embed_dim=16, stage_depths=(1, 1, 1, 1), num_classes=2)


# ------------------------------------------------------------------ weights


def _ln(c: int, dtype) -> tuple[Tensor, Tensor]:
    return Tensor(np.ones(c), dtype=dtype), Tensor(np.zeros(c), dtype=dtype)


@dataclass
class SpatialMixWeights:
    ln_gamma: Tensor
    ln_beta: Tensor
    shift: MvcShiftLayer
    wkv: Wkv2dLayer

    def named_parameters(self):
        yield "ln.gamma", self.ln_gamma
        yield "ln.beta", self.ln_beta
        for n, t in self.shift.named_parameters():
            yield f"shift.{n}", t
        for n, t in self.wkv.named_parameters():
            yield f"wkv.{n}", t


@dataclass
class ChannelMixWeights:
    shift: MvcShiftLayer
    ln_gamma: Tensor
    ln_beta: Tensor
    w_r: Tensor   # C x C
    w_k: Tensor   # C x hC
    w_v: Tensor   # hC x C
    eca: Tensor   # k

    def named_parameters(self):
        for n, t in self.shift.named_parameters():
            yield f"shift.{n}", t
        yield "ln.gamma", self.ln_gamma
        yield "ln.beta", self.ln_beta
        yield "w_r", self.w_r
        yield "w_k", self.w_k
        yield "w_v", self.w_v
        yield "eca", self.eca


@dataclass
class BlockWeights:
    spatial: SpatialMixWeights
    channel: ChannelMixWeights

    def named_parameters(self):
        for n, t in self.spatial.named_parameters():
            yield f"spatial.{n}", t
        for n, t in self.channel.named_parameters():
            yield f"channel.{n}", t


@dataclass
class BackboneWeights:
    cfg: ModelConfig
    patch_w: Tensor
    patch_b: Tensor
    blocks: list[BlockWeights]
    head_w: Tensor
    head_b: Tensor

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        """All parameters in module order, then declaration order."""
        yield "patch_embed.weight", self.patch_w
        yield "patch_embed.bias", self.patch_b
        for i, blk in enumerate(self.blocks):
            for n, t in blk.named_parameters():
                yield f"blocks.{i}.{n}", t
        yield "head.weight", self.head_w
        yield "head.bias", self.head_b

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    @property
    def dtype(self) -> np.dtype:
        return self.patch_w.dtype


def init_block(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> BlockWeights:
    c, hc = cfg.embed_dim, cfg.hidden_dim
    g1, b1 = _ln(c, dtype)
    spatial = SpatialMixWeights(g1, b1, MvcShiftLayer.initial(c, rng, dtype),
                                Wkv2dLayer.initial(c, cfg.directions, rng, dtype))
    shift = MvcShiftLayer.initial(c, rng, dtype)
    g2, b2 = _ln(c, dtype)
    channel = ChannelMixWeights(
        shift, g2, b2,
        w_r=Tensor(trunc_normal(rng, (c, c), dtype=dtype)),
        w_k=Tensor(trunc_normal(rng, (c, hc), dtype=dtype)),
        w_v=Tensor(trunc_normal(rng, (hc, c), dtype=dtype)),
        eca=Tensor(trunc_normal(rng, (cfg.eca_size,), dtype=dtype)),
    )
    return BlockWeights(spatial, channel)


def init_backbone(cfg: ModelConfig, seed: int = 0, dtype="f64") -> BackboneWeights:
    """Fresh weights: truncated normal (std 0.02) matrices and kernels, zero biases, unit LN."""
    dt = as_dtype(dtype)
    rng = np.random.default_rng(seed)
    c = cfg.embed_dim
    patch_in = cfg.in_channels * cfg.patch_size ** 2
    patch_w = Tensor(trunc_normal(rng, (patch_in, c), dtype=dt))
    blocks = [init_block(cfg, rng, dt) for _ in range(cfg.depth)]
    head_w = Tensor(trunc_normal(rng, (c, cfg.num_classes), dtype=dt))
    return BackboneWeights(cfg, patch_w, Tensor(np.zeros(c), dtype=dt), blocks, head_w,
                           Tensor(np.zeros(cfg.num_classes), dtype=dt))


def zero_backbone(cfg: ModelConfig, dtype="f64") -> BackboneWeights:
    """Weights with every non-LN parameter zero (LN gamma 1, beta 0)."""
    weights = init_backbone(cfg, seed=0, dtype=dtype)
    for name, t in weights.named_parameters():
        if not name.endswith("ln.gamma"):
            t.data[...] = 0
    return weights


# ------------------------------------------------------------------ forward


def patch_embed(image: Tensor, weight: Tensor, bias: Tensor, patch: int) -> tuple[Tensor, int, int]:
    """Split a C x H x W image into p x p patches and project each to the embed dim.

    Patch vectors are flattened channel-major (channel, row, col); tokens are
    ordered row-major over the patch grid.
    """
    if image.ndim != 3:
        raise ShapeError(f"image must be C x H x W, got {image.shape}")
    cin, hi, wi = image.shape
    if hi % patch or wi % patch:
        raise ConfigError(f"image {hi}x{wi} not divisible by patch size {patch}")
    h, w = hi // patch, wi // patch
    x = ops.reshape(image, (cin, h, patch, w, patch))
    x = ops.transpose(x, (1, 3, 0, 2, 4))
    x = ops.reshape(x, (h * w, cin * patch * patch))
    return ops.linear(x, weight, bias), h, w


def eca(x: Tensor, kernel: Tensor) -> Tensor:
    """Scale each channel by ``sigmoid(conv1d(mean over tokens))``."""
    if kernel.shape[0] % 2 == 0:
        raise ConfigError(f"ECA kernel size must be odd, got {kernel.shape[0]}")
    gate = ops.sigmoid(ops.conv1d_same(ops.mean(x, axis=0), kernel))
    return ops.channel_scale(x, gate)


def spatial_mix(x: Tensor, wts: SpatialMixWeights, h: int, w: int) -> Tensor:
    xs = mvc_shift(ops.layer_norm(x, wts.ln_gamma, wts.ln_beta), wts.shift, h, w)
    return wkv_2d(xs, wts.wkv, h, w)


def channel_mix_trace(x: Tensor, wts: ChannelMixWeights, h: int, w: int) -> tuple[Tensor, Tensor]:
    """Channel mix returning both the gated values and the channel-attended output."""
    xc = ops.layer_norm(mvc_shift(x, wts.shift, h, w), wts.ln_gamma, wts.ln_beta)
    r = ops.linear(xc, wts.w_r)
    k = ops.linear(xc, wts.w_k)
    v = ops.linear(ops.relu(k), wts.w_v)
    gated = ops.mul(ops.sigmoid(r), v)
    return gated, eca(gated, wts.eca)


def channel_mix(x: Tensor, wts: ChannelMixWeights, h: int, w: int) -> Tensor:
    return channel_mix_trace(x, wts, h, w)[1]


def rwkv2d_block(x: Tensor, wts: BlockWeights, h: int, w: int) -> Tensor:
    y = ops.add(x, spatial_mix(x, wts.spatial, h, w))
    return ops.add(y, channel_mix(y, wts.channel, h, w))


@dataclass
class BlockOutput:
    """Token features tapped at the end of each of the four stages."""

    stages: list[Tensor] = field(default_factory=list)
    h: int = 0
    w: int = 0


def backbone_forward(image: Tensor, weights: BackboneWeights) -> tuple[BlockOutput, Tensor]:
    """Run the backbone on one C x H x W image; returns stage taps and class logits."""
    cfg = weights.cfg
    x, h, w = patch_embed(image, weights.patch_w, weights.patch_b, cfg.patch_size)
    out = BlockOutput(h=h, w=w)
    ends = set(cfg.stage_ends())
    if 0 in ends:
        # empty leading stages tap the embedding itself
        out.stages += [x] * sum(1 for e in cfg.stage_ends() if e == 0)
    for i, blk in enumerate(weights.blocks, start=1):
        x = rwkv2d_block(x, blk, h, w)
        out.stages += [x] * sum(1 for e in cfg.stage_ends() if e == i)
    pooled = ops.reshape(ops.mean(x, axis=0), (1, cfg.embed_dim))
    logits = ops.reshape(ops.linear(pooled, weights.head_w, weights.head_b), (cfg.num_classes,))
    return out, logits

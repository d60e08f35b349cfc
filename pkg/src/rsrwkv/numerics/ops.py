"""Differentiable primitives.

Every op is pure: it reads ``.data`` of its inputs, never writes to them, and
returns a new :class:`Tensor`. Binary elementwise ops require identical
shapes; the only broadcast is the per-channel scaling used by channel
attention (:func:`channel_scale`).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import Tensor, ensure_tensor, make_result


def _same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"{name}: dtype mismatch {a.dtype} vs {b.dtype}")


def _rank(name: str, x: Tensor, rank: int) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{name}: expected rank {rank}, got shape {x.shape}")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(x: Tensor, s: float) -> Tensor:
    s = x.dtype.type(s)
    return make_result(x.data * s, (x,), lambda g: (g * s,), "scale")


def sigmoid(x: Tensor) -> Tensor:
    # exp(-softplus(-x)) never overflows
    y = np.exp(-np.logaddexp(0.0, -x.data)).astype(x.dtype, copy=False)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    y = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return make_result(y, (x,), lambda g: (np.where(mask, g, 0).astype(g.dtype),), "relu")


def add_n(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("add_n: empty input")
    for x in xs[1:]:
        _same_shape("add_n", xs[0], x)
    out = xs[0].data.copy()
    for x in xs[1:]:
        out = out + x.data
    return make_result(out, tuple(xs), lambda g: tuple(g for _ in xs), "add_n")


# ------------------------------------------------------------------- shaping


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(n) for n in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(axes))
    return make_result(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
        "transpose",
    )


def take(x: Tensor, index: np.ndarray, axis: int = 0) -> Tensor:
    """Gather slices along ``axis``; backward scatter-adds."""
    index = np.asarray(index, dtype=np.intp)
    src_shape = x.shape

    def bwd(g):
        gx = np.zeros(src_shape, dtype=g.dtype)
        np.add.at(gx, (slice(None),) * axis + (index,), g)
        return (gx,)

    return make_result(np.take(x.data, index, axis=axis), (x,), bwd, "take")


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise ShapeError("concat: empty input")
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return make_result(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), bwd, "concat")


def split(x: Tensor, parts: int, axis: int) -> list[Tensor]:
    """Split into ``parts`` equal slices along ``axis``."""
    n = x.shape[axis]
    if n % parts:
        raise ShapeError(f"split: extent {n} not divisible by {parts}")
    step = n // parts
    out = []
    for i in range(parts):
        idx = np.arange(i * step, (i + 1) * step)
        out.append(take(x, idx, axis=axis))
    return out


# ---------------------------------------------------------------- reductions


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_result(
        np.asarray(x.data.sum(), dtype=x.dtype),
        (x,),
        lambda g: (np.full(shape, g, dtype=x.dtype),),
        "sum_all",
    )


def mean(x: Tensor, axis: int) -> Tensor:
    """Mean over ``axis`` (dropped from the result)."""
    n = x.shape[axis]
    shape = x.shape

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).astype(x.dtype),)

    return make_result(x.data.mean(axis=axis), (x,), bwd, "mean")


# -------------------------------------------------------------------- layers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``y = x @ weight (+ bias)`` for ``x`` of shape T x Cin, weight Cin x Cout."""
    _rank("linear", x, 2)
    _rank("linear", weight, 2)
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: inner dims differ, {x.shape} @ {weight.shape}")
    xd, wd = x.data, weight.data
    y = xd @ wd
    if bias is None:
        return make_result(y, (x, weight), lambda g: (g @ wd.T, xd.T @ g), "linear")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    return make_result(
        y + bias.data,
        (x, weight, bias),
        lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)),
        "linear",
    )


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of a T x C tensor to zero mean, unit (biased) variance."""
    _rank("layer_norm", x, 2)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine params must have shape ({c},)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def bwd(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make_result(xhat * gd + beta.data, (x, gamma, beta), bwd, "layer_norm")


def depthwise_conv2d(x: Tensor, kernel: Tensor, dilation: int = 1) -> Tensor:
    """Per-channel k x k convolution with zero "same" padding.

    ``x`` is C x H x W, ``kernel`` is C x k x k with odd k. Cross-correlation
    convention (no kernel flip), as in every deep-learning framework.
    """
    _rank("depthwise_conv2d", x, 3)
    _rank("depthwise_conv2d", kernel, 3)
    c, h, w = x.shape
    kc, k, k2 = kernel.shape
    if kc != c or k != k2:
        raise ShapeError(f"depthwise_conv2d: kernel {kernel.shape} does not fit input {x.shape}")
    if k % 2 == 0:
        raise ConfigError(f"depthwise_conv2d: kernel size must be odd, got {k}")
    if dilation < 1:
        raise ConfigError(f"depthwise_conv2d: dilation must be positive, got {dilation}")
    pad = dilation * (k // 2)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    kd = kernel.data
    y = np.zeros_like(x.data)
    for a in range(k):
        for b in range(k):
            oy, ox = a * dilation, b * dilation
            y += kd[:, a, b, None, None] * xp[:, oy:oy + h, ox:ox + w]

    def bwd(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(kd)
        for a in range(k):
            for b in range(k):
                oy, ox = a * dilation, b * dilation
                gxp[:, oy:oy + h, ox:ox + w] += kd[:, a, b, None, None] * g
                gk[:, a, b] = (g * xp[:, oy:oy + h, ox:ox + w]).sum(axis=(1, 2))
        return gxp[:, pad:pad + h, pad:pad + w].copy(), gk

    return make_result(y, (x, kernel), bwd, "depthwise_conv2d")


def pointwise_conv(x: Tensor, weight: Tensor) -> Tensor:
    """1x1 convolution: ``y[d, i, j] = sum_c x[c, i, j] * weight[c, d]``."""
    _rank("pointwise_conv", x, 3)
    _rank("pointwise_conv", weight, 2)
    c, h, w = x.shape
    if weight.shape[0] != c:
        raise ShapeError(f"pointwise_conv: weight {weight.shape} does not fit {c} channels")
    flat = x.data.reshape(c, h * w)
    wd = weight.data
    y = (wd.T @ flat).reshape(wd.shape[1], h, w)

    def bwd(g):
        gf = g.reshape(wd.shape[1], h * w)
        return (wd @ gf).reshape(c, h, w), flat @ gf.T

    return make_result(y, (x, weight), bwd, "pointwise_conv")


def conv1d_same(x: Tensor, kernel: Tensor) -> Tensor:
    """1-D zero-padded cross-correlation of a length-C vector with an odd kernel."""
    _rank("conv1d_same", x, 1)
    _rank("conv1d_same", kernel, 1)
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ConfigError(f"conv1d_same: kernel size must be odd, got {k}")
    n = x.shape[0]
    pad = k // 2
    xp = np.pad(x.data, (pad, pad))
    kd = kernel.data
    y = np.zeros_like(x.data)
    for j in range(k):
        y += kd[j] * xp[j:j + n]

    def bwd(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(kd)
        for j in range(k):
            gxp[j:j + n] += kd[j] * g
            gk[j] = g @ xp[j:j + n]
        return gxp[pad:pad + n].copy(), gk

    return make_result(y, (x, kernel), bwd, "conv1d_same")


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """``y[t, c] = s[c] * x[t, c]`` (the one sanctioned broadcast)."""
    _rank("channel_scale", x, 2)
    if s.shape != (x.shape[1],):
        raise ShapeError(f"channel_scale: scale shape {s.shape} != ({x.shape[1]},)")
    xd, sd = x.data, s.data
    return make_result(
        xd * sd, (x, s), lambda g: (g * sd, (g * xd).sum(axis=0)), "channel_scale"
    )


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log-softmax probability of ``label`` for a 1-D logit vector."""
    _rank("cross_entropy", logits, 1)
    z = logits.data
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    p = np.exp(z - lse)

    def bwd(g):
        d = p.copy()
        d[label] -= 1.0
        return (g * d,)

    return make_result(np.asarray(lse - z[label], dtype=z.dtype), (logits,), bwd, "cross_entropy")


def constant(value, dtype="f64") -> Tensor:
    return ensure_tensor(value, dtype=dtype)

"""Dense tensors, reverse-mode differentiation, and layer primitives."""

from . import init, rtn
from .gradcheck import analytic_grads, check_gradients, numerical_grad, rel_error
from .ops import (
    add,
    add_n,
    channel_scale,
    concat,
    conv1d_same,
    cross_entropy,
    depthwise_conv2d,
    layer_norm,
    linear,
    mean,
    mul,
    pointwise_conv,
    relu,
    reshape,
    scale,
    sigmoid,
    split,
    sub,
    sum_all,
    take,
    transpose,
)
from .tensor import DTYPES, GradTape, Tensor, as_dtype, backward

__all__ = [
    "DTYPES", "GradTape", "Tensor", "as_dtype", "backward", "init", "rtn",
    "analytic_grads", "check_gradients", "numerical_grad", "rel_error",
    "add", "add_n", "channel_scale", "concat", "conv1d_same", "cross_entropy",
    "depthwise_conv2d", "layer_norm", "linear", "mean", "mul", "pointwise_conv",
    "relu", "reshape", "scale", "sigmoid", "split", "sub", "sum_all", "take",
    "transpose",
]

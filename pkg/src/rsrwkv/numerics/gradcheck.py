"""Central finite-difference checks against the tape's analytic gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import GradTape, Tensor


def rel_error(a, b) -> float:
    """``max|a - b| / max(1, max|a|, max|b|)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = max(1.0, float(np.abs(a).max()), float(np.abs(b).max()))
    return float(np.abs(a - b).max()) / denom


def numerical_grad(loss_fn: Callable[[], Tensor], leaf: Tensor, h: float = 1e-5,
                   coords=None) -> np.ndarray:
    """Central differences of ``loss_fn()`` with respect to ``leaf.data``.

    ``coords`` optionally restricts the probe to some flat indices; other
    entries of the result are left as NaN.
    """
    flat = leaf.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_fn().item()
        flat[i] = orig - h
        fm = loss_fn().item()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(leaf.shape)


def analytic_grads(loss_fn: Callable[[], Tensor], leaves: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    for leaf in leaves.values():
        leaf.requires_grad = True
    with GradTape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    return {name: leaf.grad.data.copy() for name, leaf in leaves.items()}


def check_gradients(loss_fn: Callable[[], Tensor], leaves: Mapping[str, Tensor],
                    h: float = 1e-5, max_coords: int | None = None,
                    rng: np.random.Generator | None = None) -> dict[str, float]:
    """Relative error between analytic and numeric gradients, per leaf.

    With ``max_coords`` set, leaves larger than that are probed on a random
    subset of entries (drawn from ``rng``).
    """
    analytic = analytic_grads(loss_fn, leaves)
    errors = {}
    for name, leaf in leaves.items():
        coords = None
        if max_coords is not None and leaf.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(leaf.size, size=max_coords, replace=False))
        num = numerical_grad(loss_fn, leaf, h=h, coords=coords)
        if coords is None:
            errors[name] = rel_error(analytic[name], num)
        else:
            errors[name] = rel_error(analytic[name].reshape(-1)[coords], num.reshape(-1)[coords])
    return errors

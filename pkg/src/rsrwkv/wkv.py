"""WKV attention kernels.

Three evaluators of the weighted key-value operator:

* :func:`wkv_causal` -- the causal recurrence (past tokens plus a bonus for
  the current one), linear time.
* :func:`bi_wkv_oracle` -- direct O(T^2 C) evaluation of the bidirectional
  form, the ground truth for everything else.
* :func:`bi_wkv_scan` -- the same values in O(T C) from one prefix and one
  suffix stream, with :func:`bi_wkv_backward` giving analytic gradients.

All streams are kept in log space: a running max exponent ``m`` per channel
plus sums rescaled by ``exp(-m)``, so nothing overflows even for keys near
the f32 exp limit.

:func:`bi_wkv` wraps the scan as a tape op for use inside models.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyInputError, ShapeError, UsageError
from .numerics.tensor import Tensor, make_result


@dataclass
class WkvParams:
    """Per-channel decay ``w`` and current-token bonus ``u``.

    One instance is shared by every scan direction of a layer.
    """

    w: Tensor
    u: Tensor

    def __post_init__(self):
        if self.w.shape != self.u.shape or self.w.ndim != 1:
            raise ShapeError(f"w and u must be equal-length vectors, got {self.w.shape}, {self.u.shape}")

    @property
    def channels(self) -> int:
        return self.w.shape[0]

    @classmethod
    def initial(cls, channels: int, dtype=np.float64) -> "WkvParams":
        # spread decays so channels differ at step 0
        w = np.linspace(-1.0, 1.0, channels) if channels > 1 else np.zeros(1)
        return cls(Tensor(w, dtype=dtype), Tensor(np.zeros(channels), dtype=dtype))


class StreamState(NamedTuple):
    """Exclusive-prefix stream, one row per position.

    ``a[t] * exp(m[t])`` is ``sum_{i<t} exp(-(t-1-i) * decay + k[i]) * v[i]``
    and ``b[t] * exp(m[t])`` the same sum without ``v``. Row 0 is empty
    (``m = -inf``, ``a = b = 0``).
    """

    m: np.ndarray
    a: np.ndarray
    b: np.ndarray


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _check(k: np.ndarray, v: np.ndarray, w: np.ndarray, u: np.ndarray) -> None:
    if k.ndim != 2 or k.shape != v.shape:
        raise ShapeError(f"k and v must both be T x C, got {k.shape} and {v.shape}")
    if k.shape[0] == 0:
        raise EmptyInputError("WKV needs at least one token")
    c = k.shape[1]
    if w.shape != (c,) or u.shape != (c,):
        raise ShapeError(f"w and u must have shape ({c},), got {w.shape} and {u.shape}")


def _stream(exps: np.ndarray, values: np.ndarray, decay: np.ndarray, reverse: bool,
            with_distance: bool = False):
    """Decayed exclusive scan in log space.

    ``exps`` is T x C, ``values`` is J x T x C. For each position t returns
    ``m[t]`` (T x C) and ``s[:, t]`` (J x T x C) with
    ``s[j, t] * exp(m[t]) = sum_{i before t} exp(-(dist - 1) * decay + exps[i]) * values[j, i]``,
    where "before" means i < t (forward) or i > t (``reverse``) and dist = |t - i|.
    With ``with_distance`` also returns the same sums weighted by ``dist - 1``.
    """
    n, c = exps.shape
    j = values.shape[0]
    dt = exps.dtype
    m_out = np.empty((n, c), dtype=dt)
    s_out = np.empty((j, n, c), dtype=dt)
    d_out = np.empty((j, n, c), dtype=dt) if with_distance else None
    m = np.full(c, -np.inf, dtype=dt)
    s = np.zeros((j, c), dtype=dt)
    sd = np.zeros((j, c), dtype=dt)
    order = range(n - 1, -1, -1) if reverse else range(n)
    for t in order:
        m_out[t] = m
        s_out[:, t] = s
        if with_distance:
            d_out[:, t] = sd
        shifted = m - decay
        m_new = np.maximum(shifted, exps[t])
        carry = np.exp(shifted - m_new)
        fresh = np.exp(exps[t] - m_new)
        if with_distance:
            sd = (sd + s) * carry
        s = s * carry + fresh * values[:, t]
        m = m_new
    return m_out, s_out, d_out


def prefix_stream(k, v, decay) -> StreamState:
    """Forward exclusive stream of ``(k, v)`` with per-step decay ``decay``."""
    k, v, decay = _arr(k), _arr(v), _arr(decay)
    values = np.stack([v, np.ones_like(v)])
    m, s, _ = _stream(k, values, decay, reverse=False)
    return StreamState(m, s[0], s[1])


def wkv_causal(k, v, w, u) -> np.ndarray:
    """Causal WKV in O(T C).

    ``out[t] = (sum_{i<t} e^{-(t-1-i) w + k_i} v_i + e^{u + k_t} v_t) / (same without v)``.
    """
    k, v, w, u = _arr(k), _arr(v), _arr(w), _arr(u)
    _check(k, v, w, u)
    st = prefix_stream(k, v, w)
    bonus = u + k
    m = np.maximum(st.m, bonus)
    old = np.exp(st.m - m)
    cur = np.exp(bonus - m)
    return (st.a * old + cur * v) / (st.b * old + cur)


def bi_wkv_oracle(k, v, w, u) -> np.ndarray:
    """Direct evaluation of the bidirectional WKV, O(T^2 C).

    Exponent of token i seen from t is ``-(|t-i| - 1) / T * w + k_i`` for
    i != t and ``u + k_t`` for i == t; each output row is max-shifted before
    exponentiation.
    """
    k, v, w, u = _arr(k), _arr(v), _arr(w), _arr(u)
    _check(k, v, w, u)
    n = k.shape[0]
    wn = w / n
    pos = np.arange(n)
    out = np.empty_like(v)
    for t in range(n):
        dist = np.abs(t - pos).astype(k.dtype)[:, None]
        e = -(dist - 1) * wn + k
        e[t] = u + k[t]
        e = e - e.max(axis=0)
        p = np.exp(e)
        out[t] = (p * v).sum(axis=0) / p.sum(axis=0)
    return out


@dataclass
class BiWkvSaved:
    """Forward intermediates needed by :func:`bi_wkv_backward`."""

    k: np.ndarray
    v: np.ndarray
    w: np.ndarray
    u: np.ndarray
    y: np.ndarray
    m: np.ndarray       # combined max exponent per (t, c)
    den: np.ndarray     # denominator / exp(m)
    self_w: np.ndarray  # e^{u+k_t} / denominator
    side_l: np.ndarray  # exp(mL - m) / den
    side_r: np.ndarray  # exp(mR - m) / den
    dist_l: np.ndarray  # 2 x T x C distance-weighted left sums (value, weight), scaled by exp(-mL)
    dist_r: np.ndarray


def bi_wkv_forward(k, v, w, u, save: bool = True) -> tuple[np.ndarray, BiWkvSaved | None]:
    """Linear-time bidirectional WKV; returns the output and (if ``save``) backward state."""
    k, v, w, u = _arr(k), _arr(v), _arr(w), _arr(u)
    _check(k, v, w, u)
    n = k.shape[0]
    decay = w / n
    values = np.stack([v, np.ones_like(v)])
    ml, sl, dl = _stream(k, values, decay, reverse=False, with_distance=save)
    mr, sr, dr = _stream(k, values, decay, reverse=True, with_distance=save)
    bonus = u + k
    m = np.maximum(np.maximum(ml, mr), bonus)
    el = np.exp(ml - m)
    er = np.exp(mr - m)
    es = np.exp(bonus - m)
    num = (sl[0] * el + sr[0] * er) + es * v
    den = (sl[1] * el + sr[1] * er) + es
    y = num / den
    if not save:
        return y, None
    saved = BiWkvSaved(k, v, w, u, y, m, den, es / den, el / den, er / den, dl, dr)
    return y, saved


def bi_wkv_scan(k, v, w, u) -> np.ndarray:
    """Bidirectional WKV in O(T C); matches :func:`bi_wkv_oracle`."""
    return bi_wkv_forward(k, v, w, u, save=False)[0]


def bi_wkv_backward(saved: BiWkvSaved | None, grad_out):
    """Gradients ``(grad_k, grad_v, grad_w, grad_u)`` of the scan, O(T C).

    With ``D_t`` the denominator and ``a_ti`` the weight of token i at t,
    ``dL/da_ti = g_t (v_i - y_t) / D_t``. The transposed sums
    ``sum_t a_ti g_t / D_t`` reuse the decayed stream with exponents
    ``-log D_t``; the decay gradient uses distance-weighted forward sums.
    """
    if saved is None:
        raise UsageError("bi_wkv_backward needs the state saved by bi_wkv_forward")
    g = _arr(grad_out)
    if g.shape != saved.y.shape:
        raise ShapeError(f"grad_out shape {g.shape} != output shape {saved.y.shape}")
    k, v, y = saved.k, saved.v, saved.y
    n = k.shape[0]
    decay = saved.w / n

    # weight and value sums over the other tokens, per output position
    dist_v = saved.dist_l[0] * saved.side_l + saved.dist_r[0] * saved.side_r
    dist_b = saved.dist_l[1] * saved.side_l + saved.dist_r[1] * saved.side_r
    grad_w = (g * (y * dist_b - dist_v)).sum(axis=0) / n

    grad_u = (saved.self_w * g * (v - y)).sum(axis=0)

    neg_log_den = -(saved.m + np.log(saved.den))
    values = np.stack([g, g * y])
    ml, sl, _ = _stream(neg_log_den, values, decay, reverse=False)
    mr, sr, _ = _stream(neg_log_den, values, decay, reverse=True)
    el = np.exp(k + ml)
    er = np.exp(k + mr)
    acc = sl * el + sr * er
    acc_q = acc[0] + saved.self_w * g
    acc_p = acc[1] + saved.self_w * g * y
    grad_v = acc_q
    grad_k = v * acc_q - acc_p
    return grad_k, grad_v, grad_w, grad_u


def bi_wkv(k: Tensor, v: Tensor, w: Tensor, u: Tensor) -> Tensor:
    """Tape-aware bidirectional WKV."""
    if len({k.dtype, v.dtype, w.dtype, u.dtype}) != 1:
        raise ShapeError("bi_wkv: all inputs must share one dtype")
    y, saved = bi_wkv_forward(k.data, v.data, w.data, u.data)
    return make_result(y, (k, v, w, u), lambda g: bi_wkv_backward(saved, g), "bi_wkv")

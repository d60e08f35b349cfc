"""WKV kernels: frozen high-precision values, oracle agreement, algebraic properties, gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsrwkv.errors import EmptyInputError, ShapeError, UsageError
from rsrwkv.numerics import GradTape, Tensor, check_gradients, ops, rel_error
from rsrwkv.verify import causal_direct
from rsrwkv.wkv import (
    WkvParams,
    bi_wkv,
    bi_wkv_backward,
    bi_wkv_forward,
    bi_wkv_oracle,
    bi_wkv_scan,
    prefix_stream,
    wkv_causal,
)

# Reference outputs from a 50-digit mpmath evaluation of the weighted
# averages, written independently of the streaming kernels.
K5 = np.array([0.3, -1.2, 0.7, 2.0, -0.4])[:, None]
V5 = np.array([1.0, -2.0, 0.5, 3.0, -1.5])[:, None]
W5, U5 = np.array([0.8]), np.array([0.25])
BI5 = [1.8323094014539799039, 1.8742556026955051844, 1.9296691160129056367,
       2.1576700106662789202, 2.0083894919100557319]
CAUSAL5 = [1.0, 0.331899583524073441, 0.37126703078557714405, 2.474688474297575432, 2.2841789346460377329]

# keys near the exp overflow threshold, negative decay
KBIG = np.array([80.0, -80.0, 79.5, 0.0])[:, None]
VBIG = np.array([1.0, 2.0, 3.0, 4.0])[:, None]
WBIG, UBIG = np.array([-3.0]), np.array([0.5])
BIBIG = [1.8756469982284037919, 1.7550813375962908707, 1.6416426016492140537, 1.2384058440442351119]
CAUSALBIG = [1.0, 1.0, 1.0948517463551335618, 1.0030023645134739831]


def rand_args(rng, n, c, scale=1.0):
    return (rng.normal(size=(n, c)) * scale, rng.normal(size=(n, c)),
            rng.normal(size=c), rng.normal(size=c))


@pytest.mark.parametrize("fn", [bi_wkv_scan, bi_wkv_oracle])
def test_bidirectional_frozen_values(fn):
    np.testing.assert_allclose(fn(K5, V5, W5, U5)[:, 0], BI5, rtol=1e-14)
    np.testing.assert_allclose(fn(KBIG, VBIG, WBIG, UBIG)[:, 0], BIBIG, rtol=1e-14)


@pytest.mark.parametrize("fn", [wkv_causal, causal_direct])
def test_causal_frozen_values(fn):
    np.testing.assert_allclose(fn(K5, V5, W5, U5)[:, 0], CAUSAL5, rtol=1e-14)
    np.testing.assert_allclose(fn(KBIG, VBIG, WBIG, UBIG)[:, 0], CAUSALBIG, rtol=1e-14)


def test_extreme_keys_in_f32_stay_finite():
    args = [a.astype(np.float32) for a in (KBIG, VBIG, WBIG, UBIG)]
    out = bi_wkv_scan(*args)
    assert out.dtype == np.float32
    np.testing.assert_allclose(out[:, 0], BIBIG, rtol=1e-5)


def test_large_bonus_selects_own_value(rng):
    k, v, w, _ = rand_args(rng, 12, 3)
    u = np.full(3, 50.0)
    np.testing.assert_allclose(bi_wkv_scan(k, v, w, u), v, atol=1e-15)
    np.testing.assert_allclose(wkv_causal(k, v, w, u), v, atol=1e-15)


def test_single_token_returns_value(rng):
    k, v, w, u = rand_args(rng, 1, 5)
    np.testing.assert_array_equal(bi_wkv_scan(k, v, w, u), v)
    np.testing.assert_array_equal(wkv_causal(k, v, w, u), v)


def test_causal_first_row_is_first_value(rng):
    k, v, w, u = rand_args(rng, 6, 4)
    np.testing.assert_array_equal(wkv_causal(k, v, w, u)[0], v[0])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_scan_matches_oracle(n, c, seed):
    rng = np.random.default_rng(seed)
    args = rand_args(rng, n, c, scale=3.0)
    assert rel_error(bi_wkv_scan(*args), bi_wkv_oracle(*args)) <= 1e-12
    assert rel_error(wkv_causal(*args), causal_direct(*args)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31 - 1))
def test_outputs_are_convex_combinations(n, seed):
    rng = np.random.default_rng(seed)
    k, v, w, u = rand_args(rng, n, 4, scale=5.0)
    for y in (bi_wkv_scan(k, v, w, u), wkv_causal(k, v, w, u)):
        assert np.all(y >= v.min(axis=0) - 1e-12)
        assert np.all(y <= v.max(axis=0) + 1e-12)


def test_affine_in_values_and_key_shift_invariant(rng):
    k, v, w, u = rand_args(rng, 17, 5)
    base = bi_wkv_scan(k, v, w, u)
    np.testing.assert_allclose(bi_wkv_scan(k, 2.5 * v - 1.0, w, u), 2.5 * base - 1.0, atol=1e-13)
    np.testing.assert_allclose(bi_wkv_scan(k + 7.0, v, w, u), base, atol=1e-13)


def test_reversal_covariance_is_exact(rng):
    k, v, w, u = rand_args(rng, 23, 6)
    flipped = bi_wkv_scan(k[::-1], v[::-1], w, u)[::-1]
    np.testing.assert_array_equal(flipped, bi_wkv_scan(k, v, w, u))


def test_decay_is_divided_by_length():
    # seen from t=3 with w=T=4: token i at distance d has weight e^{-(d-1)}, self weight e^u = 1
    k = np.zeros((4, 1))
    v = np.array([[1.0], [0.0], [0.0], [0.0]])
    out = bi_wkv_oracle(k, v, np.array([4.0]), np.array([0.0]))
    weights = np.exp(-np.array([2.0, 1.0, 0.0]))  # tokens 0, 1, 2
    assert out[3, 0] == pytest.approx(weights[0] / (weights.sum() + 1.0), rel=1e-15)
    np.testing.assert_allclose(bi_wkv_scan(k, v, np.array([4.0]), np.array([0.0])), out, rtol=1e-15)


def test_prefix_stream_state():
    k = np.array([[0.0], [1.0], [2.0]])
    v = np.array([[1.0], [2.0], [3.0]])
    st_ = prefix_stream(k, v, np.array([0.5]))
    assert st_.m[0, 0] == -np.inf
    # state at t=2 covers tokens 0 and 1: weights e^{-0.5}, e^{1}
    num = np.exp(-0.5) * 1 + np.exp(1.0) * 2
    den = np.exp(-0.5) + np.exp(1.0)
    assert st_.a[2, 0] / st_.b[2, 0] == pytest.approx(num / den, rel=1e-15)


@pytest.mark.parametrize("bad", [
    (np.zeros((3, 2)), np.zeros((3, 3)), np.zeros(2), np.zeros(2)),
    (np.zeros((3, 2)), np.zeros((3, 2)), np.zeros(3), np.zeros(2)),
    (np.zeros(3), np.zeros(3), np.zeros(1), np.zeros(1)),
])
def test_shape_errors(bad):
    with pytest.raises(ShapeError):
        bi_wkv_scan(*bad)
    with pytest.raises(ShapeError):
        wkv_causal(*bad)


def test_empty_input():
    empty = np.zeros((0, 2))
    with pytest.raises(EmptyInputError):
        bi_wkv_scan(empty, empty, np.zeros(2), np.zeros(2))


def test_backward_needs_saved_state():
    with pytest.raises(UsageError):
        bi_wkv_backward(None, np.zeros((2, 2)))


def test_backward_shape_check(rng):
    _, saved = bi_wkv_forward(*rand_args(rng, 4, 2))
    with pytest.raises(ShapeError):
        bi_wkv_backward(saved, np.zeros((3, 2)))


@pytest.mark.parametrize("n,c,scale", [(1, 2, 1.0), (2, 1, 1.0), (9, 3, 1.0), (16, 2, 4.0)])
def test_bi_wkv_gradients(n, c, scale, rng):
    k, v, w, u = (Tensor(a) for a in rand_args(rng, n, c, scale))
    g = Tensor(rng.normal(size=(n, c)))
    errs = check_gradients(lambda: ops.sum_all(ops.mul(bi_wkv(k, v, w, u), g)),
                           {"k": k, "v": v, "w": w, "u": u})
    assert max(errs.values()) <= 1e-6, errs


def test_bi_wkv_tape_matches_plain_forward(rng):
    args = rand_args(rng, 8, 3)
    leaves = [Tensor(a, requires_grad=True) for a in args]
    with GradTape():
        y = bi_wkv(*leaves)
    np.testing.assert_array_equal(y.data, bi_wkv_scan(*args))


def test_initial_params():
    p = WkvParams.initial(5)
    np.testing.assert_array_equal(p.w.data, np.linspace(-1, 1, 5))
    np.testing.assert_array_equal(p.u.data, np.zeros(5))
    assert WkvParams.initial(1).channels == 1
    with pytest.raises(ShapeError):
        WkvParams(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

"""Seeded property suites behind ``rsrwkv verify``.

Each check compares a fast path against a slow, independently written
reference on random inputs and yields one CSV row. Output contains no
timings, so two runs with one seed are byte-identical.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .model import (
    ModelConfig,
    backbone_forward,
    eca,
    init_backbone,
    init_block,
    patch_embed,
    rwkv2d_block,
)
from .analysis import count_params
from .numerics import ops
from .numerics.gradcheck import check_gradients, rel_error
from .numerics.tensor import Tensor, as_dtype
from .scan2d import Wkv2dLayer, build_scan_orders, wkv_2d, wkv_2d_heads
from .shift import MvcShiftLayer, mvc_shift
from .wkv import WkvParams, bi_wkv, bi_wkv_oracle, bi_wkv_scan, wkv_causal

SUITES = ("kernel", "scan", "shift", "model")
TOLERANCE = {"f64": 1e-12, "f32": 1e-5}


@dataclass
class Check:
    suite: str
    name: str
    cases: int
    passed: int
    max_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.passed == self.cases


def causal_direct(k, v, w, u) -> np.ndarray:
    """Direct O(T^2) summation of the causal WKV with per-row max shift."""
    n, c = k.shape
    out = np.empty_like(v)
    for t in range(n):
        e = np.empty((t + 1, c))
        for i in range(t):
            e[i] = -(t - 1 - i) * w + k[i]
        e[t] = u + k[t]
        p = np.exp(e - e.max(axis=0))
        out[t] = (p * v[:t + 1]).sum(axis=0) / p.sum(axis=0)
    return out


def _rand_wkv(rng, n, c, dtype=np.float64):
    return tuple(a.astype(dtype) for a in (
        rng.normal(size=(n, c)), rng.normal(size=(n, c)), rng.normal(size=c), rng.normal(size=c)))


def _run(suite, name, tol, cases: Iterator[float]) -> Check:
    errs = list(cases)
    return Check(suite, name, len(errs), sum(e <= tol for e in errs), max(errs), tol)


# ------------------------------------------------------------------ kernel


def kernel_suite(rng: np.random.Generator, dtype=np.float64, instances: int = 200) -> list[Check]:
    sizes = [(int(rng.integers(1, 65)), int(rng.integers(1, 17))) for _ in range(instances)]

    def scan_vs_oracle(dtype):
        for n, c in sizes:
            args = _rand_wkv(rng, n, c, dtype)
            ref = bi_wkv_oracle(*(a.astype(np.float64) for a in args))
            yield rel_error(bi_wkv_scan(*args), ref)

    def causal():
        for n, c in sizes:
            args = _rand_wkv(rng, n, c)
            yield rel_error(wkv_causal(*args), causal_direct(*args))

    def convex():
        for n, c in sizes[:50]:
            k, v, w, u = _rand_wkv(rng, n, c)
            lo, hi = v.min(axis=0), v.max(axis=0)
            for y in (bi_wkv_scan(k, v, w, u), wkv_causal(k, v, w, u)):
                slack = 1e-12 * max(1.0, np.abs(v).max())
                yield float(max(0.0, (lo - slack - y).max(), (y - hi - slack).max()))

    def reversal():
        for n, c in sizes[:50]:
            k, v, w, u = _rand_wkv(rng, n, c)
            yield float(np.abs(bi_wkv_scan(k[::-1], v[::-1], w, u)[::-1] - bi_wkv_scan(k, v, w, u)).max())

    label = "f32" if dtype == np.float32 else "f64"
    return [
        _run("kernel", f"bi_wkv_scan_vs_oracle_{label}", TOLERANCE[label], scan_vs_oracle(dtype)),
        _run("kernel", "wkv_causal_vs_direct_sum", 1e-12, causal()),
        _run("kernel", "convexity", 0.0, convex()),
        _run("kernel", "reversal_covariance", 0.0, reversal()),
    ]


# -------------------------------------------------------------------- scan


def _heads_reference(k, v, w, u, h, wd, directions):
    orders = build_scan_orders(h, wd)
    heads = []
    for d in directions:
        o = orders[d]
        heads.append(bi_wkv_oracle(k[o.inverse], v[o.inverse], w, u)[o.forward])
    return np.concatenate(heads, axis=1)


def scan_suite(rng: np.random.Generator, dtype=np.float64) -> list[Check]:
    def inverses():
        for h in range(1, 10):
            for w in range(1, 10):
                for o in build_scan_orders(h, w).values():
                    x = rng.normal(size=h * w)
                    ok = (np.array_equal(o.rescan(o.scan(x)), x)
                          and np.array_equal(np.sort(o.inverse), np.arange(h * w)))
                    yield 0.0 if ok else 1.0

    def single_row():
        for w in range(1, 10):
            c = 8
            k, v = rng.normal(size=(w, c // 4)), rng.normal(size=(w, c // 4))
            p = WkvParams.initial(c // 4)
            heads = wkv_2d_heads(Tensor(k), Tensor(v), p, ("horizontal", "vertical", "diag_anti", "diag_main"), 1, w).data
            ref = bi_wkv_scan(k, v, p.w.data, p.u.data)
            yield float(max(np.abs(heads[:, i * 2:(i + 1) * 2] - ref).max() for i in range(4)))

    def composed():
        for _ in range(20):
            h, w, c = int(rng.integers(1, 6)), int(rng.integers(1, 6)), 8
            layer = Wkv2dLayer.initial(c, 4, rng)
            layer.params.w.data[:] = rng.normal(size=2)
            layer.params.u.data[:] = rng.normal(size=2)
            x = rng.normal(size=(h * w, c))
            got = wkv_2d(Tensor(x), layer, h, w).data
            r, k, v = x @ layer.w_r.data, x @ layer.w_k.data, x @ layer.w_v.data
            heads = _heads_reference(k, v, layer.params.w.data, layer.params.u.data, h, w, layer.directions)
            ref = ((1 / (1 + np.exp(-r))) * heads) @ layer.w_o.data
            yield rel_error(got, ref)

    def grads():
        for _ in range(3):
            n, c = 8, 3
            k, v, w, u = (Tensor(a) for a in _rand_wkv(rng, n, c))
            g = rng.normal(size=(n, c))
            leaves = {"k": k, "v": v, "w": w, "u": u}
            errs = check_gradients(lambda: ops.sum_all(ops.mul(bi_wkv(k, v, w, u), Tensor(g))), leaves)
            yield max(errs.values())

    return [
        _run("scan", "order_inverse_identity", 0.0, inverses()),
        _run("scan", "single_row_heads_equal_bi_wkv", 0.0, single_row()),
        _run("scan", "wkv_2d_vs_oracle_composition", 1e-12, composed()),
        _run("scan", "bi_wkv_gradient", 1e-6, grads()),
    ]


# ------------------------------------------------------------------- shift


def conv_loop(x, kernel, dilation):
    c, h, w = x.shape
    k = kernel.shape[1]
    r = k // 2
    out = np.zeros_like(x)
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for a in range(k):
                    for b in range(k):
                        ii, jj = i + (a - r) * dilation, j + (b - r) * dilation
                        if 0 <= ii < h and 0 <= jj < w:
                            acc += kernel[ch, a, b] * x[ch, ii, jj]
                out[ch, i, j] = acc
    return out


def mvc_reference(x, layer, h, w):
    grid = x.T.reshape(-1, h, w)
    total = grid.copy()
    for dw, pw, d in zip(layer.depthwise, layer.pointwise, layer.dilations):
        conv = conv_loop(grid, dw.data, d)
        total += np.einsum("chw,cd->dhw", conv, pw.data)
    return total.reshape(total.shape[0], -1).T


def _random_mvc(rng, c):
    layer = MvcShiftLayer.initial(c, rng)
    for t in layer.depthwise + layer.pointwise:
        t.data[...] = rng.normal(size=t.shape) * 0.5
    return layer


def shift_suite(rng: np.random.Generator, dtype=np.float64) -> list[Check]:
    def forward():
        for _ in range(5):
            h, w, c = int(rng.integers(1, 7)), int(rng.integers(1, 7)), 4
            layer = _random_mvc(rng, c)
            x = rng.normal(size=(h * w, c))
            yield rel_error(mvc_shift(Tensor(x), layer, h, w).data, mvc_reference(x, layer, h, w))

    def linearity():
        for _ in range(5):
            h, w, c = 5, 5, 4
            layer = _random_mvc(rng, c)
            x, y = rng.normal(size=(h * w, c)), rng.normal(size=(h * w, c))
            a, b = rng.normal(size=2)
            lhs = mvc_shift(Tensor(a * x + b * y), layer, h, w).data
            rhs = a * mvc_shift(Tensor(x), layer, h, w).data + b * mvc_shift(Tensor(y), layer, h, w).data
            yield rel_error(lhs, rhs)

    def support():
        h = w = 11
        layer = _random_mvc(rng, 4)
        x = rng.normal(size=(h * w, 4))
        base = mvc_shift(Tensor(x), layer, h, w).data
        for (pi, pj) in [(5, 5), (0, 0), (3, 8)]:
            x2 = x.copy()
            x2[pi * w + pj] += 1.0
            diff = np.abs(mvc_shift(Tensor(x2), layer, h, w).data - base).max(axis=1).reshape(h, w)
            ii, jj = np.indices((h, w))
            outside = np.maximum(np.abs(ii - pi), np.abs(jj - pj)) > 3
            yield float(diff[outside].max()) if outside.any() else 0.0

    def grads():
        h, w, c = 4, 4, 4
        layer = _random_mvc(rng, c)
        x = Tensor(rng.normal(size=(h * w, c)))
        g = Tensor(rng.normal(size=(h * w, c)))
        leaves = {"x": x}
        for i, t in enumerate(layer.depthwise + layer.pointwise):
            leaves[f"p{i}"] = t
        errs = check_gradients(lambda: ops.sum_all(ops.mul(mvc_shift(x, layer, h, w), g)), leaves)
        yield max(errs.values())

    return [
        _run("shift", "mvc_shift_vs_loop_oracle", 1e-12, forward()),
        _run("shift", "mvc_shift_linearity", 1e-12, linearity()),
        _run("shift", "mvc_shift_7x7_support", 0.0, support()),
        _run("shift", "mvc_shift_gradient", 1e-6, grads()),
    ]


# ------------------------------------------------------------------- model


def model_suite(rng: np.random.Generator, dtype=np.float64) -> list[Check]:
    def eca_formula():
        for _ in range(10):
            n, c, k = int(rng.integers(1, 10)), int(rng.integers(1, 12)), 3
            x, ker = rng.normal(size=(n, c)), rng.normal(size=k)
            pooled = np.pad(x.mean(axis=0), 1)
            s = 1 / (1 + np.exp(-np.array([ker @ pooled[i:i + k] for i in range(c)])))
            yield rel_error(eca(Tensor(x), Tensor(ker)).data, x * s)

    def block_grad():
        cfg = ModelConfig(embed_dim=8, patch_size=4, stage_depths=(1, 0, 0, 0), num_classes=2)
        blk = init_block(cfg, rng)
        for _, t in blk.named_parameters():
            t.data[...] = rng.normal(size=t.shape) * 0.3
        x = Tensor(rng.normal(size=(9, 8)))
        leaves = {"x": x, **dict(blk.named_parameters())}
        errs = check_gradients(lambda: ops.sum_all(rwkv2d_block(x, blk, 3, 3)), leaves)
        yield max(errs.values())

    def residual_identity():
        cfg = ModelConfig(embed_dim=8, patch_size=4, stage_depths=(1, 1, 1, 1), num_classes=3)
        wts = init_backbone(cfg, seed=int(rng.integers(1 << 30)))
        for name, t in wts.named_parameters():
            if not (name.startswith("patch_embed") or "ln." in name):
                t.data[...] = 0
        img = Tensor(rng.random((3, 12, 8)))
        out, _ = backbone_forward(img, wts)
        emb = patch_embed(img, wts.patch_w, wts.patch_b, cfg.patch_size)[0].data
        yield float(max(np.abs(s.data - emb).max() for s in out.stages))

    def param_count():
        for c, dirs, rate in [(8, 4, 2), (16, 2, 1), (12, 1, 3)]:
            cfg = ModelConfig(embed_dim=c, directions=dirs, hidden_rate=rate, patch_size=4,
                              stage_depths=(1, 2, 0, 1), num_classes=5)
            stored = sum(t.size for t in init_backbone(cfg).parameters())
            yield float(abs(stored - count_params(cfg).total))

    return [
        _run("model", "eca_vs_formula", 1e-15, eca_formula()),
        _run("model", "block_gradient", 1e-5, block_grad()),
        _run("model", "residual_identity", 0.0, residual_identity()),
        _run("model", "param_count_matches_storage", 0.0, param_count()),
    ]


_SUITES: dict[str, Callable[..., list[Check]]] = {
    "kernel": kernel_suite,
    "scan": scan_suite,
    "shift": shift_suite,
    "model": model_suite,
}


def run_suites(suite: str, seed: int, dtype: str = "f64") -> list[Check]:
    """Run one named suite (or ``all``) with a seeded generator per suite.

    ``dtype`` selects the precision of the kernel equivalence check; the
    remaining checks are f64 reference comparisons.
    """
    if suite != "all" and suite not in _SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)} or all")
    names = SUITES if suite == "all" else (suite,)
    out = []
    for name in names:
        rng = np.random.default_rng([seed, SUITES.index(name)])
        out.extend(_SUITES[name](rng, as_dtype(dtype).type))
    return out


def report_csv(checks: list[Check]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["suite", "check", "cases", "passed", "max_rel_err", "tolerance", "status"])
    for c in checks:
        w.writerow([c.suite, c.name, c.cases, c.passed, repr(c.max_err), repr(c.tol), "pass" if c.ok else "FAIL"])
    return buf.getvalue()

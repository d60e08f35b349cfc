"""Wall-clock scaling of the WKV kernels with a log-log slope fit."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .numerics.tensor import Tensor
from .scan2d import Wkv2dLayer, wkv_2d
from .wkv import bi_wkv_oracle, bi_wkv_scan

KERNELS = ("bi_wkv_scan", "bi_wkv_oracle", "wkv_2d")


@dataclass
class BenchResult:
    kernel: str
    sizes: list[int]
    median_ns: list[int]

    @property
    def slope(self) -> float:
        """Least-squares slope of log(time) against log(T)."""
        if len(self.sizes) < 2:
            return float("nan")
        x, y = np.log(self.sizes), np.log(self.median_ns)
        return float(np.polyfit(x, y, 1)[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["T", "median_ns"])
        for t, ns in zip(self.sizes, self.median_ns):
            w.writerow([t, ns])
        w.writerow(["slope", repr(self.slope)])
        return buf.getvalue()


def grid_for(tokens: int) -> tuple[int, int]:
    """Most nearly square ``h x w`` factorisation of ``tokens``."""
    h = int(math.isqrt(tokens))
    while tokens % h:
        h -= 1
    return h, tokens // h


def _runner(kernel: str, t: int, channels: int, rng: np.random.Generator):
    if kernel == "wkv_2d":
        h, w = grid_for(t)
        layer = Wkv2dLayer.initial(channels, 4, rng)
        x = Tensor(rng.normal(size=(t, channels)))
        return lambda: wkv_2d(x, layer, h, w)
    k, v = rng.normal(size=(t, channels)), rng.normal(size=(t, channels))
    w, u = rng.normal(size=channels), rng.normal(size=channels)
    fn = bi_wkv_scan if kernel == "bi_wkv_scan" else bi_wkv_oracle
    return lambda: fn(k, v, w, u)


def bench(kernel: str, sizes, reps: int = 5, channels: int = 64, seed: int = 0) -> BenchResult:
    """Median time per call for each ``T`` in ``sizes`` after one warm-up call per size."""
    sizes = [int(s) for s in sizes]
    if kernel not in KERNELS:
        raise UsageError(f"unknown kernel {kernel!r}; choose from {', '.join(KERNELS)}")
    if not sizes:
        raise UsageError("bench needs at least one size")
    if reps < 1:
        raise UsageError(f"reps must be positive, got {reps}")
    if min(sizes) < 1 or sizes != sorted(sizes):
        raise UsageError("sizes must be positive and ascending")
    rng = np.random.default_rng(seed)
    runs = [_runner(kernel, t, channels, rng) for t in sizes]
    for run in runs:
        run()
    # sizes are interleaved within each repetition so that slow periods of a
    # shared machine hit every size instead of biasing one end of the fit
    times = [[] for _ in sizes]
    for _ in range(reps):
        for run, bucket in zip(runs, times):
            start = time.perf_counter_ns()
            run()
            bucket.append(time.perf_counter_ns() - start)
    return BenchResult(kernel, sizes, [int(np.median(b)) for b in times])

"""Benchmark harness plumbing (timing claims live in the acceptance suite)."""

import math

import pytest

from rsrwkv.bench import BenchResult, bench, grid_for
from rsrwkv.errors import UsageError


@pytest.mark.parametrize("kernel", ["bi_wkv_scan", "bi_wkv_oracle", "wkv_2d"])
def test_bench_rows(kernel):
    res = bench(kernel, [16, 64], reps=1, channels=8)
    lines = res.to_csv().splitlines()
    assert lines[0] == "T,median_ns"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["16", "64", "slope"]
    assert all(ns > 0 for ns in res.median_ns)


def test_slope_of_exact_power_law():
    res = BenchResult("x", [10, 100, 1000], [5, 500, 50000])
    assert res.slope == pytest.approx(2.0)
    assert math.isnan(BenchResult("x", [10], [1]).slope)


@pytest.mark.parametrize("args", [
    ("bi_wkv_scan", [], 1), ("bi_wkv_scan", [8], 0), ("bi_wkv_scan", [16, 8], 1), ("nope", [8], 1),
])
def test_bench_usage_errors(args):
    kernel, sizes, reps = args
    with pytest.raises(UsageError):
        bench(kernel, sizes, reps=reps)


@pytest.mark.parametrize("t,hw", [(1, (1, 1)), (12, (3, 4)), (16, (4, 4)), (13, (1, 13)), (1024, (32, 32))])
def test_grid_for(t, hw):
    assert grid_for(t) == hw

"""Parameter and MAC accounting, ERF maps, channel statistics."""

import numpy as np
import pytest

from rsrwkv.analysis import (
    center_token_probe,
    channel_stats,
    channel_stats_csv,
    count_flops,
    count_params,
    eca_channel_stats,
    erf_map,
    rkv_projection_params,
    write_pgm,
)
from rsrwkv.errors import DegenerateReportError, ShapeError
from rsrwkv.model import TOY_CONFIG, ModelConfig, init_backbone, zero_backbone
from rsrwkv.numerics import Tensor, ops
from rsrwkv.scan2d import Wkv2dLayer


@pytest.mark.parametrize("c", [8, 16, 64, 192])
@pytest.mark.parametrize("dirs,factor", [(1, 3.0), (2, 2.0), (4, 1.5)])
def test_rkv_subtotals(c, dirs, factor):
    assert rkv_projection_params(c, dirs) == factor * c * c
    layer = Wkv2dLayer.initial(c, dirs, np.random.default_rng(0))
    assert layer.w_r.size + layer.w_k.size + layer.w_v.size == factor * c * c


@pytest.mark.parametrize("cfg", [
    TOY_CONFIG,
    ModelConfig(patch_size=4, embed_dim=12, directions=2, hidden_rate=3, stage_depths=(0, 2, 1, 0), num_classes=7),
    ModelConfig(patch_size=2, embed_dim=4, directions=1, stage_depths=(1, 1, 0, 0), eca_kernel=1),
])
def test_param_count_equals_storage(cfg):
    stored = sum(t.size for t in init_backbone(cfg).parameters())
    assert count_params(cfg).total == stored


def test_default_param_count_closed_form():
    c = 192
    per_block = 2 * 3 * (9 * c + c * c) + 1.5 * c * c + c * c + 2 * (c // 4) + 4 * c + c * c + 4 * c * c + 5
    expected = 16 * 16 * 3 * c + c + 12 * per_block + c * 45 + 45
    pc = count_params(ModelConfig())
    assert pc.total == expected == 6_263_145
    assert pc.to_csv().splitlines()[-1] == "total,6263145"


def test_flop_components_scale_with_tokens():
    cfg = ModelConfig()
    small, large = count_flops(cfg, 112, 112), count_flops(cfg, 224, 224)
    assert large.tokens == 4 * small.tokens == 196
    assert large.body_macs == 4 * small.body_macs
    assert large.macs["head"] == small.macs["head"]
    assert large.flops == 2 * large.total_macs


def test_flop_count_toy_by_hand():
    cfg = ModelConfig(patch_size=8, embed_dim=8, stage_depths=(1, 0, 0, 0), num_classes=2)
    rep = count_flops(cfg, 16, 8)
    t, c = 2, 8
    mvc = 3 * (9 * c + c * c) * t
    assert rep.macs["patch_embed"] == t * 192 * c
    assert rep.macs["spatial"] == mvc + t * (c * c + 2 * c * 2) + t * c * c
    assert rep.macs["wkv"] == 6 * t * c
    assert rep.macs["channel"] == mvc + t * (c * c + 2 * c * 16)
    assert rep.macs["eca_conv"] == c * 3
    assert rep.macs["head"] == c * 2


def test_default_flops_value():
    rep = count_flops(ModelConfig(), 224, 224)
    assert rep.total_macs == 1_226_522_304


def _images(n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.random((3, size, size)) for _ in range(n)]


def test_erf_contract():
    wts = init_backbone(TOY_CONFIG, seed=4)
    rep = erf_map(center_token_probe(wts), _images(2))
    assert rep.grid.shape == (16, 16)
    assert rep.grid.min() >= 0 and rep.grid.max() == 1.0
    assert 0 <= rep.high_ratio <= 1
    again = erf_map(center_token_probe(init_backbone(TOY_CONFIG, seed=4)), _images(2))
    assert again.high_ratio == rep.high_ratio
    assert again.grid.tobytes() == rep.grid.tobytes()


def test_erf_threads_match_serial(monkeypatch):
    wts = init_backbone(TOY_CONFIG, seed=4)
    serial = erf_map(center_token_probe(wts), _images(3))
    monkeypatch.setenv("RSRWKV_THREADS", "3")
    threaded = erf_map(center_token_probe(wts), _images(3))
    assert threaded.grid.tobytes() == serial.grid.tobytes()


def test_erf_pixel_probe_by_hand():
    # probe = 2 * pixel(0, 1, 2) - pixel(1, 0, 0): G is 2 and 1 at those two pixels
    def probe(x):
        sel = ops.take(ops.reshape(x, (18,)), np.array([0 * 9 + 1 * 3 + 2, 9]), axis=0)
        return ops.sum_all(ops.mul(sel, Tensor([2.0, -1.0])))

    rep = erf_map(probe, [np.zeros((2, 3, 3))])
    expected = np.zeros((3, 3))
    expected[1, 2] = 1.0
    expected[0, 0] = np.log(2) / np.log(3)
    np.testing.assert_allclose(rep.grid, expected, rtol=1e-15)
    assert rep.high_ratio == pytest.approx(2 / 9)


def test_erf_degenerate_and_empty():
    wts = zero_backbone(TOY_CONFIG)
    with pytest.raises(DegenerateReportError):
        erf_map(center_token_probe(wts), _images(1))
    with pytest.raises(ShapeError):
        erf_map(center_token_probe(wts), [])


def test_erf_csv_and_pgm(tmp_path):
    rep = erf_map(center_token_probe(init_backbone(TOY_CONFIG, seed=1)), _images(1))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "row,col,log_contribution"
    assert len(lines) == 1 + 256
    path = tmp_path / "erf.pgm"
    rep.write_pgm(path)
    data = path.read_bytes()
    assert data.startswith(b"P5\n16 16\n255\n")
    assert len(data) == len(b"P5\n16 16\n255\n") + 256
    assert max(data[len(b"P5\n16 16\n255\n"):]) == 255


def test_write_pgm_rejects_3d(tmp_path):
    with pytest.raises(ShapeError):
        write_pgm(tmp_path / "x.pgm", np.zeros((2, 2, 2)))


def test_channel_stats(rng):
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    before, after = channel_stats(a, Tensor(b))
    np.testing.assert_allclose(before, np.abs(a).mean(axis=0))
    csv_text = channel_stats_csv(before, after).splitlines()
    assert csv_text[0] == "channel,mean_abs_before,mean_abs_after"
    assert len(csv_text) == 4
    with pytest.raises(ShapeError):
        channel_stats(a, b[:4])


def test_eca_channel_stats_gate_bounds(rng):
    wts = init_backbone(TOY_CONFIG, seed=2)
    before, after = eca_channel_stats(Tensor(rng.random((3, 16, 16))), wts, block=1)
    assert before.shape == after.shape == (16,)
    # the channel gate is a sigmoid, so it can only shrink magnitudes
    assert np.all(after <= before + 1e-15)


def test_erf_single_pixel_dependency():
    def probe(x):
        return ops.sum_all(ops.take(ops.reshape(x, (3 * 4 * 5,)), np.array([27]), axis=0))

    rep = erf_map(probe, [np.zeros((3, 4, 5))])
    expected = np.zeros((4, 5))
    expected[1, 2] = 1.0  # flat 27 = channel 1, pixel 7
    np.testing.assert_array_equal(rep.grid, expected)
    assert rep.high_ratio == 1 / 20

"""Backbone assembly: config rules, patch embedding, ECA, block and end-to-end gradients."""

import numpy as np
import pytest

from rsrwkv.errors import ConfigError, ShapeError
from rsrwkv.model import (
    TOY_CONFIG,
    ModelConfig,
    backbone_forward,
    channel_mix,
    eca,
    eca_kernel_size,
    init_backbone,
    init_block,
    patch_embed,
    rwkv2d_block,
    spatial_mix,
    zero_backbone,
)
from rsrwkv.numerics import Tensor, check_gradients, ops

SMALL = ModelConfig(patch_size=4, embed_dim=8, stage_depths=(1, 0, 1, 0), num_classes=3)


def _perturb(named, rng, scale=0.3):
    for _, t in named:
        t.data[...] = t.data + rng.normal(size=t.shape) * scale


@pytest.mark.parametrize("c,k", [(2, 1), (8, 3), (16, 3), (32, 3), (64, 3), (128, 5), (192, 5), (512, 5)])
def test_eca_kernel_size(c, k):
    assert eca_kernel_size(c) == k


def test_default_config():
    cfg = ModelConfig()
    assert (cfg.patch_size, cfg.embed_dim, cfg.depth, cfg.hidden_dim, cfg.num_classes) == (16, 192, 12, 384, 45)
    assert cfg.eca_size == 5
    assert cfg.grid(224, 224) == (14, 14)
    assert cfg.stage_ends() == [3, 6, 9, 12]


@pytest.mark.parametrize("kwargs", [
    {"directions": 3}, {"embed_dim": 10, "directions": 4}, {"stage_depths": (1, 2, 3)},
    {"stage_depths": (1, -1, 1, 1)}, {"eca_kernel": 4}, {"patch_size": 0}, {"hidden_rate": 0},
])
def test_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs)


def test_grid_requires_divisible_extent():
    with pytest.raises(ConfigError):
        ModelConfig().grid(225, 224)


def test_patch_embed_layout(rng):
    img = rng.normal(size=(3, 8, 12))
    w = Tensor(rng.normal(size=(3 * 16, 5)))
    b = Tensor(rng.normal(size=5))
    tokens, h, wd = patch_embed(Tensor(img), w, b, 4)
    assert (h, wd) == (2, 3)
    # token 4 is patch row 1, col 1; its vector is flattened channel, row, col
    vec = img[:, 4:8, 4:8].reshape(-1)
    np.testing.assert_allclose(tokens.data[4], vec @ w.data + b.data, atol=1e-13)


def test_patch_embed_errors(rng):
    w, b = Tensor(np.zeros((48, 2))), Tensor(np.zeros(2))
    with pytest.raises(ConfigError):
        patch_embed(Tensor(np.zeros((3, 6, 8))), w, b, 4)
    with pytest.raises(ShapeError):
        patch_embed(Tensor(np.zeros((8, 8))), w, b, 4)


def test_eca_formula(rng):
    x = rng.normal(size=(6, 7))
    ker = rng.normal(size=5)
    pooled = np.pad(x.mean(axis=0), 2)
    gate = 1 / (1 + np.exp(-np.array([ker @ pooled[i:i + 5] for i in range(7)])))
    np.testing.assert_allclose(eca(Tensor(x), Tensor(ker)).data, x * gate, atol=1e-15)
    with pytest.raises(ConfigError):
        eca(Tensor(x), Tensor(np.ones(2)))


def test_zero_weights_give_bias_logits():
    cfg = SMALL
    wts = zero_backbone(cfg)
    wts.head_b.data[:] = [0.5, -1.0, 2.0]
    _, logits = backbone_forward(Tensor(np.random.default_rng(0).random((3, 8, 8))), wts)
    np.testing.assert_array_equal(logits.data, [0.5, -1.0, 2.0])


def test_stage_taps_follow_depths(rng):
    wts = init_backbone(SMALL, seed=3)
    out, logits = backbone_forward(Tensor(rng.random((3, 8, 12))), wts)
    assert (out.h, out.w) == (2, 3)
    assert len(out.stages) == 4
    assert out.stages[0] is out.stages[1]
    assert out.stages[2] is out.stages[3]
    assert logits.shape == (3,)


def test_init_is_seeded():
    a = [t.data for t in init_backbone(SMALL, seed=1).parameters()]
    b = [t.data for t in init_backbone(SMALL, seed=1).parameters()]
    c = [t.data for t in init_backbone(SMALL, seed=2).parameters()]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_f32_forward(rng):
    wts = init_backbone(SMALL, seed=0, dtype="f32")
    _, logits = backbone_forward(Tensor(rng.random((3, 8, 8)), dtype="f32"), wts)
    assert logits.dtype == np.float32


# gradient checks on every composite


def _block(rng):
    blk = init_block(SMALL, rng)
    _perturb(blk.named_parameters(), rng)
    return blk


def test_eca_gradients(rng):
    x, ker = Tensor(rng.normal(size=(5, 6))), Tensor(rng.normal(size=3))
    errs = check_gradients(lambda: ops.sum_all(ops.mul(eca(x, ker), x)), {"x": x, "k": ker})
    assert max(errs.values()) <= 1e-6


@pytest.mark.parametrize("part", ["spatial", "channel", "block"])
def test_block_level_gradients(part, rng):
    blk = _block(rng)
    x = Tensor(rng.normal(size=(6, 8)))
    g = Tensor(rng.normal(size=(6, 8)))
    fn = {
        "spatial": lambda: spatial_mix(x, blk.spatial, 2, 3),
        "channel": lambda: channel_mix(x, blk.channel, 2, 3),
        "block": lambda: rwkv2d_block(x, blk, 2, 3),
    }[part]
    params = blk.spatial if part == "spatial" else blk.channel if part == "channel" else blk
    leaves = {"x": x, **dict(params.named_parameters())}
    errs = check_gradients(lambda: ops.sum_all(ops.mul(fn(), g)), leaves)
    assert max(errs.values()) <= 1e-5, errs


def test_end_to_end_toy_gradients(rng):
    wts = init_backbone(TOY_CONFIG, seed=0)
    _perturb(wts.named_parameters(), rng, scale=0.2)
    img = Tensor(rng.random((3, 16, 16)), requires_grad=True)
    leaves = {"image": img, **dict(wts.named_parameters())}
    errs = check_gradients(lambda: ops.cross_entropy(backbone_forward(img, wts)[1], 1), leaves,
                           max_coords=6, rng=np.random.default_rng(0))
    assert max(errs.values()) <= 1e-5, max(errs.items(), key=lambda kv: kv[1])


def test_eca_saturates_to_identity(rng):
    x = np.abs(rng.normal(size=(6, 5))) + 0.5
    ker = np.array([0.0, 50.0, 0.0])
    np.testing.assert_allclose(eca(Tensor(x), Tensor(ker)).data, x, rtol=1e-6)

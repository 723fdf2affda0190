import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import all_4x4_masks, receptive_field_oracle

from daftgan.autograd import Conv2d, Tensor, no_grad
from daftgan.encoder import (ConfigError, GeometryError, SMCBlock, SMCEncoder, encode, mask_normalize, mask_update,
                             smc_block)

GEOMETRIES = [(3, 1, 1), (4, 2, 1), (2, 2, 0), (3, 2, 0)]


def test_mask_update_examples():
    assert mask_update(np.ones((2, 2)), 2, 2, 0).tolist() == [[1.0]]
    assert mask_update(np.array([[0.0, 1.0], [1.0, 1.0]]), 2, 2, 0).tolist() == [[0.0]]


@pytest.mark.parametrize("k,s,p", GEOMETRIES)
def test_mask_update_exhaustive_4x4(k, s, p):
    masks = all_4x4_masks()
    assert len(masks) == 2 ** 16
    assert np.array_equal(mask_update(masks, k, s, p), receptive_field_oracle(masks, k, s, p))


def test_mask_update_random_up_to_16():
    rng = np.random.default_rng(0)
    total = 0
    for size in range(5, 17):
        for k, s, p in GEOMETRIES:
            n = 210
            density = rng.uniform(0.0, 1.0, size=(n, 1, 1))
            masks = (rng.uniform(size=(n, size, size)) < density).astype(np.float64)
            assert np.array_equal(mask_update(masks, k, s, p), receptive_field_oracle(masks, k, s, p))
            total += n
    assert total >= 10_000


def test_mask_update_geometry_must_match_conv():
    conv = Conv2d(1, 1, 4, 2, 1)
    mask_update(np.zeros((4, 4)), 4, 2, 1, conv=conv)
    with pytest.raises(GeometryError):
        mask_update(np.zeros((4, 4)), 3, 1, 1, conv=conv)


def test_mask_update_rejects_non_binary():
    with pytest.raises(ValueError):
        mask_update(np.full((4, 4), 0.5), 2, 2, 0)


# -- MaskNormalize -------------------------------------------------------------------

def test_normalize_constant_region_is_zero():
    f = np.random.default_rng(1).normal(size=(2, 4, 4))
    m = np.zeros((4, 4))
    m[:2] = 1
    f[:, :2] = 3.5
    out = mask_normalize(Tensor(f), m).data
    assert np.all(out[:, :2] == 0.0)


def test_normalize_all_valid_is_instance_norm():
    f = np.random.default_rng(2).normal(size=(3, 5, 5))
    out = mask_normalize(Tensor(f), np.zeros((5, 5))).data
    mu = f.mean(axis=(1, 2), keepdims=True)
    var = f.var(axis=(1, 2), keepdims=True)
    np.testing.assert_allclose(out, (f - mu) / np.sqrt(var + 1e-5), rtol=1e-12, atol=1e-12)


def test_normalize_valid_outputs_ignore_hole_content():
    rng = np.random.default_rng(3)
    f = rng.normal(size=(2, 3, 6, 6))
    m = (rng.uniform(size=(2, 6, 6)) < 0.4).astype(float)
    g = f + rng.normal(size=f.shape) * m[:, None] * 10
    a, b = mask_normalize(Tensor(f), m).data, mask_normalize(Tensor(g), m).data
    keep = np.broadcast_to(m[:, None] == 0, f.shape)
    assert np.max(np.abs(a - b)[keep]) < 1e-12


# -- SMC block ---------------------------------------------------------------------------

def test_smc_all_valid_uses_valid_path_only():
    rng = np.random.default_rng(4)
    blk = SMCBlock(3, 5, 4, 2, 1, rng)
    f = Tensor(rng.normal(size=(1, 3, 8, 8)))
    out, m1 = smc_block(f, np.zeros((1, 8, 8)), blk)
    assert np.all(m1 == 0)
    ref = mask_normalize(blk.conv_valid(f), m1, blk.norm_scale, blk.norm_shift).data
    assert np.array_equal(out.data, ref)
    blk.conv_invalid.weight.data[:] = rng.normal(size=blk.conv_invalid.weight.shape)
    assert np.array_equal(smc_block(f, np.zeros((1, 8, 8)), blk)[0].data, ref)


def test_smc_all_invalid_uses_invalid_path_only():
    rng = np.random.default_rng(5)
    blk = SMCBlock(3, 5, 3, 1, 1, rng)
    f = Tensor(rng.normal(size=(1, 3, 6, 6)))
    out, m1 = smc_block(f, np.ones((1, 6, 6)), blk)
    assert np.all(m1 == 1)
    ref = mask_normalize(blk.conv_invalid(f), m1, blk.norm_scale, blk.norm_shift).data
    assert np.array_equal(out.data, ref)


def test_smc_output_partition():
    rng = np.random.default_rng(6)
    blk = SMCBlock(2, 4, 4, 2, 1, rng)
    f = Tensor(rng.normal(size=(1, 2, 8, 8)))
    m = (rng.uniform(size=(1, 8, 8)) < 0.6).astype(float)
    out, m1 = smc_block(f, m, blk)
    keep = Tensor(np.broadcast_to((1 - m)[:, None], f.shape).copy())
    hole = Tensor(np.broadcast_to(m[:, None], f.shape).copy())
    val = mask_normalize(blk.conv_valid(f * keep), m1, blk.norm_scale, blk.norm_shift).data
    inv = mask_normalize(blk.conv_invalid(f * hole), m1, blk.norm_scale, blk.norm_shift).data
    sel = np.broadcast_to(m1[:, None] == 0, out.shape)
    assert np.array_equal(out.data[sel], val[sel])
    assert np.array_equal(out.data[~sel], inv[~sel])


# -- encoder pyramid -------------------------------------------------------------------------

def test_pyramid_geometry():
    enc = SMCEncoder(4, [4, 4, 4, 4], rng=np.random.default_rng(0))
    with no_grad():
        pyr = encode(np.zeros((3, 32, 32)), np.zeros((32, 32)), enc)
    assert pyr.sizes == [32, 32, 16, 8, 4]
    assert pyr.depth == 4
    assert all(np.all(m == 0) for _, m in pyr.levels)


@pytest.mark.parametrize("depth", [1, 2, 3, 4])
@pytest.mark.parametrize("fill", [0.0, 1.0])
def test_degenerate_masks_encode(depth, fill):
    enc = SMCEncoder(depth, [3] * depth, rng=np.random.default_rng(depth))
    s = enc.image_size
    with no_grad():
        pyr = enc(np.random.default_rng(0).normal(size=(1, 3, s, s)), np.full((1, s, s), fill))
    assert pyr.sizes[-1] == 4
    assert all(np.all(np.isfinite(f.data)) for f, _ in pyr.levels)


def test_wrong_image_size_is_config_error():
    enc = SMCEncoder(4, [3] * 4)
    with pytest.raises(ConfigError, match="4\\*2"):
        enc(np.zeros((1, 3, 48, 48)), np.zeros((1, 48, 48)))


def test_single_valid_pixel_footprint():
    enc = SMCEncoder(4, [2] * 4, rng=np.random.default_rng(0))
    m = np.ones((1, 32, 32))
    m[0, 13, 21] = 0
    with no_grad():
        pyr = enc(np.zeros((1, 3, 32, 32)), m)
    expect = m
    for blk, (_, got) in zip(enc.blocks, pyr.levels[1:]):
        k, s, p = blk.geometry
        expect = receptive_field_oracle(expect, k, s, p)
        assert np.array_equal(got, expect)


def leakage_gap(seed: int, depth: int = 3) -> float:
    rng = np.random.default_rng(seed)
    enc = SMCEncoder(depth, list(rng.integers(2, 6, size=depth)), rng=rng)
    for p in enc.parameters():
        p.data += rng.normal(scale=0.3, size=p.shape)
    s = enc.image_size
    img = rng.uniform(-1, 1, size=(1, 3, s, s))
    m = (rng.uniform(size=(1, s, s)) < rng.uniform(0.1, 0.9)).astype(float)
    noisy = img + m[:, None] * rng.normal(scale=5.0, size=img.shape)
    with no_grad():
        a, b = enc(img, m), enc(noisy, m)
    worst = 0.0
    for (fa, ma), (fb, _) in zip(a.levels[1:], b.levels[1:]):
        valid = np.broadcast_to(ma[:, None] == 0, fa.shape)
        if valid.any():
            worst = max(worst, float(np.max(np.abs(fa.data - fb.data)[valid])))
    return worst


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_no_leakage_property(seed):
    assert leakage_gap(seed) < 1e-12

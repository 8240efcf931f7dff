import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blindmark.config import Geometry
from blindmark.toysim import (CALIBRATION_SIGMA, INVERSION_SIGMA, CarrierBank, Clip, SceneSpec, Sprite,
                              apply_pixel_noise, calibrate_flip_rate, encode_groups, flat_scene, flip_channel,
                              modulate, random_scene, render_content, toy_decode, toy_encode)


@pytest.fixture(scope="module")
def scene(geometry):
    return random_scene(np.random.default_rng(0), geometry)


def signs_for(g, seed, f_l=None):
    return np.random.default_rng(seed).integers(0, 2, (f_l or g.f_l, g.n), dtype=np.uint8)


# -- scenes -----------------------------------------------------------------

def test_static_scene_frames_identical(geometry):
    clip = Clip(duration=8, velocity=(0.0, 0.0), sprites=(Sprite(5, 5, 10, 10),))
    v = render_content(SceneSpec((clip,), geometry.height, geometry.width))
    assert all(np.array_equal(v[0], f) for f in v)


def test_grating_translates_exactly(geometry):
    clip = Clip(duration=6, frequency=5, velocity=(2.0, 0.0))
    v = render_content(SceneSpec((clip,), geometry.height, geometry.width))
    for t in range(5):
        assert np.array_equal(v[t + 1], np.roll(v[t], 2, axis=1))


def test_two_clip_splice(geometry):
    clips = (Clip(duration=8, velocity=(2.0, 0.0)), Clip(duration=8, velocity=(0.0, 3.0), phase=1.0))
    v = render_content(SceneSpec(clips, geometry.height, geometry.width))
    for t in range(7):
        assert np.array_equal(v[t + 1], np.roll(v[t], 2, axis=1))
        assert np.array_equal(v[9 + t], np.roll(v[8 + t], 3, axis=0))
    assert not np.array_equal(v[8], np.roll(v[7], 2, axis=1))


def test_scene_validation(geometry):
    with pytest.raises(ValueError):
        SceneSpec((Clip(8),), 8, 8, alpha=20.0).validate()
    with pytest.raises(ValueError):
        SceneSpec((Clip(6),), 8, 8).validate(d_t=4)
    with pytest.raises(ValueError):
        SceneSpec((), 8, 8).validate()


def test_scene_json_roundtrip(scene):
    back = SceneSpec.from_json(scene.to_json())
    assert back == scene
    assert np.array_equal(render_content(back), render_content(scene))


def test_random_scene_clip_lengths(geometry):
    sc = random_scene(np.random.default_rng(3), geometry, n_clips=3)
    assert sc.frames == geometry.frames
    sc.validate(geometry.d_t)


# -- carriers ---------------------------------------------------------------

def test_carriers_deterministic(geometry):
    a, b = CarrierBank.derive(geometry, 9), CarrierBank.derive(geometry, 9)
    assert np.array_equal(a.masks, b.masks) and np.array_equal(a.owner, b.owner)
    assert not np.array_equal(a.masks, CarrierBank.derive(geometry, 10).masks)


def test_carrier_partition(carriers, geometry):
    counts = np.bincount(carriers.owner, minlength=geometry.c_l)
    assert np.all(counts == geometry.d_s ** 2 // geometry.c_l)
    assert set(np.unique(carriers.masks)) == {-1, 1}


def _blocks(masks, g):
    return masks.reshape(g.d_t, g.h_l, g.d_s, g.w_l, g.d_s).transpose(0, 1, 3, 2, 4).reshape(
        g.d_t, g.h_l, g.w_l, g.d_s * g.d_s)


def test_carriers_zero_mean_per_block_and_channel(carriers, geometry):
    b = _blocks(carriers.masks.astype(np.int64), geometry)
    assert not b.sum(axis=-1).any()
    for c in range(geometry.c_l):
        assert not b[..., carriers.owner == c].sum(axis=-1).any()


def test_carrier_cross_correlation(carriers, geometry):
    b = _blocks(carriers.masks.astype(np.int64), geometry)
    bound = 3 * np.sqrt(geometry.d_s ** 2)
    for j in range(geometry.d_t):
        for k in range(j + 1, geometry.d_t):
            corr = (b[j] * b[k]).sum(axis=-1)
            assert np.mean(np.abs(corr) <= bound) >= 0.99
            assert abs(corr.mean()) < 1.0


# -- codec ------------------------------------------------------------------

def test_alpha_zero_is_content(scene, carriers):
    s0 = dataclasses.replace(scene, alpha=0.0)
    assert np.array_equal(toy_decode(signs_for(carriers.geometry, 1), s0, carriers), render_content(s0))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_flat_content_inverts_exactly(seed):
    g = Geometry()
    cb = CarrierBank.derive(g)
    signs = signs_for(g, seed)
    assert np.array_equal(encode_groups(toy_decode(signs, flat_scene(g), cb), cb), signs)


def test_textured_flip_rate_small(scene, carriers):
    assert calibrate_flip_rate(scene, carriers, None, 0, 10).p_hat <= 0.05


def test_window_of_two_groups(scene, carriers):
    g = carriers.geometry
    signs = signs_for(g, 2)
    video = toy_decode(signs, flat_scene(g), carriers)
    rows = toy_encode(video[8:16], carriers)
    assert rows.shape == (2, g.n) and np.array_equal(rows, signs[2:4])
    assert np.array_equal(toy_encode(video[4:8], carriers)[0], signs[1])


def test_window_size_checked(carriers):
    g = carriers.geometry
    with pytest.raises(ValueError):
        toy_encode(np.zeros((5, g.height, g.width, 1), np.uint8), carriers)
    with pytest.raises(ValueError):
        toy_encode(np.zeros((4, g.height + 8, g.width, 1), np.uint8), carriers)


@pytest.mark.parametrize("offset", [1, 2, 3])
def test_misaligned_groups_are_chance(offset, scene, carriers):
    g = carriers.geometry
    signs = signs_for(g, 3)
    video = toy_decode(signs, scene, carriers)
    read = encode_groups(video[offset:offset + (g.f_l - 1) * g.d_t], carriers)
    acc = np.mean(read == signs[: g.f_l - 1])
    assert read.size >= 10**4
    assert 0.45 <= acc <= 0.55


def test_content_carries_no_watermark(scene, carriers):
    g = carriers.geometry
    signs = signs_for(g, 4)
    assert 0.45 <= np.mean(encode_groups(render_content(scene), carriers) == signs) <= 0.55


def test_modulate_shape_errors(scene, carriers):
    content = render_content(scene)
    with pytest.raises(ValueError):
        modulate(signs_for(carriers.geometry, 0, 15), content, carriers, 8.0)
    with pytest.raises(ValueError):
        modulate(np.zeros((16, 10), np.uint8), content, carriers, 8.0)


# -- noise ------------------------------------------------------------------

def test_noise_identities(scene):
    v = render_content(scene)
    assert np.array_equal(apply_pixel_noise(v, "gaussian", 0, 1), v)
    assert np.array_equal(apply_pixel_noise(v, "quantize", 256), v)
    assert np.array_equal(apply_pixel_noise(v, "blur", 0), v)


def test_noise_deterministic_and_clamped(scene):
    v = render_content(scene)[:4]
    a = apply_pixel_noise(v, "gaussian", 200, 5)
    assert np.array_equal(a, apply_pixel_noise(v, "gaussian", 200, 5))
    assert not np.array_equal(a, apply_pixel_noise(v, "gaussian", 200, 6))
    assert a.dtype == np.uint8 and a.min() == 0 and a.max() == 255


def test_blur_and_quantize_values():
    v = np.zeros((1, 5, 5, 1), np.uint8)
    v[0, 2, 2, 0] = 90
    assert apply_pixel_noise(v, "blur", 1)[0, 2, 2, 0] == 10
    assert apply_pixel_noise(np.full((1, 2, 2, 1), 200, np.uint8), "quantize", 4)[0, 0, 0, 0] == 192


@pytest.mark.parametrize("kind,level", [("gaussian", -1), ("blur", 1.5), ("quantize", 1), ("quantize", 300), ("jpeg", 5)])
def test_noise_invalid(kind, level):
    with pytest.raises(ValueError):
        apply_pixel_noise(np.zeros((1, 2, 2, 1), np.uint8), kind, level)


def test_flip_rate_monotone_in_sigma(scene, carriers):
    sweep = [calibrate_flip_rate(scene, carriers, "gaussian", s, 10, seed=1).p_hat
             for s in (0, 10, 20, 40, 80, 120, 160, 200)]
    assert all(b >= a for a, b in zip(sweep, sweep[1:]))


def test_calibration_points(scene, carriers):
    assert calibrate_flip_rate(flat_scene(carriers.geometry), carriers, None, 0, 10).p_hat == 0.0
    work = calibrate_flip_rate(scene, carriers, "gaussian", CALIBRATION_SIGMA, 10)
    assert 0.0 < work.p_hat <= 0.05
    star = calibrate_flip_rate(scene, carriers, "gaussian", INVERSION_SIGMA, 10)
    assert 0.30 <= star.p_hat <= 0.38
    assert star.low <= star.p_hat <= star.high
    with pytest.raises(ValueError):
        calibrate_flip_rate(scene, carriers, None, 0, 9)


def test_flip_channel():
    bits = np.zeros(10**5, np.uint8)
    assert not flip_channel(bits, 0.0, 1).any()
    assert abs(flip_channel(bits, 0.5, 1).mean() - 0.5) <= 0.005
    sigma = np.sqrt(0.2 * 0.8 / bits.size)
    assert abs(flip_channel(bits, 0.2, 2).mean() - 0.2) <= 3 * sigma
    assert np.array_equal(flip_channel(bits, 0.2, 2), flip_channel(bits, 0.2, 2))
    with pytest.raises(ValueError):
        flip_channel(bits, 0.6, 0)

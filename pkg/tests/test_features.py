from __future__ import annotations

import datetime as dt
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tmaxcast.features import (AugmentConfig, ChannelLayout, NormStats, WeatherVector, apply_norm, assemble_stack,
                               augment, broadcast_scalar, circular_encode, compute_norm_stats, coordinate_channels,
                               invert_norm, sample_rng, temporal_channels)
from tmaxcast.grid import BoundingBox, RasterLayer, make_grid

PERIODS = (365.0, 366.0, 7.0, 86400.0)


def test_circular_encode_examples():
    assert circular_encode(0, 7) == (0.0, 1.0)
    s, c = circular_encode(91.25, 365)
    assert abs(s - 1) < 1e-12 and abs(c) < 1e-12
    s, c = circular_encode(182, 365)
    assert abs(s - math.sin(2 * math.pi * 182 / 365)) < 1e-12 and abs(s - 0.0086) < 5e-5
    assert abs(c + 0.99996) < 5e-6
    with pytest.raises(ValueError):
        circular_encode(1, 0)


@given(value=st.floats(-1e6, 1e6), period=st.sampled_from(PERIODS))
def test_circular_encode_unit_circle(value, period):
    s, c = circular_encode(value, period)
    assert abs(s * s + c * c - 1) <= 1e-9


@pytest.mark.parametrize("period", PERIODS)
def test_circular_encode_wraps(period):
    a, b = circular_encode(period, period), circular_encode(0, period)
    assert abs(a[0] - b[0]) <= 1e-9 and abs(a[1] - b[1]) <= 1e-9


def test_temporal_channels_examples():
    t = temporal_channels(dt.date(2023, 1, 2), 36000)  # a Monday
    assert t[:2] == circular_encode(1, 365)
    assert t[2:4] == (0.0, 1.0)
    assert abs(t[4] - 0.5) < 1e-12 and abs(t[5] + math.sqrt(3) / 2) < 1e-12
    assert temporal_channels(dt.date(2023, 1, 1), 36000)[:2] == (0.0, 1.0)
    # leap year: Dec 31 is day 365 of 366
    assert temporal_channels(dt.date(2020, 12, 31), 36000)[:2] == circular_encode(365, 366)


def test_temporal_channels_warns_outside_morning(caplog):
    with caplog.at_level(logging.WARNING):
        temporal_channels(dt.date(2023, 5, 1), 15 * 3600)
    assert "outside" in caplog.text
    with pytest.raises(ValueError):
        temporal_channels(dt.date(2023, 5, 1), 86400)


def test_coordinate_channels():
    g = make_grid(BoundingBox(0, 0, 3, 2), 1.0)
    cx, cy = coordinate_channels(g)
    np.testing.assert_array_equal(cx.values, [[-1, 0, 1], [-1, 0, 1]])
    np.testing.assert_array_equal(cy.values, [[-1, -1, -1], [1, 1, 1]])
    one = make_grid(BoundingBox(0, 0, 1, 1), 1.0)
    cx, cy = coordinate_channels(one)
    assert cx.values[0, 0] == 0 and cy.values[0, 0] == 0


def test_broadcast_scalar(grid8):
    layer = broadcast_scalar(3.5, grid8)
    assert layer.values.min() == layer.values.max() == 3.5 and layer.fully_valid
    assert not broadcast_scalar(0.0, grid8).values.any()


def _inputs(grid, rng):
    bands = [RasterLayer(grid, rng.standard_normal(grid.shape)) for _ in range(5)]
    dem = RasterLayer(grid, rng.standard_normal(grid.shape))
    fr = [RasterLayer(grid, np.full(grid.shape, 0.1)) for _ in range(10)]
    return bands, dem, fr, WeatherVector(np.arange(15.0))


def test_assemble_stack(grid8, rng):
    bands, dem, fr, w = _inputs(grid8, rng)
    s = assemble_stack(bands, dem, fr, w, dt.date(2020, 6, 1), 36000, grid8)
    assert s.channels.shape == (39, 8, 8)
    assert s.layout.names[5] == "DEM" and s.layout.index("DEM") == 5
    assert len(s.layout) == 39 and len(set(s.layout.names)) == 39
    np.testing.assert_array_equal(s.channel("DEM"), dem.values)
    assert s.channel("tempmax")[0, 0] == 0 and s.channel("solarradiation")[3, 3] == 14
    again = assemble_stack(bands, dem, fr, w, dt.date(2020, 6, 1), 36000, grid8)
    assert again.channels.tobytes() == s.channels.tobytes()
    with pytest.raises(ValueError):
        WeatherVector(np.arange(14.0))
    with pytest.raises(ValueError):
        assemble_stack(bands[:4], dem, fr, w, dt.date(2020, 6, 1), 36000, grid8)
    other = make_grid(BoundingBox(0, 0, 80, 80), 10.0)
    with pytest.raises(ValueError):
        assemble_stack(bands, RasterLayer(other, np.zeros((8, 8))), fr, w, dt.date(2020, 6, 1), 36000, grid8)


def test_channel_layout_default():
    names = ChannelLayout.default().names
    assert names[:6] == ("F1", "F2", "S7", "S8", "S9", "DEM")
    assert names[-8:] == ("coord_x", "coord_y", "sin_doy", "cos_doy", "sin_dow", "cos_dow", "sin_tod", "cos_tod")


def test_norm_examples():
    a = np.ones((2, 2, 2), np.float32)
    b = np.full((2, 2, 2), 3.0, np.float32)
    a[1] = b[1] = 5.0  # channel 1 constant
    stats = compute_norm_stats([a, b])
    assert stats.mean[0] == 2 and stats.std[0] == 1
    assert stats.std[1] == 1e-6
    np.testing.assert_array_equal(apply_norm(a, stats)[0], -1)
    np.testing.assert_array_equal(apply_norm(b, stats)[0], 1)
    np.testing.assert_array_equal(apply_norm(a, stats)[1], 0)
    with pytest.raises(ValueError):
        compute_norm_stats([])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_norm_roundtrip(seed):
    rng = np.random.default_rng(seed)
    stacks = [rng.normal(rng.normal(0, 50, (4, 1, 1)), rng.uniform(0.1, 10, (4, 1, 1)), (4, 5, 6))
              for _ in range(3)]
    stats = compute_norm_stats(stacks)
    z = np.stack([apply_norm(s, stats) for s in stacks]).astype(np.float64)
    np.testing.assert_allclose(z.mean(axis=(0, 2, 3)), 0, atol=1e-4)
    np.testing.assert_allclose(z.std(axis=(0, 2, 3)), 1, atol=1e-4)
    back = invert_norm(apply_norm(stacks[0], stats), stats)
    np.testing.assert_allclose(back, stacks[0], atol=1e-5 * max(1.0, np.abs(stacks[0]).max()))
    assert NormStats.from_dict(stats.to_dict()).to_dict() == stats.to_dict()


def _pairs(x, t, v):
    return sorted((tuple(x[:, i, j].tolist()), float(t[i, j])) for i, j in zip(*np.nonzero(v)))


def test_augment_identity(rng):
    x = rng.standard_normal((3, 5, 6))
    t = rng.standard_normal((5, 6))
    v = rng.random((5, 6)) < 0.3
    a = augment(x, t, v, rng, AugmentConfig.disabled())
    assert a.ops == []
    np.testing.assert_array_equal(a.channels, x)
    np.testing.assert_array_equal(a.target, t)


def test_augment_hflip_moves_station(rng):
    x = rng.standard_normal((3, 5, 6))
    t = np.zeros((5, 6))
    v = np.zeros((5, 6), bool)
    t[2, 1], v[2, 1] = 30.0, True
    cfg = AugmentConfig(p_hflip=1, p_vflip=0, p_rot=0, p_shift=0)
    a = augment(x, t, v, rng, cfg)
    assert a.ops == ["hflip"]
    assert a.valid[2, 6 - 1 - 1] and a.target[2, 4] == 30.0 and a.valid.sum() == 1
    np.testing.assert_array_equal(a.channels[:, 2, 4], x[:, 2, 1])


def test_augment_rotation_shapes(rng):
    x = rng.standard_normal((3, 5, 7))
    t = rng.standard_normal((5, 7))
    v = np.ones((5, 7), bool)
    a = augment(x, t, v, rng, AugmentConfig(p_hflip=0, p_vflip=0, p_rot=1 / 3, p_shift=0))
    assert a.ops[0].startswith("rot")
    if a.ops[0] in ("rot90", "rot270"):
        assert a.channels.shape == (3, 7, 5) and a.target.shape == a.valid.shape == (7, 5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_augment_preserves_pairs_without_shift(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 6, 4))
    t = rng.standard_normal((6, 4))
    v = rng.random((6, 4)) < 0.4
    a = augment(x, t, v, rng, AugmentConfig(p_shift=0))
    assert _pairs(a.channels, a.target, a.valid) == _pairs(x, t, v)


def test_augment_shift_and_crop(rng):
    x = np.ones((1, 20, 20))
    t = np.ones((20, 20))
    v = np.ones((20, 20), bool)
    cfg = AugmentConfig(p_hflip=0, p_vflip=0, p_rot=0, p_shift=1, max_shift=0.25)
    for seed in range(10):
        a = augment(x, t, v, np.random.default_rng(seed), cfg)
        if a.ops:
            # shifted-in pixels: input zero, target invalid
            assert (a.channels[0][~a.valid] == 0).all() and (~a.valid).any()
            break
    else:
        pytest.fail("no shift drawn")
    crop = augment(x, t, v, rng, AugmentConfig(0, 0, 0, 0, 0, p_crop=1, crop_size=(8, 10)))
    assert crop.channels.shape == (1, 8, 10)
    with pytest.raises(ValueError):
        augment(x, t, v, rng, AugmentConfig(crop_size=(30, 5), p_crop=1))


def test_sample_rng_independent_of_order():
    a = sample_rng(3, dt.date(2020, 1, 1), 2).random(4)
    sample_rng(3, dt.date(2020, 1, 2), 2).random(10)
    b = sample_rng(3, dt.date(2020, 1, 1), 2).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample_rng(3, dt.date(2020, 1, 1), 3).random(4))

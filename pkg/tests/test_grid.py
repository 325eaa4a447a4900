from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from tmaxcast.grid import (BoundingBox, Grid, RasterLayer, SceneRejected, impute, make_grid,
                           resample_bilinear, valid_fraction)


def test_make_grid_examples():
    assert make_grid(BoundingBox(0, 0, 1000, 500), 100).shape == (5, 10)
    assert make_grid(BoundingBox(0, 0, 1000, 500), 20).shape == (25, 50)
    assert make_grid(BoundingBox(0, 0, 1010, 500), 100).shape == (5, 11)


def test_make_grid_errors():
    with pytest.raises(ValueError):
        make_grid(BoundingBox(0, 0, 10, 10), 0)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 10)


@pytest.mark.parametrize("r", [7.0, 20.0, 33.0, 100.0])
def test_make_grid_monotone(r):
    bbox = BoundingBox(0, 0, 1234, 567)
    a, b = make_grid(bbox, r), make_grid(bbox, r / 2)
    assert b.rows >= 2 * a.rows - 1 and b.cols >= 2 * a.cols - 1
    assert b.rows >= a.rows and b.cols >= a.cols
    # pixel (0, 0) is the north-west corner
    assert a.origin == (0, 567)
    assert a.x_centers()[0] == r / 2 and a.y_centers()[0] == 567 - r / 2


def _layer(values, valid=None):
    values = np.asarray(values, dtype=np.float32)
    n, m = values.shape
    return RasterLayer(make_grid(BoundingBox(0, 0, m, n), 1.0), values, valid)


def test_valid_fraction_examples():
    assert valid_fraction(_layer(np.zeros((2, 2)))) == 1.0
    assert valid_fraction(_layer(np.zeros((2, 2)), np.zeros((2, 2), bool))) == 0.0
    assert valid_fraction(_layer(np.zeros((2, 2)), [[1, 1], [1, 0]])) == 0.75


def test_impute_center_example():
    v = np.array([[0, 12, 0], [10, -1, 20], [0, 18, 0]], dtype=np.float32)
    valid = np.ones((3, 3), bool)
    valid[1, 1] = False
    out = impute(_layer(v, valid))
    assert out.values[1, 1] == 15.0
    assert out.fully_valid


def test_impute_fully_valid_unchanged():
    layer = _layer(np.arange(6.0).reshape(2, 3))
    assert impute(layer) is layer


def test_impute_rejects_quarter_valid():
    with pytest.raises(SceneRejected):
        impute(_layer(np.zeros((2, 2)), [[1, 0], [0, 0]]))


def test_rejection_boundary_strict():
    # 4 x 4: 12/16 = 0.75 exactly -> rejected, 13/16 -> accepted
    valid = np.ones(16, bool)
    valid[:4] = False
    with pytest.raises(SceneRejected) as exc:
        impute(_layer(np.ones((4, 4)), valid.reshape(4, 4)))
    assert exc.value.fraction == 0.75
    valid[3] = True
    assert impute(_layer(np.ones((4, 4)), valid.reshape(4, 4))).fully_valid


def brute_force_fill(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Independent, loop-only statement of the fill rule."""
    n, m = values.shape
    out = values.astype(np.float64).copy()
    mean_valid = float(np.mean(values[valid].astype(np.float64)))

    def axis_estimate(line, ok, k):
        left = [i for i in range(k) if ok[i]]
        right = [i for i in range(k + 1, len(line)) if ok[i]]
        if left and right:
            a, b = left[-1], right[0]
            return line[a] + (line[b] - line[a]) * (k - a) / (b - a)
        if left:
            return line[left[-1]]
        if right:
            return line[right[0]]
        return None

    for i in range(n):
        for j in range(m):
            if valid[i, j]:
                continue
            ests = [e for e in (axis_estimate(values[i].astype(np.float64), valid[i], j),
                                axis_estimate(values[:, j].astype(np.float64), valid[:, j], i)) if e is not None]
            out[i, j] = sum(ests) / len(ests) if ests else mean_valid
    return out


def _all_masks(n, m, max_holes=3):
    cells = list(itertools.product(range(n), range(m)))
    for k in range(max_holes + 1):
        for holes in itertools.combinations(cells, k):
            valid = np.ones((n, m), bool)
            for h in holes:
                valid[h] = False
            yield k, valid


def exhaustive_imputation_check(max_side: int = 8, max_holes: int = 3, seed: int = 0) -> tuple[int, int, int]:
    """Compare impute with the brute-force rule on every mask; returns (masks, rejected, mismatches)."""
    rng = np.random.default_rng(seed)
    masks = rejected = mismatches = 0
    for n in range(1, max_side + 1):
        for m in range(1, max_side + 1):
            values = rng.integers(-50, 50, (n, m)).astype(np.float32)
            grid = make_grid(BoundingBox(0, 0, m, n), 1.0)
            for k, valid in _all_masks(n, m, max_holes):
                masks += 1
                layer = RasterLayer(grid, values, valid)
                accept = (n * m - k) / (n * m) > 0.75
                try:
                    got = impute(layer).values
                except SceneRejected:
                    rejected += 1
                    mismatches += accept
                    continue
                if not accept:
                    mismatches += 1
                    continue
                want = brute_force_fill(values, valid).astype(np.float32)
                mismatches += not np.array_equal(got, want)
    return masks, rejected, mismatches


def test_impute_matches_brute_force_small():
    masks, rejected, mismatches = exhaustive_imputation_check(max_side=5)
    assert masks > 1000 and rejected > 0
    assert mismatches == 0


@pytest.mark.parametrize("seed", range(5))
def test_impute_properties(seed):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((9, 11)).astype(np.float32)
    valid = rng.random((9, 11)) > 0.2
    layer = _layer(values, valid)
    out = impute(layer)
    np.testing.assert_array_equal(out.values[valid], values[valid])
    again = impute(out)
    np.testing.assert_array_equal(again.values, out.values)


def test_resample_identity_and_constant():
    layer = _layer(np.arange(12.0).reshape(3, 4))
    same = resample_bilinear(layer, layer.grid)
    np.testing.assert_array_equal(same.values, layer.values)
    const = _layer(np.full((3, 4), 7.5))
    target = make_grid(BoundingBox(0, 0, 4, 3), 0.25)
    np.testing.assert_allclose(resample_bilinear(const, target).values, 7.5)


def test_resample_upsample_example():
    # 2 x 2 source [[0, 1], [0, 1]] at 1 m -> 4 x 4 at 0.5 m over the same bbox
    src = _layer(np.array([[0.0, 1.0], [0.0, 1.0]]))
    out = resample_bilinear(src, make_grid(src.grid.bbox, 0.5))
    for row in out.values:
        np.testing.assert_allclose(row, [0.0, 0.25, 0.75, 1.0], atol=1e-7)


def test_resample_bounded(rng):
    values = rng.standard_normal((6, 5)).astype(np.float32)
    src = RasterLayer(make_grid(BoundingBox(0, 0, 500, 600), 100.0), values)
    out = resample_bilinear(src, make_grid(BoundingBox(-50, 20, 470, 610), 30.0))
    assert out.values.min() >= values.min() - 1e-6 and out.values.max() <= values.max() + 1e-6


def test_resample_errors():
    src = _layer(np.ones((2, 2)), [[1, 1], [1, 0]])
    with pytest.raises(ValueError):
        resample_bilinear(src, src.grid)
    far = make_grid(BoundingBox(100, 100, 102, 102), 1.0)
    with pytest.raises(ValueError):
        resample_bilinear(_layer(np.ones((2, 2))), far)


def test_resample_masked_ignores_invalid():
    from tmaxcast.grid import resample_masked
    src = make_grid(BoundingBox(0, 0, 4, 4), 2.0)
    vals = np.array([[1.0, 100.0], [3.0, 5.0]])
    valid = np.array([[True, False], [True, True]])
    out = resample_masked(RasterLayer(src, vals, valid), make_grid(BoundingBox(0, 0, 4, 4), 1.0))
    # the clamped corner sees only the invalid source pixel
    assert out.valid.sum() == 15 and not out.valid[0, 3]
    assert 1.0 <= out.values[out.valid].min() and out.values[out.valid].max() <= 5.0 and out.values[0, 0] == 1.0
    none = resample_masked(RasterLayer(src, vals, np.zeros((2, 2), bool)), make_grid(BoundingBox(0, 0, 4, 4), 1.0))
    assert not none.valid.any()

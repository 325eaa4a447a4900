"""Numba kernels against their numpy fallbacks."""
from __future__ import annotations

import numpy as np
import pytest

from tmaxcast import _accel, kernels

pytestmark = pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba disabled")


def _numpy_only(monkeypatch, *names):
    for name in names:
        monkeypatch.setattr(kernels, name, None)


@pytest.mark.parametrize("stride", [1, 2])
def test_im2col_col2im_match(rng, monkeypatch, stride):
    xpad = rng.standard_normal((2, 3, 9, 8)).astype(np.float32)
    cols_nb = kernels._im2col_nb(xpad, 3, 3, stride)
    cols_np = kernels._im2col_np(xpad, 3, 3, stride)
    np.testing.assert_array_equal(cols_nb, cols_np)
    back_nb = kernels.col2im(cols_np, xpad.shape, 3, 3, stride)
    _numpy_only(monkeypatch, "_col2im_nb")
    back_np = kernels.col2im(cols_np, xpad.shape, 3, 3, stride)
    np.testing.assert_allclose(back_nb, back_np, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("stride", [1, 2])
def test_depthwise_match(rng, monkeypatch, stride):
    xpad = rng.standard_normal((2, 4, 13, 12)).astype(np.float32)
    w = rng.standard_normal((4, 7, 7)).astype(np.float32)
    out_nb = kernels.depthwise_forward(xpad, w, stride)
    gout = rng.standard_normal(out_nb.shape).astype(np.float32)
    dx_nb, dw_nb = kernels.depthwise_backward(xpad, w, gout, stride)
    _numpy_only(monkeypatch, "_dw_forward_nb", "_dw_backward_nb")
    out_np = kernels.depthwise_forward(xpad, w, stride)
    dx_np, dw_np = kernels.depthwise_backward(xpad, w, gout, stride)
    np.testing.assert_allclose(out_nb, out_np, rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(dx_nb, dx_np, rtol=1e-5, atol=1e-5)
    # weight gradients sum many float32 terms; only the order differs
    np.testing.assert_allclose(dw_nb, dw_np, rtol=1e-4, atol=1e-4 * np.abs(dw_np).max())


def test_row_fill_match(rng, monkeypatch):
    values = rng.standard_normal((10, 12))
    valid = rng.random((10, 12)) < 0.6
    est_nb, ok_nb = kernels.row_fill(values, valid)
    _numpy_only(monkeypatch, "_row_fill_nb")
    est_np, ok_np = kernels.row_fill(values, valid)
    np.testing.assert_array_equal(ok_nb, ok_np)
    np.testing.assert_allclose(est_nb[ok_nb], est_np[ok_np], rtol=1e-12, atol=1e-12)


def test_pixel_accumulate_and_class_counts_match(rng, monkeypatch):
    rows = rng.integers(0, 5, 40)
    cols = rng.integers(0, 6, 40)
    vals = rng.standard_normal(40)
    groups = rng.integers(-1, 10, (20, 24))
    ri = np.arange(20) // 4
    ci = np.arange(24) // 4
    s_nb, c_nb = kernels.pixel_accumulate(rows, cols, vals, 5, 6)
    k_nb = kernels.class_counts(groups, ri, ci, 5, 6, 10)
    _numpy_only(monkeypatch, "_pixel_accumulate_nb", "_class_counts_nb")
    s_np, c_np = kernels.pixel_accumulate(rows, cols, vals, 5, 6)
    k_np = kernels.class_counts(groups, ri, ci, 5, 6, 10)
    np.testing.assert_allclose(s_nb, s_np, rtol=1e-12)
    np.testing.assert_array_equal(c_nb, c_np)
    np.testing.assert_array_equal(k_nb, k_np)


def test_gelu_match(rng, monkeypatch):
    x = rng.standard_normal((3, 5, 7)) * 3
    g = rng.standard_normal(x.shape)
    y_nb, cdf_nb = kernels.gelu_forward(x)
    dx_nb = kernels.gelu_backward(x, cdf_nb, g)
    _numpy_only(monkeypatch, "_gelu_forward_nb", "_gelu_backward_nb")
    y_np, cdf_np = kernels.gelu_forward(x)
    dx_np = kernels.gelu_backward(x, cdf_np, g)
    np.testing.assert_allclose(y_nb, y_np, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(dx_nb, dx_np, rtol=1e-12, atol=1e-12)


def test_backend_reports_numba():
    assert _accel.backend() == "numba"

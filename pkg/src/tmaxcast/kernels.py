"""Inner loops shared by the raster pipeline and the tensor engine.

Every kernel exists as a numba-compiled loop (``*_nb``) and a vectorised
numpy version (``*_np``). The public name dispatches to numba when
:mod:`tmaxcast._accel` enables it. Both paths must agree to float rounding;
``tests/test_kernels.py`` pins that and ``benchmarks/bench_kernels.py``
times them against each other.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from ._accel import njit


def _out_size(size: int, k: int, stride: int) -> int:
    return (size - k) // stride + 1


# --------------------------------------------------------------------------
# im2col / col2im (dense convolution)
# --------------------------------------------------------------------------

def _im2col_np(xpad, kh, kw, stride):
    n, c, hp, wp = xpad.shape
    ho, wo = _out_size(hp, kh, stride), _out_size(wp, kw, stride)
    win = sliding_window_view(xpad, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, C, Ho, Wo, kh, kw) -> (C, kh, kw, N, Ho, Wo)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * ho * wo)


def _im2col_loop(xpad, kh, kw, stride):
    n, c, hp, wp = xpad.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((c * kh * kw, n * ho * wo), dtype=xpad.dtype)
    for ch in range(c):
        for di in range(kh):
            for dj in range(kw):
                dst = cols[(ch * kh + di) * kw + dj]
                for b in range(n):
                    for i in range(ho):
                        src = xpad[b, ch, i * stride + di]
                        r = (b * ho + i) * wo
                        if stride == 1:
                            for j in range(wo):
                                dst[r + j] = src[j + dj]
                        else:
                            for j in range(wo):
                                dst[r + j] = src[j * stride + dj]
    return cols


def _col2im_np(cols, n, c, hp, wp, kh, kw, stride):
    ho, wo = _out_size(hp, kh, stride), _out_size(wp, kw, stride)
    g = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for di in range(kh):
        for dj in range(kw):
            out[:, :, di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride] += (
                g[:, di, dj].transpose(1, 0, 2, 3)
            )
    return out


def _col2im_loop(cols, n, c, hp, wp, kh, kw, stride):
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for ch in range(c):
        for di in range(kh):
            for dj in range(kw):
                src = cols[(ch * kh + di) * kw + dj]
                for b in range(n):
                    for i in range(ho):
                        dst = out[b, ch, i * stride + di]
                        r = (b * ho + i) * wo
                        if stride == 1:
                            for j in range(wo):
                                dst[j + dj] += src[r + j]
                        else:
                            for j in range(wo):
                                dst[j * stride + dj] += src[r + j]
    return out


_im2col_nb = njit(_im2col_loop)
_col2im_nb = njit(_col2im_loop)


def im2col(xpad: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Unfold an already padded (N, C, H, W) array to (C*kh*kw, N*Ho*Wo)."""
    xpad = np.ascontiguousarray(xpad)
    if _im2col_nb is not None:
        return _im2col_nb(xpad, kh, kw, stride)
    return _im2col_np(xpad, kh, kw, stride)


def col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the padded input."""
    cols = np.ascontiguousarray(cols)
    n, c, hp, wp = shape
    if _col2im_nb is not None:
        return _col2im_nb(cols, n, c, hp, wp, kh, kw, stride)
    return _col2im_np(cols, n, c, hp, wp, kh, kw, stride)


# --------------------------------------------------------------------------
# depthwise convolution (one filter per channel)
# --------------------------------------------------------------------------

def _dw_forward_np(xpad, w, stride):
    n, c, hp, wp = xpad.shape
    _, kh, kw = w.shape
    ho, wo = _out_size(hp, kh, stride), _out_size(wp, kw, stride)
    out = np.zeros((n, c, ho, wo), dtype=xpad.dtype)
    for di in range(kh):
        for dj in range(kw):
            out += xpad[:, :, di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride] * w[
                None, :, di, dj, None, None
            ]
    return out


def _dw_backward_np(xpad, w, gout, stride):
    _, _, ho, wo = gout.shape
    _, kh, kw = w.shape
    dx = np.zeros_like(xpad)
    dw = np.zeros_like(w)
    for di in range(kh):
        for dj in range(kw):
            sl = (slice(None), slice(None),
                  slice(di, di + stride * (ho - 1) + 1, stride),
                  slice(dj, dj + stride * (wo - 1) + 1, stride))
            dw[:, di, dj] = np.einsum("nchw,nchw->c", xpad[sl], gout)
            dx[sl] += gout * w[None, :, di, dj, None, None]
    return dx, dw


def _dw_forward_loop(xpad, w, stride):
    n, c, hp, wp = xpad.shape
    kh, kw = w.shape[1], w.shape[2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, c, ho, wo), dtype=xpad.dtype)
    for b in range(n):
        for ch in range(c):
            for di in range(kh):
                for dj in range(kw):
                    wv = w[ch, di, dj]
                    for i in range(ho):
                        orow = out[b, ch, i]
                        xrow = xpad[b, ch, i * stride + di]
                        if stride == 1:
                            for j in range(wo):
                                orow[j] += xrow[j + dj] * wv
                        else:
                            for j in range(wo):
                                orow[j] += xrow[j * stride + dj] * wv
    return out


def _dw_backward_loop(xpad, w, gout, stride):
    n, c, ho, wo = gout.shape
    kh, kw = w.shape[1], w.shape[2]
    dx = np.zeros_like(xpad)
    dw = np.zeros_like(w)
    for b in range(n):
        for ch in range(c):
            for di in range(kh):
                for dj in range(kw):
                    wv = w[ch, di, dj]
                    acc = wv * 0
                    for i in range(ho):
                        grow = gout[b, ch, i]
                        xrow = xpad[b, ch, i * stride + di]
                        drow = dx[b, ch, i * stride + di]
                        if stride == 1:
                            for j in range(wo):
                                drow[j + dj] += grow[j] * wv
                            for j in range(wo):
                                acc += grow[j] * xrow[j + dj]
                        else:
                            for j in range(wo):
                                drow[j * stride + dj] += grow[j] * wv
                                acc += grow[j] * xrow[j * stride + dj]
                    dw[ch, di, dj] += acc
    return dx, dw


_dw_forward_nb = njit(_dw_forward_loop)
_dw_backward_nb = njit(_dw_backward_loop)


def depthwise_forward(xpad: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Per-channel correlation of padded ``xpad`` (N,C,H,W) with ``w`` (C,kh,kw)."""
    xpad, w = np.ascontiguousarray(xpad), np.ascontiguousarray(w)
    if _dw_forward_nb is not None:
        return _dw_forward_nb(xpad, w, stride)
    return _dw_forward_np(xpad, w, stride)


def depthwise_backward(xpad: np.ndarray, w: np.ndarray, gout: np.ndarray, stride: int):
    """Gradients of :func:`depthwise_forward` w.r.t. the padded input and the filters."""
    xpad, w, gout = (np.ascontiguousarray(a) for a in (xpad, w, gout))
    if _dw_backward_nb is not None:
        return _dw_backward_nb(xpad, w, gout, stride)
    return _dw_backward_np(xpad, w, gout, stride)


# --------------------------------------------------------------------------
# hole filling along rows
# --------------------------------------------------------------------------

def _row_fill_np(values, valid):
    n, m = values.shape
    cols = np.broadcast_to(np.arange(m), (n, m))
    left = np.maximum.accumulate(np.where(valid, cols, -1), axis=1)
    right = np.minimum.accumulate(np.where(valid, cols, m)[:, ::-1], axis=1)[:, ::-1]
    has_l, has_r = left >= 0, right < m
    rows = np.arange(n)[:, None]
    vl = values[rows, np.clip(left, 0, m - 1)]
    vr = values[rows, np.clip(right, 0, m - 1)]
    span = np.where(has_l & has_r & (right > left), right - left, 1)
    # multiply before dividing: exact whenever the products are representable
    est = np.where(has_l & has_r, vl + (vr - vl) * (cols - left) / span, np.where(has_l, vl, vr))
    ok = (has_l | has_r) & ~valid
    return np.where(ok, est, 0.0), ok


def _row_fill_loop(values, valid):
    n, m = values.shape
    est = np.zeros((n, m), dtype=np.float64)
    ok = np.zeros((n, m), dtype=np.bool_)
    left = np.empty(m, dtype=np.int64)
    right = np.empty(m, dtype=np.int64)
    for i in range(n):
        last = -1
        for j in range(m):
            if valid[i, j]:
                last = j
            left[j] = last
        last = m
        for j in range(m - 1, -1, -1):
            if valid[i, j]:
                last = j
            right[j] = last
        for j in range(m):
            if valid[i, j]:
                continue
            lo, hi = left[j], right[j]
            if lo >= 0 and hi < m:
                vl = values[i, lo]
                vr = values[i, hi]
                est[i, j] = vl + (vr - vl) * (j - lo) / (hi - lo)
                ok[i, j] = True
            elif lo >= 0:
                est[i, j] = values[i, lo]
                ok[i, j] = True
            elif hi < m:
                est[i, j] = values[i, hi]
                ok[i, j] = True
    return est, ok


_row_fill_nb = njit(_row_fill_loop)


def row_fill(values: np.ndarray, valid: np.ndarray):
    """Estimate invalid pixels from the nearest valid neighbours in the same row.

    Returns ``(estimate, ok)``; ``ok`` is False at valid pixels and at holes
    whose whole row is invalid.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.bool_)
    if _row_fill_nb is not None:
        return _row_fill_nb(values, valid)
    return _row_fill_np(values, valid)


# --------------------------------------------------------------------------
# scatter reductions
# --------------------------------------------------------------------------

def _pixel_accumulate_np(rows, cols, vals, n, m):
    flat = rows * m + cols
    sums = np.bincount(flat, weights=vals, minlength=n * m).reshape(n, m)
    counts = np.bincount(flat, minlength=n * m).reshape(n, m)
    return sums, counts.astype(np.int64)


def _pixel_accumulate_loop(rows, cols, vals, n, m):
    sums = np.zeros((n, m), dtype=np.float64)
    counts = np.zeros((n, m), dtype=np.int64)
    for k in range(rows.shape[0]):
        sums[rows[k], cols[k]] += vals[k]
        counts[rows[k], cols[k]] += 1
    return sums, counts


_pixel_accumulate_nb = njit(_pixel_accumulate_loop)


def pixel_accumulate(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, n: int, m: int):
    """Per-pixel sum and count of point values already mapped to (row, col)."""
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    if _pixel_accumulate_nb is not None:
        return _pixel_accumulate_nb(rows, cols, vals, n, m)
    return _pixel_accumulate_np(rows, cols, vals, n, m)


def _class_counts_np(groups, row_idx, col_idx, n, m, n_groups):
    ri = np.broadcast_to(row_idx[:, None], groups.shape)
    ci = np.broadcast_to(col_idx[None, :], groups.shape)
    keep = (ri >= 0) & (ri < n) & (ci >= 0) & (ci < m) & (groups >= 0)
    flat = (groups[keep] * n + ri[keep]) * m + ci[keep]
    return np.bincount(flat, minlength=n_groups * n * m).reshape(n_groups, n, m).astype(np.int64)


def _class_counts_loop(groups, row_idx, col_idx, n, m, n_groups):
    counts = np.zeros((n_groups, n, m), dtype=np.int64)
    h, w = groups.shape
    for i in range(h):
        ti = row_idx[i]
        if ti < 0 or ti >= n:
            continue
        for j in range(w):
            tj = col_idx[j]
            g = groups[i, j]
            if tj < 0 or tj >= m or g < 0:
                continue
            counts[g, ti, tj] += 1
    return counts


_class_counts_nb = njit(_class_counts_loop)


def class_counts(groups: np.ndarray, row_idx: np.ndarray, col_idx: np.ndarray,
                 n: int, m: int, n_groups: int) -> np.ndarray:
    """Count fine pixels of each group landing in every coarse pixel.

    ``row_idx[i]`` / ``col_idx[j]`` give the coarse row/col of fine row ``i`` /
    fine col ``j`` (negative or out of range = outside the coarse grid).
    """
    groups = np.ascontiguousarray(groups, dtype=np.int64)
    row_idx = np.ascontiguousarray(row_idx, dtype=np.int64)
    col_idx = np.ascontiguousarray(col_idx, dtype=np.int64)
    if _class_counts_nb is not None:
        return _class_counts_nb(groups, row_idx, col_idx, n, m, n_groups)
    return _class_counts_np(groups, row_idx, col_idx, n, m, n_groups)


# --------------------------------------------------------------------------
# exact GELU
# --------------------------------------------------------------------------

_SQRT_HALF = math.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu_forward_np(x):
    cdf = (0.5 * (1.0 + erf(x * _SQRT_HALF))).astype(x.dtype)
    return x * cdf, cdf


def _gelu_backward_np(x, cdf, g):
    pdf = (_INV_SQRT_2PI * np.exp(-0.5 * x * x)).astype(x.dtype)
    return g * (cdf + x * pdf)


def _gelu_forward_loop(x, out, cdf):
    for k in range(x.size):
        c = 0.5 * (1.0 + math.erf(x[k] * _SQRT_HALF))
        cdf[k] = c
        out[k] = x[k] * c


def _gelu_backward_loop(x, cdf, g, dx):
    for k in range(x.size):
        pdf = _INV_SQRT_2PI * math.exp(-0.5 * x[k] * x[k])
        dx[k] = g[k] * (cdf[k] + x[k] * pdf)


_gelu_forward_nb = njit(_gelu_forward_loop)
_gelu_backward_nb = njit(_gelu_backward_loop)


def gelu_forward(x: np.ndarray):
    """Return ``(x * Phi(x), Phi(x))``."""
    if _gelu_forward_nb is None:
        return _gelu_forward_np(x)
    x = np.ascontiguousarray(x)
    out, cdf = np.empty_like(x), np.empty_like(x)
    _gelu_forward_nb(x.reshape(-1), out.reshape(-1), cdf.reshape(-1))
    return out, cdf


def gelu_backward(x: np.ndarray, cdf: np.ndarray, g: np.ndarray) -> np.ndarray:
    # the vectorised numpy form beats the compiled loop (benchmarks/bench_kernels.py);
    # _gelu_backward_nb is kept for parity tests and the benchmark
    return _gelu_backward_np(x, cdf, g)


# name -> (numba kernel or None, numpy fallback); used by tests and the benchmark
IMPLEMENTATIONS = {
    "im2col": (_im2col_nb, _im2col_np),
    "col2im": (_col2im_nb, _col2im_np),
    "depthwise_forward": (_dw_forward_nb, _dw_forward_np),
    "depthwise_backward": (_dw_backward_nb, _dw_backward_np),
    "row_fill": (_row_fill_nb, _row_fill_np),
    "pixel_accumulate": (_pixel_accumulate_nb, _pixel_accumulate_np),
    "class_counts": (_class_counts_nb, _class_counts_np),
    "gelu_forward": (_gelu_forward_nb, _gelu_forward_np),
    "gelu_backward": (_gelu_backward_nb, _gelu_backward_np),
}

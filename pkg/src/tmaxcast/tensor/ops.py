"""Differentiable primitives used by the models.

All spatial ops take NCHW tensors. Every op computes its forward with
numpy (or a :mod:`tmaxcast.kernels` loop) and returns a closure that maps
the output gradient to input gradients.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from .core import Tensor, as_tensor

def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# elementwise / reductions
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor.result(a.data + b.data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    return Tensor.result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return Tensor.result(ad * bd, (a, b), backward, "mul")


def sum_all(a: Tensor) -> Tensor:
    shape, dtype = a.shape, a.dtype
    return Tensor.result(np.asarray(a.data.sum(), dtype=dtype), (a,),
                         lambda g: (np.broadcast_to(g, shape).astype(dtype),), "sum")


def mean_all(a: Tensor) -> Tensor:
    shape, dtype, n = a.shape, a.dtype, a.data.size
    return Tensor.result(np.asarray(a.data.mean(), dtype=dtype), (a,),
                         lambda g: (np.full(shape, g / n, dtype=dtype),), "mean")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor.result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        out[index] = g
        return (out,)

    return Tensor.result(np.ascontiguousarray(a.data[index]), (a,), backward, "getitem")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.result(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                         lambda g: (g * mask,), "relu")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    out, cdf = kernels.gelu_forward(xd)
    return Tensor.result(out, (x,), lambda g: (kernels.gelu_backward(xd, cdf, g),), "gelu")


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _zero_pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_dense(xd, wd, stride, padding):
    n, c, h, w = xd.shape
    o, _, kh, kw = wd.shape
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    if kh == kw == 1 and stride == 1 and padding == 0:
        cols = xd.transpose(1, 0, 2, 3).reshape(c, -1)
    else:
        cols = kernels.im2col(_zero_pad(xd, padding), kh, kw, stride)
    out = (wd.reshape(o, -1) @ cols).reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), cols


def _conv_dense_backward(g, xshape, wd, cols, stride, padding, need_x):
    n, c, h, w = xshape
    o, _, kh, kw = wd.shape
    gmat = g.transpose(1, 0, 2, 3).reshape(o, -1)
    dw = (gmat @ cols.T).reshape(wd.shape)
    dx = None
    if need_x:
        dcols = wd.reshape(o, -1).T @ gmat
        if kh == kw == 1 and stride == 1 and padding == 0:
            dx = dcols.reshape(c, n, h, w).transpose(1, 0, 2, 3)
        else:
            dxp = kernels.col2im(dcols, (n, c, h + 2 * padding, w + 2 * padding), kh, kw, stride)
            dx = dxp[:, :, padding:padding + h, padding:padding + w]
        dx = np.ascontiguousarray(dx)
    return dx, dw


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` is (out, in/groups, kh, kw). Output side is
    ``floor((n + 2*padding - k) / stride) + 1``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {xd.shape} and {wd.shape}")
    n, c, h, w = xd.shape
    o, cg, kh, kw = wd.shape
    if c % groups or o % groups or cg != c // groups:
        raise ValueError(f"weight {wd.shape} incompatible with {c} input channels and groups={groups}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    depthwise = groups > 1 and groups == c == o

    if groups == 1:
        out, cols = _conv_dense(xd, wd, stride, padding)
    elif depthwise:
        xpad = _zero_pad(xd, padding)
        out = kernels.depthwise_forward(xpad, wd[:, 0], stride)
    else:
        cols = []
        parts = []
        og = o // groups
        for gi in range(groups):
            part, cg_cols = _conv_dense(xd[:, gi * cg:(gi + 1) * cg], wd[gi * og:(gi + 1) * og], stride, padding)
            parts.append(part)
            cols.append(cg_cols)
        out = np.concatenate(parts, axis=1)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        g = np.ascontiguousarray(g)
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        if groups == 1:
            dx, dw = _conv_dense_backward(g, xd.shape, wd, cols, stride, padding, x.requires_grad)
        elif depthwise:
            dxp, dw1 = kernels.depthwise_backward(xpad, wd[:, 0], g, stride)
            dx = np.ascontiguousarray(dxp[:, :, padding:padding + h, padding:padding + w])
            dw = dw1[:, None]
        else:
            og = o // groups
            dxs, dws = [], []
            for gi in range(groups):
                dxi, dwi = _conv_dense_backward(g[:, gi * og:(gi + 1) * og], (n, cg, h, w),
                                                wd[gi * og:(gi + 1) * og], cols[gi], stride, padding,
                                                x.requires_grad)
                dxs.append(dxi)
                dws.append(dwi)
            dx = np.concatenate(dxs, axis=1) if x.requires_grad else None
            dw = np.concatenate(dws, axis=0)
        return (dx, dw) if bias is None else (dx, dw, db)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.result(out.astype(xd.dtype, copy=False), parents, backward, "conv2d")


# --------------------------------------------------------------------------
# normalisation
# --------------------------------------------------------------------------

def _normalize(xd: np.ndarray, axes: tuple[int, ...], eps: float):
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv


def _normalize_backward(gx_hat, x_hat, inv, axes):
    m1 = gx_hat.mean(axis=axes, keepdims=True)
    m2 = (gx_hat * x_hat).mean(axis=axes, keepdims=True)
    return inv * (gx_hat - m1 - x_hat * m2)


def _affine(x_hat, weight, bias):
    out = x_hat
    if weight is not None:
        out = out * weight.data[None, :, None, None]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    return out


def group_norm(x: Tensor, groups: int, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise each group of channels over (channels-in-group, H, W), then per-channel affine."""
    xd = x.data
    n, c, h, w = xd.shape
    if c % groups:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    xg = xd.reshape(n, groups, c // groups, h, w)
    axes = (2, 3, 4)
    x_hat, inv = _normalize(xg, axes, eps)
    x_hat = x_hat.reshape(xd.shape)
    out = _affine(x_hat, weight, bias)

    def backward(g):
        gx_hat = g * weight.data[None, :, None, None] if weight is not None else g
        dx = _normalize_backward(gx_hat.reshape(xg.shape), x_hat.reshape(xg.shape), inv, axes)
        grads = [dx.reshape(xd.shape).astype(xd.dtype)]
        if weight is not None:
            grads.append((g * x_hat).sum(axis=(0, 2, 3)))
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x,) + tuple(p for p in (weight, bias) if p is not None)
    return Tensor.result(out.astype(xd.dtype, copy=False), parents, backward, "group_norm")


def layer_norm_channels(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None,
                        eps: float = 1e-6) -> Tensor:
    """Normalise across channels at every pixel (ConvNeXt's channels-first LayerNorm)."""
    xd = x.data
    axes = (1,)
    x_hat, inv = _normalize(xd, axes, eps)
    out = _affine(x_hat, weight, bias)

    def backward(g):
        gx_hat = g * weight.data[None, :, None, None] if weight is not None else g
        grads = [_normalize_backward(gx_hat, x_hat, inv, axes).astype(xd.dtype)]
        if weight is not None:
            grads.append((g * x_hat).sum(axis=(0, 2, 3)))
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x,) + tuple(p for p in (weight, bias) if p is not None)
    return Tensor.result(out.astype(xd.dtype, copy=False), parents, backward, "layer_norm")


# --------------------------------------------------------------------------
# resizing / layout
# --------------------------------------------------------------------------

def upsample2x_nearest(x: Tensor) -> Tensor:
    xd = x.data
    out = xd.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = xd.shape

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor.result(out, (x,), backward, "upsample2x")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    ca = a.shape[1]

    def backward(g):
        return g[:, :ca], g[:, ca:]

    return Tensor.result(np.concatenate([a.data, b.data], axis=1), (a, b), backward, "concat")


def reflect_index(size: int, before: int, after: int) -> np.ndarray:
    """Source index of every padded position under edge-exclusive reflection."""
    if before >= size or after >= size:
        raise ValueError(f"reflection pad ({before}, {after}) must be smaller than the side {size}")
    idx = np.arange(-before, size + after)
    idx = np.where(idx < 0, -idx, idx)
    return np.where(idx >= size, 2 * (size - 1) - idx, idx)


def pad_amounts(size: int, target: int) -> tuple[int, int]:
    """Centre the input; the odd extra pixel goes to the bottom/right."""
    if target < size:
        raise ValueError(f"target {target} smaller than input {size}")
    before = (target - size) // 2
    return before, target - size - before


def mirror_pad(x: Tensor, target_rows: int, target_cols: int) -> Tensor:
    """Reflection-pad the last two axes to ``target_rows x target_cols``."""
    xd = x.data
    h, w = xd.shape[-2:]
    ri = reflect_index(h, *pad_amounts(h, target_rows))
    ci = reflect_index(w, *pad_amounts(w, target_cols))
    out = xd[..., ri, :][..., ci]

    def backward(g):
        prow = np.zeros((len(ri), h), dtype=g.dtype)
        prow[np.arange(len(ri)), ri] = 1
        pcol = np.zeros((len(ci), w), dtype=g.dtype)
        pcol[np.arange(len(ci)), ci] = 1
        return (prow.T @ g @ pcol,)

    return Tensor.result(out, (x,), backward, "mirror_pad")


def crop_window(padded_rows: int, padded_cols: int, rows: int, cols: int) -> tuple[slice, slice]:
    """Window of the original image inside a :func:`mirror_pad` output."""
    top = pad_amounts(rows, padded_rows)[0]
    left = pad_amounts(cols, padded_cols)[0]
    return slice(top, top + rows), slice(left, left + cols)


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def masked_mse(pred: Tensor, target: np.ndarray, valid: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean squared error over valid pixels only.

    ``pred`` is (N, 1, H, W) or broadcast-compatible with ``target`` (N, H, W).
    Returns ``(loss, skipped)`` where ``skipped[i]`` marks samples without a
    single valid pixel; they add nothing to the loss or the gradient. With no
    valid pixel at all the loss is 0 and its gradient identically zero.
    """
    pd_ = pred.data
    p = pd_.reshape(target.shape) if pd_.size == target.size else pd_
    if p.shape != target.shape or valid.shape != target.shape:
        raise ValueError(f"prediction {pd_.shape} does not match target {target.shape}")
    mask = valid.astype(bool)
    count = int(mask.sum())
    skipped = ~mask.reshape(mask.shape[0], -1).any(axis=1) if mask.ndim > 2 else np.array([count == 0])
    diff = np.where(mask, p - target, 0).astype(pd_.dtype)
    denom = max(count, 1)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported by the caller
        loss = np.asarray((diff * diff).sum() / denom, dtype=pd_.dtype)

    def backward(g):
        return ((g * 2.0 / denom * diff).reshape(pd_.shape).astype(pd_.dtype),)

    return Tensor.result(loss, (pred,), backward, "masked_mse"), skipped

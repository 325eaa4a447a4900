"""Finite-difference verification of every differentiable op and a mini U-Net.

Each case builds a float64 graph reduced to a scalar by a fixed random
projection ``sum(out * R)`` so that gradients are O(1), then compares
backprop with central differences.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops as F
from .core import Tensor
from .gradcheck import GradCheckReport, grad_check

TOLERANCE = 1e-4
STEP = 1e-6
FLOOR = 1e-6


@dataclass
class CaseResult:
    name: str
    report: GradCheckReport
    seconds: float


def _project(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    r = Tensor(rng.standard_normal(out.shape))
    return lambda t: F.sum_all(F.mul(t, r))


def _param(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _case(name: str, build: Callable[[], Tensor], inputs: dict, rng, probes: int | None = None) -> CaseResult:
    t0 = time.perf_counter()
    proj = _project(build(), rng)
    report = grad_check(lambda: proj(build()), inputs, h=STEP, tolerance=TOLERANCE,
                        max_probes_per_tensor=probes, rng=rng, floor=FLOOR)
    return CaseResult(name, report, time.perf_counter() - t0)


def primitive_cases(seed: int = 0) -> list[CaseResult]:
    rng = np.random.default_rng(seed)
    out = []
    a, b = _param(rng, 2, 3, 4), _param(rng, 3, 1)
    out.append(_case("add (broadcast)", lambda: F.add(a, b), {"a": a, "b": b}, rng))
    out.append(_case("mul (broadcast)", lambda: F.mul(a, b), {"a": a, "b": b}, rng))
    out.append(_case("neg", lambda: F.neg(a), {"a": a}, rng))
    out.append(_case("sum_all", lambda: F.mul(F.sum_all(a), F.sum_all(a)), {"a": a}, rng))
    out.append(_case("mean_all", lambda: F.mul(F.mean_all(a), F.mean_all(a)), {"a": a}, rng))
    out.append(_case("reshape", lambda: F.reshape(a, (6, 4)), {"a": a}, rng))
    out.append(_case("getitem", lambda: F.getitem(a, (slice(None), slice(1, 3), slice(None, None, 2))),
                     {"a": a}, rng))
    out.append(_case("relu", lambda: F.relu(a), {"a": a}, rng))
    out.append(_case("gelu", lambda: F.gelu(a), {"a": a}, rng))

    x = _param(rng, 2, 4, 7, 6)
    for label, cout, k, stride, pad, groups in [
        ("conv2d 3x3", 5, 3, 1, 1, 1), ("conv2d stride 2", 3, 3, 2, 1, 1), ("conv2d 1x1", 6, 1, 1, 0, 1),
        ("conv2d 2x2 patchify", 4, 2, 2, 0, 1), ("conv2d grouped", 6, 3, 1, 1, 2),
        ("conv2d depthwise 7x7", 4, 7, 1, 3, 4),
    ]:
        w = _param(rng, cout, 4 // groups, k, k, scale=0.5)
        bias = _param(rng, cout)
        out.append(_case(label, lambda w=w, bias=bias, stride=stride, pad=pad, groups=groups:
                         F.conv2d(x, w, bias, stride=stride, padding=pad, groups=groups),
                         {"x": x, "w": w, "b": bias}, rng))

    g, beta = _param(rng, 4), _param(rng, 4)
    out.append(_case("group_norm", lambda: F.group_norm(x, 2, g, beta), {"x": x, "weight": g, "bias": beta}, rng))
    out.append(_case("layer_norm_channels", lambda: F.layer_norm_channels(x, g, beta),
                     {"x": x, "weight": g, "bias": beta}, rng))
    out.append(_case("upsample2x_nearest", lambda: F.upsample2x_nearest(x), {"x": x}, rng))
    y = _param(rng, 2, 3, 7, 6)
    out.append(_case("concat_channels", lambda: F.concat_channels(x, y), {"x": x, "y": y}, rng))
    out.append(_case("mirror_pad", lambda: F.mirror_pad(x, 11, 9), {"x": x}, rng))

    p = _param(rng, 3, 1, 5, 5)
    target = rng.standard_normal((3, 5, 5))
    valid = rng.random((3, 5, 5)) < 0.3
    valid[1] = False  # one sample without any station
    out.append(_case("masked_mse", lambda: F.masked_mse(p, target, valid)[0], {"pred": p}, rng))
    return out


def mini_unet_cases(seed: int = 0, size: int = 16, probes: int = 4) -> list[CaseResult]:
    from ..models import ArchConfig, build_model, unet_forward

    out = []
    for kind, backbone in (("resnet-style", "residual"), ("convnext-style", "convnext")):
        rng = np.random.default_rng(seed)
        arch = ArchConfig(backbone=backbone, widths=(4, 8), blocks=1, head_width=4, gn_groups=2, expansion=2,
                          dw_kernel=3)
        params = build_model(kind, arch, seed=seed, dtype=np.float64)
        # perturb norm scales/biases away from 1/0 so their gradients are exercised generically
        for name, t in params.tensors.items():
            if name.endswith(".bias") or "norm" in name:
                t.data = t.data + rng.normal(0, 0.1, t.shape)
        x = Tensor(rng.standard_normal((1, 39, size, size)), requires_grad=True)
        inputs = {"input": x, **params.tensors}
        out.append(_case(f"mini U-Net {kind} 39x{size}x{size}", lambda params=params, x=x: unet_forward(x, params),
                         inputs, rng, probes=probes))
    return out


def run_suite(seed: int = 0) -> list[CaseResult]:
    return primitive_cases(seed) + mini_unet_cases(seed)

"""Independent nested-loop convolution used as an oracle."""
from __future__ import annotations

import numpy as np


def naive_conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    og = o // groups
    out = np.zeros((n, o, oh, ow))
    for bi in range(n):
        for oc in range(o):
            g = oc // og
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[bi, g * cg + ci, i * stride + u, j * stride + v] * w[oc, ci, u, v]
                    out[bi, oc, i, j] = acc + (b[oc] if b is not None else 0.0)
    return out


def random_config(rng):
    groups = int(rng.choice([1, 1, 1, 2, 3]))
    depthwise = rng.random() < 0.2
    cg = int(rng.integers(1, 4))
    c = cg * groups
    o = groups * int(rng.integers(1, 4))
    if depthwise:
        c = o = groups = int(rng.integers(2, 5))
        cg = 1
    k = int(rng.choice([1, 2, 3, 5, 7]))
    stride = int(rng.integers(1, 4))
    padding = int(rng.integers(0, k // 2 + 2))
    h = int(rng.integers(max(1, k - 2 * padding), 11))
    w = int(rng.integers(max(1, k - 2 * padding), 11))
    n = int(rng.integers(1, 3))
    return dict(x=rng.standard_normal((n, c, h, w)), w=rng.standard_normal((o, cg, k, k)),
                b=rng.standard_normal(o) if rng.random() < 0.7 else None,
                stride=stride, padding=padding, groups=groups)


def conv_oracle_check(n_configs: int = 120, seed: int = 0) -> float:
    """Worst elementwise |fast - naive| over random configurations (float64 inputs)."""
    from tmaxcast.tensor import ops as F
    from tmaxcast.tensor.core import Tensor

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        cfg = random_config(rng)
        ref = naive_conv2d(cfg["x"], cfg["w"], cfg["b"], cfg["stride"], cfg["padding"], cfg["groups"])
        got = F.conv2d(Tensor(cfg["x"]), Tensor(cfg["w"]), None if cfg["b"] is None else Tensor(cfg["b"]),
                       stride=cfg["stride"], padding=cfg["padding"], groups=cfg["groups"]).data
        assert got.shape == ref.shape, (cfg["x"].shape, cfg["w"].shape, cfg["stride"], cfg["padding"])
        worst = max(worst, float(np.abs(got - ref).max()))
    return worst

"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Shapes mirror one training batch of the small U-Net on a 64 x 64 grid and the
raster pipeline at 20 m/px. Each kernel is warmed up once (numba compiles on
first call) and then timed with the best of ``--repeat`` runs.
"""
from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from tmaxcast import _accel, kernels


def _cases(scale: float, rng: np.random.Generator) -> dict:
    n = max(1, int(32 * scale))
    xpad = rng.standard_normal((n, 16, 34, 34)).astype(np.float32)
    cols = kernels._im2col_np(xpad, 3, 3, 1)
    dw = rng.standard_normal((16, 7, 7)).astype(np.float32)
    dpad = rng.standard_normal((n, 16, 38, 38)).astype(np.float32)
    gout = rng.standard_normal((n, 16, 32, 32)).astype(np.float32)
    side = int(512 * scale) or 8
    values = rng.standard_normal((side, side))
    valid = rng.random((side, side)) > 0.2
    k = int(200_000 * scale) or 10
    rows, pcols = rng.integers(0, 256, k), rng.integers(0, 256, k)
    vals = rng.standard_normal(k)
    groups = rng.integers(0, 10, (side * 4, side * 4))
    ridx = np.arange(side * 4) // 10
    act = rng.standard_normal((n, 32, 64, 64)).astype(np.float32)
    cdf = np.empty_like(act)
    out = np.empty_like(act)
    g = rng.standard_normal(act.shape).astype(np.float32)
    flat = [a.reshape(-1) for a in (act, out, cdf, g)]

    def gelu_nb_fwd(fn):
        return fn(flat[0], flat[1], flat[2])

    def gelu_nb_bwd(fn):
        return fn(flat[0], flat[2], flat[3], np.empty_like(flat[0]))

    return {
        "im2col": (lambda fn: fn(xpad, 3, 3, 1), None),
        "col2im": (lambda fn: fn(cols, n, 16, 34, 34, 3, 3, 1), None),
        "depthwise_forward": (lambda fn: fn(dpad, dw, 1), None),
        "depthwise_backward": (lambda fn: fn(dpad, dw, gout, 1), None),
        "row_fill": (lambda fn: fn(values, valid), None),
        "pixel_accumulate": (lambda fn: fn(rows, pcols, vals, 256, 256), None),
        "class_counts": (lambda fn: fn(groups, ridx, ridx, side // 2, side // 2, 10), None),
        "gelu_forward": (lambda fn: fn(act), gelu_nb_fwd),
        "gelu_backward": (lambda fn: fn(act, cdf, g), gelu_nb_bwd),
    }


def _best(call, repeat: int) -> float:
    call()  # warm-up / compile
    return min(timeit.repeat(call, number=1, repeat=repeat))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="shrink or grow all problem sizes")
    args = ap.parse_args(argv)
    if not _accel.HAS_NUMBA:
        print("numba unavailable or disabled (TMAXCAST_DISABLE_NUMBA); timing numpy only", file=sys.stderr)
    cases = _cases(args.scale, np.random.default_rng(0))
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speed-up':>9}")
    for name, (nb, np_fn) in kernels.IMPLEMENTATIONS.items():
        run, run_nb = cases[name]
        run_nb = run_nb or run
        t_np = _best(lambda: run(np_fn), args.repeat) * 1e3
        if nb is None:
            print(f"{name:<20} {t_np:>10.2f} {'-':>10} {'-':>9}")
            continue
        t_nb = _best(lambda: run_nb(nb), args.repeat) * 1e3
        print(f"{name:<20} {t_np:>10.2f} {t_nb:>10.2f} {t_np / t_nb:>8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance criteria, one PASS/FAIL line each (collected in the terminal summary)."""
from __future__ import annotations

import datetime as dt
import math
import time

import numpy as np
import pytest

from tmaxcast.cli import main
from tmaxcast.evaluation import mae, mse
from tmaxcast.features import circular_encode, temporal_channels
from tmaxcast.models import ArchConfig, build_model, param_count, unet_forward
from tmaxcast.tensor import Tensor, no_grad
from tmaxcast.tensor import ops as F
from tmaxcast.tensor.suite import run_suite
from tmaxcast.training import PlateauScheduler, adamw_step, plateau_scheduler

from conftest import SMALL_SYNTH
from conv_oracle import conv_oracle_check
from e2e import run_recovery
import test_grid
import test_landcover

RESULTS: list[str] = []


def record(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_c01_linear_parameter_count():
    n = param_count(build_model("linear"))
    record(1, "linear model parameters", n == 40, f"{n} (want 40)")


def test_c02_gradient_fidelity():
    t0 = time.perf_counter()
    results = run_suite(0)
    seconds = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.report.worst_rel_error)
    ok = all(r.report.worst_rel_error < 1e-4 for r in results) and seconds < 120
    record(2, "finite-difference gradients", ok,
           f"{len(results)} cases, worst rel err {worst.report.worst_rel_error:.2e} ({worst.name}), {seconds:.1f}s")


def test_c03_convolution_oracle():
    worst = conv_oracle_check(n_configs=120, seed=0)
    record(3, "conv2d vs nested loops", worst <= 1e-5, f"120 configs, worst abs err {worst:.2e}")


def test_c04_imputation():
    masks, rejected, mismatches = test_grid.exhaustive_imputation_check(max_side=8, max_holes=3)
    boundary_ok = True
    try:
        test_grid.test_rejection_boundary_strict()
    except AssertionError:
        boundary_ok = False
    record(4, "imputation vs brute force", mismatches == 0 and boundary_ok,
           f"{masks} masks, {rejected} rejected, {mismatches} mismatches, strict 0.75 boundary {boundary_ok}")


def test_c05_landcover_fractions():
    err = test_landcover.fraction_sum_error(trials=200, seed=0)
    test_landcover.test_block_single_group()
    test_landcover.test_block_half_and_half()
    record(5, "land-cover fractions", err <= 1e-6, f"max |sum - 1| {err:.1e}, block examples exact")


def test_c06_temporal_encodings():
    rng = np.random.default_rng(0)
    worst_norm = worst_wrap = 0.0
    for period in (365.0, 366.0, 7.0, 86400.0):
        for v in rng.uniform(-1e6, 1e6, 2000):
            s, c = circular_encode(float(v), period)
            worst_norm = max(worst_norm, abs(s * s + c * c - 1))
        a, b = circular_encode(period, period), circular_encode(0.0, period)
        worst_wrap = max(worst_wrap, abs(a[0] - b[0]), abs(a[1] - b[1]))
    t = temporal_channels(dt.date(2023, 1, 2), 36000)
    example_ok = t[2:4] == (0.0, 1.0) and abs(t[4] - math.sin(2 * math.pi * 36000 / 86400)) < 1e-12
    ok = worst_norm <= 1e-9 and worst_wrap <= 1e-9 and example_ok
    record(6, "temporal encodings", ok, f"max |sin2+cos2-1| {worst_norm:.1e}, max wrap err {worst_wrap:.1e}")


def test_c07_masked_loss_and_metrics():
    p = Tensor(np.ones((2, 1, 3, 3)), requires_grad=True)
    valid = np.zeros((2, 3, 3), bool)
    valid[0, 0, 0] = True
    loss, skipped = F.masked_mse(p, np.zeros((2, 3, 3)), valid)
    loss.backward()
    grad_ok = skipped.tolist() == [False, True] and not p.grad[1].any() and p.grad[0, 0, 0, 0] == 2
    t = np.array([[1.0, 2.0], [3.0, 4.0]])
    two = np.array([[True, False], [False, True]])
    pred = t + np.array([[1.0, 9.0], [9.0, -3.0]])
    metric_ok = mae(pred, t, two) == 2.0 and mse(pred, t, two) == 5.0 and mae(t, t, np.zeros_like(two)) is None
    record(7, "masked loss and metrics", grad_ok and metric_ok,
           f"skipped sample zero grad {grad_ok}, MAE 2.0 / MSE 5.0 exact {metric_ok}")


def test_c08_optimizer_and_scheduler():
    p, _ = adamw_step({"w": np.array([1.0])}, {"w": np.array([0.0])}, None, lr=0.1, weight_decay=0.01)
    q, _ = adamw_step({"w": np.array([0.0])}, {"w": np.array([1.0])}, None, lr=0.001, weight_decay=0.0)
    adam_ok = p["w"][0] == 0.999 and q["w"][0] == -0.001 / (1 + 1e-8)
    s = PlateauScheduler(1e-3)
    lrs = [s.step(1.0) for _ in range(21)]
    sched_ok = (plateau_scheduler([1.0] * 20, 1e-3) == 1e-3 and plateau_scheduler([1.0] * 21, 1e-3) == 0.5e-3
                and lrs[19] == 1e-3 and lrs[20] == 0.5e-3)
    record(8, "AdamW and plateau scheduler", adam_ok and sched_ok,
           f"decay step 0.999 and first step exact {adam_ok}, halved after 20 flat epochs {sched_ok}")


@pytest.mark.slow
def test_c09_synthetic_recovery(tmp_path):
    rec = run_recovery(tmp_path, seed=0)
    m = rec.mae
    planted = m[("planted-linear", "linear")] < 0.3 and all(
        m[("planted-linear", k)] < 0.5 for k in ("resnet-style", "convnext-style"))
    ratio = m[("smooth-field", "convnext-style")] / m[("smooth-field", "linear")]
    ok = planted and ratio <= 0.7 and rec.total_seconds < 900
    detail = ", ".join(f"{g}/{k} {v:.3f}" for (g, k), v in m.items())
    record(9, "synthetic recovery", ok, f"{detail}; smooth ConvNeXt/linear {ratio:.2f}; {rec.total_seconds:.0f}s")


def _cli_run(base, scfg, tcfg):
    raw, data, runs, rep = base / "raw", base / "data", base / "runs", base / "rep"
    assert main(["synth", "--config", str(scfg), "--seed", "7", "--out", str(raw)]) == 0
    assert main(["build-dataset", str(raw), "--resolution", "100", "--out", str(data)]) == 0
    for model in ("linear", "convnext-style"):
        assert main(["train", str(data), "--model", model, "--config", str(tcfg), "--seed", "7",
                     "--out", str(runs)]) == 0
    assert main(["evaluate", str(data), str(runs), "--resolution", "100", "--config", str(tcfg),
                 "--out", str(rep)]) == 0
    return {p.name: p.read_bytes() for p in sorted(rep.iterdir()) if p.is_file()}


def test_c10_determinism(tmp_path, capsys):
    scfg = tmp_path / "s.cfg"
    scfg.write_text("".join(f"{k} = {v}\n" for k, v in SMALL_SYNTH.items()))
    tcfg = tmp_path / "t.cfg"
    tcfg.write_text("max_epochs = 3\nlr = 0.01\nwidths = 4, 8\nblocks = 1\nhead_width = 4\n")
    a = _cli_run(tmp_path / "a", scfg, tcfg)
    b = _cli_run(tmp_path / "b", scfg, tcfg)
    capsys.readouterr()
    ok = bool(a) and a == b
    record(10, "byte-identical reports", ok, f"{len(a)} report files compared: {sorted(a)}")


def test_c11_shape_contract():
    sizes = (40, 50, 56, 64)
    bad = []
    for kind in ("resnet-style", "convnext-style"):
        params = build_model(kind, ArchConfig(widths=(8, 16, 32), blocks=1, head_width=8))
        for n in sizes:
            for m in sizes:
                x = np.random.default_rng(n * m).standard_normal((1, 39, n, m)).astype(np.float32)
                with no_grad():
                    shape = unet_forward(x, params).shape
                if shape != (1, 1, n, m):
                    bad.append((kind, n, m, shape))
    record(11, "U-Net output shape", not bad, f"{2 * len(sizes) ** 2} shapes checked, mismatches {bad}")

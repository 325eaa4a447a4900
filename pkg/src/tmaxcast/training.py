"""Optimizers, plateau scheduling, early stopping and the training loop.

Inputs are normalized with per-channel statistics of the training days and
targets are z-scored with the mean/std of the valid training target pixels.
The loss is the masked MSE in z-units; validation MAE is reported in °C.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config as cfgfile
from .dataset import DaySample, split_samples
from .features import AugmentConfig, NormStats, apply_norm, augment, compute_norm_stats, sample_rng
from .models import MODEL_KINDS, ArchConfig, ModelParams, build_model, forward
from .tensor import Tensor, masked_mse, no_grad
from .tensor.checkpoint import load_arrays, save_arrays
from .tensor.ops import pad_amounts, reflect_index

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training cannot proceed with the given data (empty split, nothing to learn from)."""


class NumericalError(ArithmeticError):
    """Loss or parameters became non-finite."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float | None = None  # None: 1e-3 for the U-Nets, 0.1 for the linear model
    weight_decay: float = 0.01
    plateau_patience: int = 20
    plateau_factor: float = 0.5
    min_delta: float = 1e-4
    early_stop_patience: int = 50
    max_epochs: int = 200
    seed: int = 0
    train_years: tuple[int, ...] = (2018, 2019, 2020, 2021)
    val_years: tuple[int, ...] = (2022,)
    test_years: tuple[int, ...] = (2023,)
    optimizer: str | None = None  # adamw | sgd; None picks by model kind
    grad_clip: float | None = None  # global L2 norm, off by default
    augment: bool = True
    widths: tuple[int, ...] = (32, 64, 128, 256)
    blocks: int = 2
    head_width: int = 32
    stem_stride: int = 2

    def __post_init__(self):
        self.train_years = tuple(int(y) for y in self.train_years)
        self.val_years = tuple(int(y) for y in self.val_years)
        self.test_years = tuple(int(y) for y in self.test_years)
        self.widths = tuple(int(w) for w in self.widths)
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.lr is not None and not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.max_epochs <= 0 or self.plateau_patience <= 0 or self.early_stop_patience <= 0:
            raise ValueError("epoch counts and patiences must be positive")
        if self.weight_decay < 0 or self.min_delta < 0:
            raise ValueError("weight_decay and min_delta must be non-negative")
        if self.optimizer not in (None, "adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        overlap = set(self.train_years) & (set(self.val_years) | set(self.test_years)) \
            or set(self.val_years) & set(self.test_years)
        if overlap:
            raise ValueError(f"years {sorted(overlap)} appear in more than one split")

    def lr_for(self, kind: str) -> float:
        if self.lr is not None:
            return self.lr
        return 0.1 if kind == "linear" else 1e-3

    def optimizer_for(self, kind: str) -> str:
        if self.optimizer is not None:
            return self.optimizer
        return "sgd" if kind == "linear" else "adamw"

    def arch(self, kind: str) -> ArchConfig | None:
        if kind == "linear":
            return None
        return ArchConfig(backbone="residual" if kind == "resnet-style" else "convnext", widths=self.widths,
                          blocks=self.blocks, head_width=self.head_width, stem_stride=self.stem_stride)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "TrainConfig":
        cfg = cfgfile.build(cls, cfgfile.read_config_file(path))
        return dataclasses.replace(cfg, **overrides) if overrides else cfg


# --------------------------------------------------------------------------
# optimizers (pure functions over name -> array dicts)
# --------------------------------------------------------------------------

def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    return {k: (w - lr * grads[k]).astype(w.dtype, copy=False) for k, w in params.items()}


@dataclass
class AdamWState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: dict[str, np.ndarray]) -> "AdamWState":
        return cls(0, {k: np.zeros_like(w) for k, w in params.items()},
                   {k: np.zeros_like(w) for k, w in params.items()})


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamWState | None,
               lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.01) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One AdamW update; inputs are not modified.

    w <- w - lr*wd*w - lr * m_hat / (sqrt(v_hat) + eps), the decay term using
    the weight before the step so it stays independent of the gradient.
    """
    if state is None:
        state = AdamWState.zeros(params)
    if state.step < 0:
        raise ValueError("optimizer step counter must be non-negative")
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, w in params.items():
        g = grads[k]
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        new_p[k] = (w - lr * weight_decay * w - lr * update).astype(w.dtype, copy=False)
        new_m[k], new_v[k] = m.astype(w.dtype, copy=False), v.astype(w.dtype, copy=False)
    return new_p, AdamWState(t, new_m, new_v)


# --------------------------------------------------------------------------
# scheduling
# --------------------------------------------------------------------------

class PlateauScheduler:
    """Multiply the lr by ``factor`` once the metric has failed to improve on its
    best by more than ``min_delta`` for ``patience`` consecutive epochs."""

    def __init__(self, lr: float, patience: int = 20, factor: float = 0.5, min_delta: float = 1e-4):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_delta = min_delta
        self.best = math.inf
        self.bad_epochs = 0
        self.n_decays = 0

    def step(self, metric: float) -> float:
        if metric < self.best - self.min_delta:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.n_decays += 1
                self.bad_epochs = 0
        return self.lr


def plateau_scheduler(history: Sequence[float], lr: float, patience: int = 20, factor: float = 0.5,
                      min_delta: float = 1e-4) -> float:
    """Learning rate in effect after observing ``history`` of validation metrics."""
    s = PlateauScheduler(lr, patience, factor, min_delta)
    for m in history:
        s.step(m)
    return s.lr


class EarlyStopping:
    def __init__(self, patience: int = 50, min_delta: float = 1e-4):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, metric: float, epoch: int) -> bool:
        """Record an epoch; True if it is the new best."""
        if metric < self.best - self.min_delta:
            self.best, self.best_epoch, self.bad_epochs = metric, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


# --------------------------------------------------------------------------
# trained model = parameters + the normalization they expect
# --------------------------------------------------------------------------

@dataclass
class TrainedModel:
    params: ModelParams
    norm: NormStats
    target_mean: float
    target_std: float
    info: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.params.kind

    def predict_normalized(self, x: np.ndarray) -> np.ndarray:
        """(N, C, n, m) normalized inputs -> (N, n, m) °C."""
        with no_grad():
            z = forward(self.params, Tensor(x)).data[:, 0]
        return (z * self.target_std + self.target_mean).astype(np.float32)

    def predict(self, channels: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Raw (C, n, m) or (N, C, n, m) stacks -> °C maps of matching leading shape."""
        single = channels.ndim == 3
        x = channels[None] if single else channels
        outs = [self.predict_normalized(np.stack([apply_norm(c, self.norm) for c in x[i:i + batch_size]]))
                for i in range(0, len(x), batch_size)]
        out = np.concatenate(outs)
        return out[0] if single else out


def save_model(path: str | Path, model: TrainedModel) -> Path:
    p = model.params
    extra = {
        "kind": p.kind,
        "arch": p.arch.to_dict() if p.arch is not None else None,
        "norm": model.norm.to_dict(),
        "target_mean": model.target_mean,
        "target_std": model.target_std,
        "info": model.info,
    }
    return save_arrays(path, p.arrays(), extra)


def load_model(path: str | Path) -> TrainedModel:
    arrays, manifest = load_arrays(path)
    kind = manifest.get("kind")
    if kind not in MODEL_KINDS:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    arch = ArchConfig(**manifest["arch"]) if manifest.get("arch") else None
    in_channels = arch.in_channels if arch is not None else arrays["weight"].shape[1]
    fresh = build_model(kind, arch, in_channels=in_channels)
    if set(fresh.tensors) != set(arrays):
        raise ValueError(f"{path}: parameter names do not match a {kind} model")
    for name, t in fresh.tensors.items():
        if t.shape != arrays[name].shape:
            raise ValueError(f"{path}: {name} has shape {arrays[name].shape}, expected {t.shape}")
        t.data = arrays[name]
    params = ModelParams(kind, fresh.tensors, fresh.arch)
    return TrainedModel(params, NormStats.from_dict(manifest["norm"]), float(manifest["target_mean"]),
                        float(manifest["target_std"]), dict(manifest.get("info", {})))


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    lr: float


@dataclass
class FitResult:
    model: TrainedModel
    history: list[EpochRecord]
    best_epoch: int
    best_val_mae: float
    stopped_early: bool

    @property
    def params(self) -> ModelParams:
        return self.model.params


def write_history(path: str | Path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_mae", "lr"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_mae), repr(r.lr)])


def pad_batch(xs: Sequence[np.ndarray], ts: Sequence[np.ndarray], vs: Sequence[np.ndarray]):
    """Mirror-pad samples to the largest height/width in the batch; padding is never valid."""
    hmax = max(t.shape[0] for t in ts)
    wmax = max(t.shape[1] for t in ts)
    xb = np.empty((len(xs), xs[0].shape[0], hmax, wmax), dtype=np.float32)
    tb = np.zeros((len(xs), hmax, wmax), dtype=np.float32)
    vb = np.zeros((len(xs), hmax, wmax), dtype=bool)
    for i, (x, t, v) in enumerate(zip(xs, ts, vs)):
        h, w = t.shape
        if (h, w) == (hmax, wmax):
            xb[i], tb[i], vb[i] = x, t, v
            continue
        (rb, _), (cb, _) = pad_amounts(h, hmax), pad_amounts(w, wmax)
        ri = reflect_index(h, *pad_amounts(h, hmax))
        ci = reflect_index(w, *pad_amounts(w, wmax))
        xb[i] = x[:, ri][:, :, ci]
        tb[i, rb:rb + h, cb:cb + w] = t
        vb[i, rb:rb + h, cb:cb + w] = v
    return xb, tb, vb


def _z_stats(samples: Sequence[DaySample]) -> tuple[float, float]:
    vals = np.concatenate([s.target[s.valid].astype(np.float64) for s in samples])
    if vals.size == 0:
        raise TrainingError("training split has no valid target pixel")
    std = float(vals.std())
    return float(vals.mean()), std if std > 1e-6 else 1.0


def _prepare(samples: Sequence[DaySample], norm: NormStats, mean: float, std: float):
    return [(apply_norm(s.channels, norm), ((s.target - mean) / std).astype(np.float32), s.valid)
            for s in samples]


def _val_mae(model: TrainedModel, prepared, samples: Sequence[DaySample], batch_size: int) -> float:
    abs_sum, count = 0.0, 0
    for i in range(0, len(prepared), batch_size):
        xb = np.stack([p[0] for p in prepared[i:i + batch_size]])
        pred = model.predict_normalized(xb)
        for j, s in enumerate(samples[i:i + batch_size]):
            if s.n_valid:
                abs_sum += float(np.abs(pred[j][s.valid].astype(np.float64) - s.target[s.valid]).sum())
                count += s.n_valid
    if count == 0:
        raise TrainingError("validation split has no valid target pixel")
    return abs_sum / count


def _global_clip(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if total <= max_norm or total == 0:
        return grads
    scale = max_norm / total
    return {k: g * np.float32(scale) for k, g in grads.items()}


def fit(samples: Sequence[DaySample], kind: str, cfg: TrainConfig = TrainConfig(),
        augment_cfg: AugmentConfig | None = None, params: ModelParams | None = None) -> FitResult:
    """Train ``kind`` on the train years, select the epoch with the best validation MAE."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    train = split_samples(samples, cfg.train_years)
    val = split_samples(samples, cfg.val_years)
    if not train:
        raise TrainingError(f"no training days in years {cfg.train_years}")
    if not val:
        raise TrainingError(f"no validation days in years {cfg.val_years}")
    if augment_cfg is None:
        augment_cfg = AugmentConfig() if cfg.augment else AugmentConfig.disabled()

    norm = compute_norm_stats([s.channels for s in train])
    t_mean, t_std = _z_stats(train)
    train_p = _prepare(train, norm, t_mean, t_std)
    val_p = _prepare(val, norm, t_mean, t_std)

    in_channels = train[0].channels.shape[0]
    if params is None:
        params = build_model(kind, cfg.arch(kind), seed=cfg.seed, in_channels=in_channels)
    model = TrainedModel(params, norm, t_mean, t_std)
    opt_name = cfg.optimizer_for(kind)
    sched = PlateauScheduler(cfg.lr_for(kind), cfg.plateau_patience, cfg.plateau_factor, cfg.min_delta)
    stopper = EarlyStopping(cfg.early_stop_patience, cfg.min_delta)
    state: AdamWState | None = None
    names = list(params.tensors)
    best_arrays = {k: t.data.copy() for k, t in params.tensors.items()}
    history: list[EpochRecord] = []
    stopped = False
    best_val, best_epoch = math.inf, 0

    for epoch in range(1, cfg.max_epochs + 1):
        lr = sched.lr
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train))
        loss_sum, loss_pixels, steps = 0.0, 0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            parts = []
            for i in idx:
                x, t, v = train_p[i]
                a = augment(x, t, v, sample_rng(cfg.seed, train[i].date, epoch), augment_cfg)
                parts.append((a.channels, a.target, a.valid))
            xb, tb, vb = pad_batch(*zip(*parts))
            pred = forward(params, Tensor(xb))
            loss, skipped = masked_mse(pred, tb, vb)
            if skipped.all():
                log.debug("epoch %d: batch at %d has no valid pixel, no step", epoch, start)
                continue
            lval = float(loss.data)
            if not math.isfinite(lval):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            for t in params.tensors.values():
                t.grad = None
            loss.backward()
            grads = {k: (params.tensors[k].grad if params.tensors[k].grad is not None
                         else np.zeros_like(params.tensors[k].data)) for k in names}
            if cfg.grad_clip is not None:
                grads = _global_clip(grads, cfg.grad_clip)
            current = {k: params.tensors[k].data for k in names}
            if opt_name == "sgd":
                new = sgd_step(current, grads, lr)
            else:
                new, state = adamw_step(current, grads, state, lr, weight_decay=cfg.weight_decay)
            for k in names:
                params.tensors[k].data = new[k]
                params.tensors[k].grad = None
            n_pix = int(vb.sum())
            loss_sum += lval * n_pix
            loss_pixels += n_pix
            steps += 1
        if steps == 0:
            raise TrainingError(f"epoch {epoch}: every training sample was skipped (no valid pixels)")

        val_mae = _val_mae(model, val_p, val, cfg.batch_size)
        if not math.isfinite(val_mae):
            raise NumericalError(f"non-finite validation MAE at epoch {epoch}")
        history.append(EpochRecord(epoch, loss_sum / loss_pixels, val_mae, lr))
        log.info("epoch %d  train_loss %.5f  val_mae %.4f  lr %.3g", epoch, loss_sum / loss_pixels, val_mae, lr)
        stopper.update(val_mae, epoch)
        if val_mae < best_val:  # checkpoint on any improvement, patience uses min_delta
            best_val, best_epoch = val_mae, epoch
            best_arrays = {k: t.data.copy() for k, t in params.tensors.items()}
        sched.step(val_mae)
        if stopper.should_stop:
            stopped = True
            log.info("early stop after epoch %d (best %d)", epoch, best_epoch)
            break

    for k, t in params.tensors.items():
        t.data = best_arrays[k]
    model.info = {"best_epoch": best_epoch, "best_val_mae": best_val,
                  "epochs_run": len(history), "optimizer": opt_name}
    return FitResult(model, history, best_epoch, best_val, stopped)

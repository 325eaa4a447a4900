"""Test-year MAE, per-resolution report tables and prediction-map export."""
from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .bundle import write_bundle
from .dataset import DatasetInfo, load_day
from .grid import Grid
from .training import TrainedModel


class EvaluationError(ValueError):
    pass


def mae(pred: np.ndarray, target: np.ndarray, valid: np.ndarray) -> float | None:
    """Mean |pred - target| over valid pixels; ``None`` when no pixel is valid."""
    pred = np.asarray(pred)
    if pred.shape != np.shape(target) or pred.shape != np.shape(valid):
        raise ValueError(f"prediction {pred.shape} and target {np.shape(target)} differ in shape")
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        return None
    return float(np.abs(pred[valid].astype(np.float64) - np.asarray(target)[valid]).sum() / n)


def mse(pred: np.ndarray, target: np.ndarray, valid: np.ndarray) -> float | None:
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        return None
    d = np.asarray(pred)[valid].astype(np.float64) - np.asarray(target)[valid]
    return float((d * d).sum() / n)


@dataclass
class DayResult:
    date: dt.date
    mae: float | None  # None: skipped
    valid_pixels: int
    abs_error_sum: float = 0.0
    status: str = "ok"


@dataclass
class EvalReport:
    resolution: float
    model: str
    days: list[DayResult] = field(default_factory=list)

    @property
    def scored(self) -> list[DayResult]:
        return [d for d in self.days if d.mae is not None]

    @property
    def skipped_days(self) -> int:
        return sum(d.mae is None for d in self.days)

    @property
    def valid_pixels(self) -> int:
        return sum(d.valid_pixels for d in self.scored)

    @property
    def aggregate_mae(self) -> float:
        """Pooled over all valid (pixel, day) pairs."""
        n = self.valid_pixels
        if n == 0:
            raise EvaluationError("no valid target pixel in the evaluated days")
        return sum(d.abs_error_sum for d in self.scored) / n

    @property
    def mean_daily_mae(self) -> float:
        return float(np.mean([d.mae for d in self.scored]))

    @property
    def per_day_mae(self) -> list[float]:
        return [d.mae for d in self.scored]


def evaluate(model: TrainedModel, info: DatasetInfo, years: Sequence[int] = (2023,),
             batch_size: int = 32, name: str | None = None) -> EvalReport:
    """Score every scene of ``years``; rejected scenes and days without stations are skipped."""
    years = set(int(y) for y in years)
    report = EvalReport(info.resolution, name or model.kind)
    rows = sorted((r for r in info.index if dt.date.fromisoformat(r["date"]).year in years),
                  key=lambda r: r["date"])
    pending = []
    for r in rows:
        date = dt.date.fromisoformat(r["date"])
        if r["status"] != "ok" or int(r["valid_pixels"]) == 0:
            # scene never reached the dataset, or no station reported: targets are not read
            report.days.append(DayResult(date, None, 0, status=r["status"] if r["status"] != "ok" else "no-target"))
        else:
            report.days.append(DayResult(date, None, 0))
            pending.append(len(report.days) - 1)
    for i in range(0, len(pending), batch_size):
        chunk = pending[i:i + batch_size]
        samples = [load_day(info, report.days[j].date) for j in chunk]
        preds = model.predict(np.stack([s.channels for s in samples]), batch_size)
        for j, s, p in zip(chunk, samples, preds):
            n = s.n_valid
            err = float(np.abs(p[s.valid].astype(np.float64) - s.target[s.valid]).sum())
            report.days[j] = DayResult(s.date, err / n if n else None, n, err, "ok" if n else "no-target")
    if report.valid_pixels == 0:
        raise EvaluationError(f"no valid target pixel in years {sorted(years)} at {info.resolution:g} m/px")
    return report


def constant_baseline_report(info: DatasetInfo, value: float, years: Sequence[int] = (2023,)) -> EvalReport:
    """Score a model that predicts ``value`` everywhere (reference point for the trained models)."""
    report = EvalReport(info.resolution, "constant")
    for date in info.dates():
        if date.year not in years:
            continue
        s = load_day(info, date)
        n = s.n_valid
        err = float(np.abs(s.target[s.valid].astype(np.float64) - value).sum())
        report.days.append(DayResult(date, err / n if n else None, n, err))
    return report


# --------------------------------------------------------------------------
# report output
# --------------------------------------------------------------------------

REPORT_COLUMNS = ("resolution_m", "model", "mae", "mean_daily_mae", "days", "skipped_days", "valid_pixels")


def report_rows(reports: Iterable[EvalReport]) -> list[dict]:
    out = []
    for r in sorted(reports, key=lambda r: (-r.resolution, r.model)):
        out.append({"resolution_m": f"{r.resolution:g}", "model": r.model, "mae": f"{r.aggregate_mae:.6f}",
                    "mean_daily_mae": f"{r.mean_daily_mae:.6f}", "days": len(r.scored),
                    "skipped_days": r.skipped_days, "valid_pixels": r.valid_pixels})
    return out


def report_csv(reports: Iterable[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(report_rows(reports))
    return buf.getvalue()


def per_day_csv(reports: Iterable[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["resolution_m", "model", "date", "status", "mae", "valid_pixels"])
    for r in sorted(reports, key=lambda r: (-r.resolution, r.model)):
        for d in r.days:
            w.writerow([f"{r.resolution:g}", r.model, d.date.isoformat(), d.status,
                        "" if d.mae is None else f"{d.mae:.6f}", d.valid_pixels])
    return buf.getvalue()


def format_table(reports: Iterable[EvalReport], models: Sequence[str] | None = None) -> str:
    """Rows per resolution, one MAE column per model (blank when not evaluated)."""
    reports = list(reports)
    if models is None:
        models = []
        for r in reports:
            if r.model not in models:
                models.append(r.model)
    resolutions = sorted({r.resolution for r in reports}, reverse=True)
    cell = {(r.resolution, r.model): r.aggregate_mae for r in reports}
    head = ["MAE (°C)"] + list(models)
    body = [[f"{res:g} m/px"] + [f"{cell[(res, m)]:.3f}" if (res, m) in cell else "-" for m in models]
            for res in resolutions]
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
    rule = "-" * len(fmt(head))
    return "\n".join([fmt(head), rule, *map(fmt, body)]) + "\n"


def write_reports(out: str | Path, reports: Sequence[EvalReport]) -> dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "report.csv", "table": out / "report.txt", "days": out / "per_day.csv"}
    paths["csv"].write_text(report_csv(reports))
    paths["table"].write_text(format_table(reports))
    paths["days"].write_text(per_day_csv(reports))
    return paths


# --------------------------------------------------------------------------
# map export
# --------------------------------------------------------------------------

_RAMP = np.array([  # cold to hot
    (49, 54, 149), (69, 117, 180), (116, 173, 209), (171, 217, 233), (255, 255, 191),
    (254, 224, 144), (253, 174, 97), (244, 109, 67), (215, 48, 39), (165, 0, 38),
], dtype=np.float64)


def color_lut() -> np.ndarray:
    pos = np.linspace(0, 255, len(_RAMP))
    x = np.arange(256)
    return np.stack([np.interp(x, pos, _RAMP[:, c]) for c in range(3)], axis=1).round().astype(np.uint8)


def to_index_image(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Scale to 0..255 between the map extrema; a constant map maps to the ramp centre."""
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi > lo:
        idx = np.rint((values.astype(np.float64) - lo) / (hi - lo) * 255)
    else:
        idx = np.full(values.shape, 128.0)
    return idx.astype(np.uint8), lo, hi


@dataclass
class ExportedMap:
    bundle: Path
    image: Path
    min_c: float
    max_c: float


def export_map(pred: np.ndarray, grid: Grid, path: str | Path, title: str = "") -> ExportedMap:
    """Grid bundle with band ``tmax_pred`` plus ``map.png`` annotated with min/max °C."""
    pred = np.asarray(pred, dtype=np.float32)
    if pred.shape != grid.shape:
        raise ValueError(f"map {pred.shape} does not match grid {grid.shape}")
    path = Path(path)
    idx, lo, hi = to_index_image(pred)
    bundle = write_bundle(path, grid, pred, ["tmax_pred"], attrs={"min_c": lo, "max_c": hi, "title": title})

    rgb = color_lut()[idx]
    scale = max(1, -(-256 // min(pred.shape)))
    img = Image.fromarray(rgb, "RGB").resize((pred.shape[1] * scale, pred.shape[0] * scale), Image.NEAREST)
    font = ImageFont.load_default()
    bar_h = 28
    canvas = Image.new("RGB", (img.width, img.height + bar_h), (255, 255, 255))
    canvas.paste(img, (0, 0))
    ramp = Image.fromarray(np.repeat(color_lut()[None], 8, axis=0), "RGB").resize((max(img.width - 120, 16), 8))
    canvas.paste(ramp, (60, img.height + 10))
    draw = ImageDraw.Draw(canvas)
    draw.text((4, img.height + 8), f"{lo:.1f}°C".replace("°", " "), fill=(0, 0, 0), font=font)
    draw.text((img.width - 56, img.height + 8), f"{hi:.1f}°C".replace("°", " "), fill=(0, 0, 0), font=font)
    if title:
        draw.text((4, 4), title, fill=(0, 0, 0), font=font)
    image = path / "map.png"
    canvas.save(image, format="PNG")
    return ExportedMap(bundle, image, lo, hi)

"""On-disk per-resolution datasets: one input stack and one target raster per day.

Layout of a dataset directory::

    layout.json          channel names, resolution, grid header
    index.csv            date, split, status, valid_pixels (one row per scene)
    stacks/<date>/       39-band grid bundle
    targets/<date>/      single-band bundle "tmax" (nodata where no station)
"""
from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bundle import grid_from_header, grid_header, read_bundle, write_bundle
from .grid import Grid

DEFAULT_SPLITS = {"train": (2018, 2019, 2020, 2021), "val": (2022,), "test": (2023,)}
INDEX_COLUMNS = ("date", "split", "status", "valid_pixels")


@dataclass
class DaySample:
    date: dt.date
    channels: np.ndarray  # (C, n, m) float32, physical units
    target: np.ndarray  # (n, m) float32
    valid: np.ndarray  # (n, m) bool

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))


def split_of(date: dt.date, splits: dict = DEFAULT_SPLITS) -> str:
    for name, years in splits.items():
        if date.year in years:
            return name
    return "unused"


def split_samples(samples: Iterable[DaySample], years: Sequence[int]) -> list[DaySample]:
    years = set(int(y) for y in years)
    return sorted((s for s in samples if s.date.year in years), key=lambda s: s.date)


@dataclass
class DatasetInfo:
    root: Path
    grid: Grid
    channels: list[str]
    index: list[dict]

    @property
    def resolution(self) -> float:
        return self.grid.resolution

    def dates(self, status: str = "ok", split: str | None = None) -> list[dt.date]:
        return [dt.date.fromisoformat(r["date"]) for r in self.index
                if r["status"] == status and (split is None or r["split"] == split)]


def write_layout(root: str | Path, grid: Grid, channels: Sequence[str]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    doc = {"channels": list(channels), "resolution": grid.resolution, "grid": grid_header(grid)}
    (root / "layout.json").write_text(json.dumps(doc, indent=2) + "\n")


def write_index(root: str | Path, rows: Sequence[dict]) -> None:
    with open(Path(root) / "index.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=INDEX_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in sorted(rows, key=lambda r: r["date"]):
            w.writerow({k: r[k] for k in INDEX_COLUMNS})


def write_day(root: str | Path, date: dt.date, grid: Grid, channels: np.ndarray, names: Sequence[str],
              target: np.ndarray, valid: np.ndarray) -> None:
    root = Path(root)
    key = date.isoformat()
    write_bundle(root / "stacks" / key, grid, channels, names, attrs={"date": key})
    write_bundle(root / "targets" / key, grid, target, ["tmax"], valid=valid, attrs={"date": key})


def open_dataset(root: str | Path) -> DatasetInfo:
    root = Path(root)
    layout_path = root / "layout.json"
    if not layout_path.exists():
        raise FileNotFoundError(f"{root} is not a dataset directory (no layout.json)")
    doc = json.loads(layout_path.read_text())
    with open(root / "index.csv", newline="") as fh:
        index = list(csv.DictReader(fh))
    return DatasetInfo(root, grid_from_header(doc["grid"]), list(doc["channels"]), index)


def load_day(info: DatasetInfo, date: dt.date) -> DaySample:
    key = date.isoformat()
    stack = read_bundle(info.root / "stacks" / key)
    if stack.channels != info.channels:
        raise ValueError(f"{key}: stack channels differ from the dataset layout")
    tgt = read_bundle(info.root / "targets" / key)
    valid = tgt.valid[0]
    return DaySample(date, stack.data, np.where(valid, tgt.data[0], 0).astype(np.float32), valid)


def load_samples(info: DatasetInfo, dates: Iterable[dt.date] | None = None) -> list[DaySample]:
    dates = info.dates() if dates is None else dates
    return [load_day(info, d) for d in sorted(dates)]

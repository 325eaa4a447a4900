"""Station readings -> daily maxima -> sparse target rasters."""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import kernels
from .grid import Grid

log = logging.getLogger(__name__)

STATION_COLUMNS = ("station_id", "x", "y", "timestamp", "temperature_c")
MIN_READINGS = 100
PLAUSIBLE_RANGE = (-30.0, 50.0)


@dataclass
class TargetRaster:
    grid: Grid
    values: np.ndarray
    valid: np.ndarray
    date: dt.date | None = None

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))


def daily_max(temperatures, min_readings: int = MIN_READINGS) -> float | None:
    """Maximum of one station-day, or ``None`` when the day has too few readings."""
    t = np.asarray(temperatures, dtype=np.float64)
    t = t[np.isfinite(t)]
    if t.size < min_readings or t.size == 0:
        return None
    return float(t.max())


def pixel_of(x, y, grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row/col of points under half-open footprints ``[x0, x0+r) x [y0, y0+r)``.

    Returns ``(rows, cols, inside)``; points outside the bbox or the pixel
    lattice are flagged ``inside=False``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    r = grid.resolution
    b = grid.bbox
    cols = np.floor((x - b.min_x) / r).astype(np.int64)
    rows = (np.ceil((b.max_y - y) / r) - 1).astype(np.int64)
    inside = ((x >= b.min_x) & (x < b.max_x) & (y >= b.min_y) & (y < b.max_y)
              & (rows >= 0) & (rows < grid.rows) & (cols >= 0) & (cols < grid.cols))
    return rows, cols, inside


def rasterize_stations(x, y, maxima, grid: Grid, date: dt.date | None = None) -> TargetRaster:
    """Average the daily maxima of all stations inside each pixel; empty pixels are invalid."""
    maxima = np.asarray(maxima, dtype=np.float64)
    rows, cols, inside = pixel_of(x, y, grid)
    dropped = int((~inside).sum())
    if dropped:
        log.info("%s: %d station(s) outside the grid ignored", date, dropped)
    sums, counts = kernels.pixel_accumulate(rows[inside], cols[inside], maxima[inside], grid.rows, grid.cols)
    valid = counts > 0
    values = np.where(valid, sums / np.maximum(counts, 1), 0.0).astype(np.float32)
    return TargetRaster(grid, values, valid, date)


def read_station_csv(path: str | Path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"station_id": str})
    missing = [c for c in STATION_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    df = df[list(STATION_COLUMNS)].copy()
    # local civil time; any UTC offset in the string is dropped, the wall-clock day is kept
    df["timestamp"] = pd.to_datetime(df["timestamp"].str.slice(0, 19), format="ISO8601")
    if df[["x", "y", "temperature_c"]].isna().any().any():
        raise ValueError(f"{path}: empty x/y/temperature cells")
    return df


def daily_maxima_table(readings: pd.DataFrame, min_readings: int = MIN_READINGS,
                       plausible: tuple[float, float] | None = None) -> pd.DataFrame:
    """One row per valid station-day: date, station_id, x, y, tmax."""
    df = readings
    if plausible is not None:
        lo, hi = plausible
        df = df[(df["temperature_c"] >= lo) & (df["temperature_c"] <= hi)]
    df = df.assign(date=df["timestamp"].dt.date)
    g = df.groupby(["date", "station_id"], sort=True)
    out = g.agg(x=("x", "first"), y=("y", "first"),
                tmax=("temperature_c", "max"), n=("temperature_c", "size")).reset_index()
    out = out[out["n"] >= min_readings].drop(columns="n")
    return out.reset_index(drop=True)


def targets_for_day(table: pd.DataFrame, date: dt.date, grid: Grid) -> TargetRaster:
    day = table[table["date"] == date]
    return rasterize_stations(day["x"].to_numpy(), day["y"].to_numpy(), day["tmax"].to_numpy(), grid, date)


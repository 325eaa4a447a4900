"""Raw scene directory -> per-resolution training datasets.

A raw scene directory holds everything observed for one area::

    scene.json            bbox (min_x, min_y, max_x, max_y) and crs_id
    bands/<date>/         5-band bundle F1 F2 S7 S8 S9 (nodata = cloud);
                          attrs: date, passage_time (seconds after midnight)
    dem/                  single-band bundle "dem"
    landcover/            single-band bundle "class" with class indices 0..26
    weather.csv           date + one column per daily weather indicator
    stations.csv          station_id, x, y, timestamp, temperature_c

``ingest`` converts GeoTIFF / CSV inputs into this layout and
``build_dataset`` turns it into the stack/target datasets of
:mod:`tmaxcast.dataset`, one per resolution.
"""
from __future__ import annotations

import datetime as dt
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import dataset as ds
from .bundle import read_bundle, write_bundle
from .features import BAND_NAMES, DEFAULT_WEATHER_NAMES, N_WEATHER, WeatherVector, assemble_stack
from .geotiff import read_geotiff
from .grid import (VALID_FRACTION_THRESHOLD, BoundingBox, ClassRaster, Grid, RasterLayer, SceneRejected,
                   impute, make_grid, resample_bilinear, resample_masked, valid_fraction)
from .landcover import DEFAULT_MAPPING, URBAN_ATLAS_CODES, class_fractions
from .stations import MIN_READINGS, daily_maxima_table, read_station_csv, targets_for_day

log = logging.getLogger(__name__)

DEFAULT_RESOLUTIONS = (100.0, 50.0, 20.0)


class DataError(ValueError):
    """Input files are missing, malformed or inconsistent."""


def res_key(resolution: float) -> str:
    return f"r{resolution:g}"


# --------------------------------------------------------------------------
# raw scene access
# --------------------------------------------------------------------------

def read_scene_bbox(raw: str | Path) -> BoundingBox:
    path = Path(raw) / "scene.json"
    if not path.exists():
        raise DataError(f"{raw}: missing scene.json")
    doc = json.loads(path.read_text())
    return BoundingBox(*map(float, doc["bbox"]), crs_id=doc.get("crs_id", ""))


def write_scene_bbox(raw: str | Path, bbox: BoundingBox) -> None:
    raw = Path(raw)
    raw.mkdir(parents=True, exist_ok=True)
    doc = {"bbox": [bbox.min_x, bbox.min_y, bbox.max_x, bbox.max_y], "crs_id": bbox.crs_id}
    (raw / "scene.json").write_text(json.dumps(doc, indent=2) + "\n")


def read_weather_csv(path: str | Path, names: Sequence[str] = DEFAULT_WEATHER_NAMES) -> dict[dt.date, WeatherVector]:
    """Daily weather table; every listed indicator must be present and non-empty."""
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"missing weather table {path}") from None
    missing = [c for c in ("date", *names) if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    if len(names) != N_WEATHER:
        raise DataError(f"expected {N_WEATHER} weather indicators, got {len(names)}")
    values = df[list(names)].apply(pd.to_numeric, errors="coerce")
    bad = values.isna().any(axis=1)
    if bad.any():
        raise DataError(f"{path}: empty or non-numeric cells on {df.loc[bad, 'date'].head(3).tolist()}")
    out = {}
    for d, row in zip(df["date"], values.to_numpy()):
        day = dt.date.fromisoformat(str(d)[:10])
        if day in out:
            raise DataError(f"{path}: duplicate date {day}")
        out[day] = WeatherVector(row, tuple(names))
    return out


def band_dates(raw: str | Path) -> list[dt.date]:
    d = Path(raw) / "bands"
    if not d.is_dir():
        raise DataError(f"{raw}: no bands/ directory")
    return sorted(dt.date.fromisoformat(p.name) for p in d.iterdir() if (p / "header.json").exists())


@dataclass
class StaticLayers:
    """Per-resolution channels that do not change from day to day."""
    grid: Grid
    dem: RasterLayer
    fractions: list[RasterLayer]


def static_layers(raw: str | Path, grid: Grid, mapping: np.ndarray = DEFAULT_MAPPING) -> StaticLayers:
    raw = Path(raw)
    try:
        dem_b = read_bundle(raw / "dem")
        lc_b = read_bundle(raw / "landcover")
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    try:
        dem = resample_bilinear(impute(dem_b.layers()[0]), grid)
    except SceneRejected as exc:
        raise DataError(f"DEM has too many holes ({exc})") from None
    codes = np.where(lc_b.valid[0], np.rint(lc_b.data[0]), -1).astype(np.int16)
    fractions = class_fractions(ClassRaster(lc_b.grid, codes), grid, mapping)
    if not fractions[0].fully_valid:
        try:
            fractions = [impute(f) for f in fractions]
        except SceneRejected as exc:
            raise DataError(f"land-cover raster covers too little of the grid ({exc})") from None
    return StaticLayers(grid, dem, fractions)


def _band_to_grid(layer: RasterLayer, grid: Grid, threshold: float, impute_first: bool) -> RasterLayer:
    if impute_first:
        return resample_bilinear(impute(layer, threshold), grid)
    frac = valid_fraction(layer)
    if not frac > threshold:  # the rejection rule always looks at the native pixels
        raise SceneRejected(frac, threshold)
    return impute(resample_masked(layer, grid), 0.0)


def assemble_day(raw: str | Path, date: dt.date, static: StaticLayers, weather: WeatherVector,
                 threshold: float = VALID_FRACTION_THRESHOLD, impute_first: bool = True):
    """Impute + resample the day's bands and stack all 39 channels.

    Bands are imputed at their native resolution and then resampled; with
    ``impute_first=False`` they are resampled (ignoring clouds) and the
    remaining holes imputed on the target grid. Raises
    :class:`SceneRejected` when any band is not more than ``threshold`` valid.
    """
    b = read_bundle(Path(raw) / "bands" / date.isoformat())
    if b.channels != list(BAND_NAMES):
        raise DataError(f"bands/{date}: expected channels {BAND_NAMES}, got {b.channels}")
    passage = float(b.attrs.get("passage_time", 10 * 3600))
    bands = [_band_to_grid(layer, static.grid, threshold, impute_first) for layer in b.layers()]
    return assemble_stack(bands, static.dem, static.fractions, weather, date, passage, static.grid)


def build_dataset(raw: str | Path, out: str | Path, resolutions: Sequence[float] = DEFAULT_RESOLUTIONS,
                  splits: dict = ds.DEFAULT_SPLITS, min_readings: int = MIN_READINGS,
                  plausible: tuple[float, float] | None = None, impute_first: bool = True) -> dict[float, Path]:
    """Write ``out/r<res>/`` for each resolution; returns the directories.

    ``plausible`` optionally drops readings outside a temperature band such as
    :data:`~tmaxcast.stations.PLAUSIBLE_RANGE` before taking daily maxima.
    """
    raw, out = Path(raw), Path(out)
    bbox = read_scene_bbox(raw)
    weather = read_weather_csv(raw / "weather.csv")
    try:
        readings = read_station_csv(raw / "stations.csv")
    except FileNotFoundError:
        raise DataError(f"{raw}: missing stations.csv") from None
    table = daily_maxima_table(readings, min_readings, plausible)
    dates = band_dates(raw)
    made = {}
    for res in resolutions:
        grid = make_grid(bbox, res)
        static = static_layers(raw, grid)
        root = out / res_key(res)
        if root.exists():
            shutil.rmtree(root)
        rows = []
        names = None
        for date in dates:
            row = {"date": date.isoformat(), "split": ds.split_of(date, splits), "valid_pixels": 0}
            if date not in weather:
                log.warning("%s: no weather record, day skipped", date)
                rows.append(row | {"status": "no-weather"})
                continue
            try:
                stack = assemble_day(raw, date, static, weather[date], impute_first=impute_first)
            except SceneRejected as exc:
                log.warning("%s: scene rejected, %s", date, exc)
                rows.append(row | {"status": "rejected"})
                continue
            target = targets_for_day(table, date, grid)
            names = stack.layout.names
            ds.write_day(root, date, grid, stack.channels, names, target.values, target.valid)
            rows.append(row | {"status": "ok", "valid_pixels": target.n_valid})
        if names is None:
            raise DataError(f"no usable day at {res:g} m/px")
        ds.write_layout(root, grid, names)
        ds.write_index(root, rows)
        n_ok = sum(r["status"] == "ok" for r in rows)
        log.info("%s: %d usable day(s), %d rejected", root, n_ok, sum(r["status"] == "rejected" for r in rows))
        made[res] = root
    return made


# --------------------------------------------------------------------------
# ingest: GeoTIFF / CSV -> raw scene layout
# --------------------------------------------------------------------------

def _ensure_scene(raw: Path, grid: Grid) -> None:
    if not (raw / "scene.json").exists():
        write_scene_bbox(raw, grid.bbox)


def _mask(data: np.ndarray, nodata: float | None) -> np.ndarray:
    valid = np.isfinite(data)
    if nodata is not None:
        valid &= data != nodata
    return valid


def parse_time_of_day(text: str) -> float:
    parts = [int(p) for p in text.split(":")]
    if not 2 <= len(parts) <= 3:
        raise ValueError(f"time {text!r} is not HH:MM[:SS]")
    h, m, s = (parts + [0])[:3]
    return float(h * 3600 + m * 60 + s)


def ingest_bands(raw: str | Path, tiff: str | Path, date: dt.date, passage_time: float) -> Path:
    raw = Path(raw)
    grid, data, nodata = read_geotiff(tiff)
    if data.shape[0] != len(BAND_NAMES):
        raise DataError(f"{tiff}: expected {len(BAND_NAMES)} bands, found {data.shape[0]}")
    _ensure_scene(raw, grid)
    valid = _mask(data.astype(np.float32), nodata)
    return write_bundle(raw / "bands" / date.isoformat(), grid, data, BAND_NAMES, valid=valid,
                        attrs={"date": date.isoformat(), "passage_time": passage_time})


def ingest_dem(raw: str | Path, tiff: str | Path) -> Path:
    raw = Path(raw)
    grid, data, nodata = read_geotiff(tiff)
    _ensure_scene(raw, grid)
    return write_bundle(raw / "dem", grid, data[:1], ["dem"], valid=_mask(data[:1].astype(np.float32), nodata))


def ingest_landcover(raw: str | Path, tiff: str | Path, codes_are_indices: bool = True) -> Path:
    """Class raster; values are indices 0..26 or, with ``codes_are_indices=False``, Urban Atlas codes."""
    raw = Path(raw)
    grid, data, nodata = read_geotiff(tiff)
    values = data[0].astype(np.float64)
    valid = _mask(values, nodata)
    if not codes_are_indices:
        lookup = {c: i for i, c in enumerate(URBAN_ATLAS_CODES)}
        unknown = sorted({int(v) for v in np.unique(values[valid])} - set(lookup))
        if unknown:
            raise DataError(f"{tiff}: unknown Urban Atlas codes {unknown[:5]}")
        values = np.where(valid, np.vectorize(lambda v: lookup.get(int(v), -1))(values), -1)
    elif valid.any() and (values[valid].max() >= len(URBAN_ATLAS_CODES) or values[valid].min() < 0):
        raise DataError(f"{tiff}: class indices outside 0..{len(URBAN_ATLAS_CODES) - 1}")
    _ensure_scene(raw, grid)
    return write_bundle(raw / "landcover", grid, values, ["class"], valid=valid)


def ingest_weather(raw: str | Path, csv_path: str | Path) -> Path:
    table = read_weather_csv(csv_path)  # validate before copying
    dest = Path(raw) / "weather.csv"
    dest.parent.mkdir(parents=True, exist_ok=True)
    rows = [{"date": d.isoformat(), **dict(zip(v.names, v.values))} for d, v in sorted(table.items())]
    pd.DataFrame(rows).to_csv(dest, index=False, lineterminator="\n")
    return dest


def ingest_stations(raw: str | Path, csv_path: str | Path) -> Path:
    try:
        read_station_csv(csv_path)
    except (KeyError, ValueError) as exc:
        raise DataError(str(exc)) from None
    dest = Path(raw) / "stations.csv"
    dest.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(csv_path, dest)
    return dest

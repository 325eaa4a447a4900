"""Seeded synthetic scenes with a known temperature function.

The generator writes a raw scene directory (see :mod:`tmaxcast.pipeline`)
plus ``truth/<date>/`` maps and ``synth.json`` describing what was planted.
Truth maps are kept out of everything ``build-dataset`` reads.

Two truth generators:

``planted-linear``
    T = w* . stack + b*, where ``stack`` is exactly the 39-channel stack the
    pipeline assembles at the scene resolution (after imputation and
    resampling). A per-pixel linear model can recover it.
``smooth-field``
    T = tempmax + a low-frequency random field + an urban heat term that is
    a blurred urban fraction scaled by solar radiation, minus an elevation
    lapse. Not linear in the inputs.

Stations sample the truth at their pixel, add bounded Gaussian noise
(clipped at 4 std) to the daily maximum and report a diurnal curve peaking
at that value.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter

from . import pipeline
from .bundle import write_bundle
from .features import BAND_NAMES, DEFAULT_WEATHER_NAMES
from .grid import BoundingBox, ClassRaster, Grid, make_grid
from .landcover import GROUP_NAMES, URBAN_ATLAS_CODES, class_fractions
from .stations import pixel_of

GENERATORS = ("planted-linear", "smooth-field")
NOISE_CLIP = 4.0  # station noise is clipped at this many std
PEAK_SECONDS = 14 * 3600 + 30 * 60


@dataclass
class SynthConfig:
    seed: int = 0
    grid_size: int = 64
    resolution: float = 100.0
    train_days: int = 200
    val_days: int = 40
    test_days: int = 40
    n_stations: int = 30
    kind: str = "planted-linear"
    noise_std: float = 0.2
    band_resolution: float = 500.0
    dem_resolution: float = 20.0
    landcover_resolution: float = 10.0
    cloudy_fraction: float = 0.2  # days with some cloud, still usable
    rejected_fraction: float = 0.05  # days with too much cloud
    readings_per_day: int = 144
    dropout_prob: float = 0.02  # station-days that report too few readings
    origin_x: float = 390000.0
    origin_y: float = 4990000.0

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ValueError(f"unknown generator {self.kind!r}; choose from {GENERATORS}")
        if self.grid_size < 8 or self.n_stations < 1 or self.noise_std < 0:
            raise ValueError("grid_size >= 8, n_stations >= 1 and noise_std >= 0 required")
        if min(self.train_days, self.val_days, self.test_days) < 1:
            raise ValueError("every split needs at least one day")
        if self.readings_per_day < 1 or self.readings_per_day > 1440:
            raise ValueError("readings_per_day must lie in 1..1440")
        side = self.grid_size * self.resolution
        for r in (self.dem_resolution, self.landcover_resolution):
            if abs(side / r - round(side / r)) > 1e-9:
                raise ValueError(f"resolution {r} does not tile the {side} m scene")

    @property
    def n_days(self) -> int:
        return self.train_days + self.val_days + self.test_days

    def bbox(self) -> BoundingBox:
        side = self.grid_size * self.resolution
        return BoundingBox(self.origin_x, self.origin_y, self.origin_x + side, self.origin_y + side)


@dataclass
class SynthResult:
    root: Path
    dates: list[dt.date]
    rejected: list[dt.date]
    weights: np.ndarray | None  # planted w* (39,) for planted-linear
    bias: float | None
    station_x: np.ndarray
    station_y: np.ndarray


def _field(rng: np.random.Generator, shape: tuple[int, int], sigma: float) -> np.ndarray:
    """Smooth standardized random field."""
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    return (f - f.mean()) / (f.std() + 1e-12)


def _code(c: int) -> int:
    return URBAN_ATLAS_CODES.index(c)


def _landcover(rng: np.random.Generator, n: int) -> np.ndarray:
    """Class indices on an n x n fine grid: a city with suburbs, industry, parks, fields, woods, a lake."""
    yy, xx = np.mgrid[0:n, 0:n] / n
    cy, cx = rng.uniform(0.35, 0.65, 2)
    city = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 0.045) * 2.2 + 0.5 * _field(rng, (n, n), n / 24)
    green = _field(rng, (n, n), n / 30)
    forest = _field(rng, (n, n), n / 12)
    industry = _field(rng, (n, n), n / 20)
    water = _field(rng, (n, n), n / 10)

    cls = np.full((n, n), _code(21000), dtype=np.int16)
    cls[forest > 0.7] = _code(31000)
    cls[(forest > 0.3) & (forest <= 0.7)] = _code(23000)
    cls[city > 0.55] = _code(11220)
    cls[city > 1.1] = _code(11100)
    cls[(city > 0.4) & (industry > 1.0)] = _code(12100)
    cls[(city > 0.55) & (green > 1.1)] = _code(14100)
    cls[water > 1.9] = _code(50000)
    for pos in rng.integers(n // 8, n - n // 8, size=2):  # a road in each direction
        cls[pos:pos + max(1, n // 160), :] = _code(12220)
        cls[:, pos:pos + max(1, n // 160)] = _code(12220)
    return cls


def _weather(rng: np.random.Generator, date: dt.date) -> np.ndarray:
    doy = date.timetuple().tm_yday
    s = np.sin(2 * np.pi * (doy - 110) / 365.25)
    tmax = 18 + 11 * s + rng.normal(0, 3)
    tmin = tmax - 9 + rng.normal(0, 1.5)
    temp = 0.5 * (tmax + tmin)
    cloud = float(np.clip(rng.normal(35, 25), 0, 100))
    vals = {
        "tempmax": tmax, "tempmin": tmin, "temp": temp,
        "feelslikemax": tmax + rng.normal(0, 0.5), "feelslikemin": tmin + rng.normal(0, 0.8),
        "feelslike": temp + rng.normal(0, 0.5),
        "dew": tmin - 3 + rng.normal(0, 2),
        "humidity": float(np.clip(65 - 10 * s + rng.normal(0, 10), 15, 100)),
        "precip": max(0.0, rng.normal(0, 3)),
        "windspeed": abs(rng.normal(10, 4)),
        "winddir": rng.uniform(0, 360),
        "sealevelpressure": rng.normal(1015, 6),
        "cloudcover": cloud,
        "visibility": float(np.clip(rng.normal(20, 4), 1, 40)),
        "solarradiation": float(np.clip(180 + 120 * s - 1.2 * cloud + rng.normal(0, 20), 10, 400)),
    }
    return np.array([round(float(vals[k]), 4) for k in DEFAULT_WEATHER_NAMES])


def _pick_dates(rng: np.random.Generator, years: tuple[int, ...], k: int) -> list[dt.date]:
    start, end = dt.date(min(years), 1, 1), dt.date(max(years), 12, 31)
    span = (end - start).days + 1
    if k > span:
        raise ValueError(f"cannot draw {k} distinct days from {years}")
    offs = np.sort(rng.choice(span, size=k, replace=False))
    return [start + dt.timedelta(days=int(o)) for o in offs]


def _cloud_mask(rng: np.random.Generator, shape: tuple[int, int], fraction: float) -> np.ndarray:
    """Valid mask with exactly round(fraction * size) clouded pixels in smooth blobs."""
    f = _field(rng, shape, 1.5).ravel()
    k = int(round(fraction * f.size))
    valid = np.ones(f.size, dtype=bool)
    if k:
        valid[np.argsort(-f, kind="stable")[:k]] = False
    return valid.reshape(shape)


def _urban_share(fractions) -> np.ndarray:
    idx = [GROUP_NAMES.index(n) for n in GROUP_NAMES[:3]]  # dense, low-density, industrial
    return sum(np.where(fractions[i].valid, fractions[i].values, 0.0) for i in idx)


def synth_dataset(cfg: SynthConfig, out: str | Path) -> SynthResult:
    """Write a raw scene, truth maps and ``synth.json`` under ``out``."""
    out = Path(out)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    seeds = np.random.SeedSequence(cfg.seed).spawn(8)
    r_land, r_dem, r_dates, r_weather, r_bands, r_stations, r_noise, r_truth = (
        np.random.default_rng(s) for s in seeds)

    bbox = cfg.bbox()
    grid = make_grid(bbox, cfg.resolution)
    pipeline.write_scene_bbox(out, bbox)

    # static layers
    lc_grid = make_grid(bbox, cfg.landcover_resolution)
    classes = _landcover(r_land, lc_grid.rows)
    write_bundle(out / "landcover", lc_grid, classes.astype(np.float32), ["class"])
    dem_grid = make_grid(bbox, cfg.dem_resolution)
    dem = 250 + 60 * _field(r_dem, dem_grid.shape, dem_grid.rows / 5) \
        + 40 * np.linspace(1, -1, dem_grid.rows)[:, None]
    write_bundle(out / "dem", dem_grid, dem.astype(np.float32), ["dem"])

    # days and weather
    dates = (_pick_dates(r_dates, (2018, 2019, 2020, 2021), cfg.train_days)
             + _pick_dates(r_dates, (2022,), cfg.val_days) + _pick_dates(r_dates, (2023,), cfg.test_days))
    weather = {d: _weather(r_weather, d) for d in dates}
    wdf = pd.DataFrame([[d.isoformat(), *weather[d]] for d in dates], columns=["date", *DEFAULT_WEATHER_NAMES])
    wdf.to_csv(out / "weather.csv", index=False, lineterminator="\n", float_format="%.4f")

    # satellite bands on a coarse grid, with clouds
    band_grid = make_grid(bbox, cfg.band_resolution)
    urban_band = _urban_share(class_fractions(ClassRaster(lc_grid, classes), band_grid))
    dem_band = gaussian_filter(dem, 2)[::max(1, round(cfg.band_resolution / cfg.dem_resolution))]
    dem_band = dem_band[:, ::max(1, round(cfg.band_resolution / cfg.dem_resolution))]
    dem_pad = np.full(band_grid.shape, float(dem.mean()))
    h, w = min(dem_band.shape[0], band_grid.rows), min(dem_band.shape[1], band_grid.cols)
    dem_pad[:h, :w] = dem_band[:h, :w]
    rejected = []
    offsets = (1.0, 0.5, 2.0, -1.0, -1.5)
    for d in dates:
        wv = dict(zip(DEFAULT_WEATHER_NAMES, weather[d]))
        lst = (0.9 * wv["tempmax"] + 2 + 3 * urban_band * wv["solarradiation"] / 300
               - 0.004 * (dem_pad - 250) + 1.5 * _field(r_bands, band_grid.shape, 2.0))
        data = np.stack([lst + o + r_bands.normal(0, 0.3, band_grid.shape) for o in offsets])
        u = r_bands.random()
        if u < cfg.rejected_fraction:
            frac = r_bands.uniform(0.28, 0.36)
            rejected.append(d)
        elif u < cfg.rejected_fraction + cfg.cloudy_fraction:
            frac = r_bands.uniform(0.04, 0.2)
        else:
            frac = 0.0
        valid = _cloud_mask(r_bands, band_grid.shape, frac)
        passage = float(int(np.clip(r_bands.normal(10 * 3600, 900), 9 * 3600, 11 * 3600)))
        write_bundle(out / "bands" / d.isoformat(), band_grid, np.round(data, 4), BAND_NAMES,
                     valid=np.broadcast_to(valid, data.shape),
                     attrs={"date": d.isoformat(), "passage_time": passage})

    # truth maps, computed from the same stacks the pipeline will build
    static = pipeline.static_layers(out, grid)
    wvecs = pipeline.read_weather_csv(out / "weather.csv")
    weights = bias = None
    if cfg.kind == "planted-linear":
        probe = [pipeline.assemble_day(out, d, static, wvecs[d], threshold=0.0).channels
                 for d in dates[:: max(1, len(dates) // 24)]]
        arr = np.stack(probe).astype(np.float64)
        mean = arr.mean(axis=(0, 2, 3))
        std = arr.std(axis=(0, 2, 3))
        coef = r_truth.normal(0, 0.5, size=mean.size)
        coef[len(BAND_NAMES) + 1 + len(GROUP_NAMES) + DEFAULT_WEATHER_NAMES.index("tempmax")] = 4.0
        weights = np.where(std > 1e-6, coef / np.maximum(std, 1e-6), 0.0)
        bias = float(25.0 - weights @ mean)
    else:
        field = _field(r_truth, grid.shape, grid.rows / 8)
        urban = gaussian_filter(_urban_share(static.fractions), 3.0, mode="nearest")
        dem_t = static.dem.values.astype(np.float64)
        lapse = 0.0065 * (dem_t - dem_t.mean())

    truth = {}
    for d in dates:
        if cfg.kind == "planted-linear":
            stack = pipeline.assemble_day(out, d, static, wvecs[d], threshold=0.0).channels
            t = np.tensordot(weights, stack.astype(np.float64), axes=1) + bias
        else:
            wv = dict(zip(DEFAULT_WEATHER_NAMES, wvecs[d].values))
            t = wv["tempmax"] + 3.0 * field + (2.0 + 3.0 * wv["solarradiation"] / 300) * urban - lapse
        truth[d] = t.astype(np.float32)
        write_bundle(out / "truth" / d.isoformat(), grid, truth[d], ["tmax"], attrs={"date": d.isoformat()})

    # stations
    sx = np.round(r_stations.uniform(bbox.min_x, bbox.max_x, cfg.n_stations), 1)
    sy = np.round(r_stations.uniform(bbox.min_y, bbox.max_y, cfg.n_stations), 1)
    rows, cols, _ = pixel_of(sx, sy, grid)
    step = 86400 // cfg.readings_per_day
    secs = np.arange(cfg.readings_per_day) * step
    shape = 0.5 * (1 + np.cos(2 * np.pi * (secs - PEAK_SECONDS) / 86400))
    peak = int(np.argmax(shape))
    shape[peak] = 1.0
    frames = []
    for d in dates:
        tmin = float(wvecs[d].values[DEFAULT_WEATHER_NAMES.index("tempmin")])
        noise = np.clip(r_noise.normal(0, 1, cfg.n_stations), -NOISE_CLIP, NOISE_CLIP) * cfg.noise_std
        tmax_obs = truth[d][rows, cols].astype(np.float64) + noise
        drop = r_noise.random(cfg.n_stations) < cfg.dropout_prob
        amp = np.maximum(tmax_obs - tmin, 2.0)
        temps = tmax_obs[:, None] - amp[:, None] * (1 - shape[None, :])
        keep = np.ones_like(temps, dtype=bool)
        keep[drop, 60:] = False  # too few readings on those station-days
        base = dt.datetime.combine(d, dt.time())
        stamps = np.array([(base + dt.timedelta(seconds=int(s))).isoformat() for s in secs])
        sid = np.repeat(np.arange(cfg.n_stations), cfg.readings_per_day).reshape(temps.shape)
        frames.append(pd.DataFrame({
            "station_id": np.char.add("S", np.char.zfill(sid[keep].astype(str), 3)),
            "x": np.repeat(sx, cfg.readings_per_day).reshape(temps.shape)[keep],
            "y": np.repeat(sy, cfg.readings_per_day).reshape(temps.shape)[keep],
            "timestamp": np.broadcast_to(stamps, temps.shape)[keep],
            "temperature_c": temps[keep],
        }))
    pd.concat(frames, ignore_index=True).to_csv(out / "stations.csv", index=False, lineterminator="\n",
                                                float_format="%.4f")

    meta = {
        "config": dataclasses.asdict(cfg),
        "dates": [d.isoformat() for d in dates],
        "rejected": [d.isoformat() for d in rejected],
        "weights": None if weights is None else [float(v) for v in weights],
        "bias": bias,
        "stations": {"x": sx.tolist(), "y": sy.tolist()},
    }
    (out / "synth.json").write_text(json.dumps(meta, indent=2) + "\n")
    return SynthResult(out, dates, rejected, weights, bias, sx, sy)


def truth_grid(cfg: SynthConfig) -> Grid:
    return make_grid(cfg.bbox(), cfg.resolution)

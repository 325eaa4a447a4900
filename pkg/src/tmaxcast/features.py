"""Per-day input stack: band, terrain, land-cover, weather, position and time channels."""
from __future__ import annotations

import calendar
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .grid import Grid, RasterLayer
from .landcover import GROUP_NAMES

log = logging.getLogger(__name__)

BAND_NAMES = ("F1", "F2", "S7", "S8", "S9")
# daily indicators as delivered by the weather provider (one value per day)
DEFAULT_WEATHER_NAMES = (
    "tempmax", "tempmin", "temp", "feelslikemax", "feelslikemin", "feelslike",
    "dew", "humidity", "precip", "windspeed", "winddir", "sealevelpressure",
    "cloudcover", "visibility", "solarradiation",
)
COORD_NAMES = ("coord_x", "coord_y")
TEMPORAL_NAMES = ("sin_doy", "cos_doy", "sin_dow", "cos_dow", "sin_tod", "cos_tod")

N_WEATHER = 15
MORNING_WINDOW = (9 * 3600, 11 * 3600)
SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class ChannelLayout:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("channel names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @classmethod
    def default(cls, weather_names: Sequence[str] = DEFAULT_WEATHER_NAMES) -> "ChannelLayout":
        if len(weather_names) != N_WEATHER:
            raise ValueError(f"expected {N_WEATHER} weather names, got {len(weather_names)}")
        return cls(BAND_NAMES + ("DEM",) + GROUP_NAMES + tuple(weather_names) + COORD_NAMES + TEMPORAL_NAMES)


@dataclass
class FeatureStack:
    grid: Grid
    date: dt.date
    channels: np.ndarray  # (c, n, m) float32
    layout: ChannelLayout

    def __post_init__(self):
        if self.channels.shape != (len(self.layout), *self.grid.shape):
            raise ValueError(f"channels {self.channels.shape} inconsistent with layout/grid")

    def channel(self, name: str) -> np.ndarray:
        return self.channels[self.layout.index(name)]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-6

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), self.eps)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "eps": self.eps}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormStats":
        return cls(np.array(d["mean"]), np.array(d["std"]), float(d.get("eps", 1e-6)))


@dataclass
class WeatherVector:
    values: np.ndarray
    names: tuple[str, ...] = DEFAULT_WEATHER_NAMES

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size != N_WEATHER or len(self.names) != N_WEATHER:
            raise ValueError(f"weather vector needs exactly {N_WEATHER} entries, got {self.values.size}")
        if not np.isfinite(self.values).all():
            raise ValueError("weather vector has missing values")


def circular_encode(value: float, period: float) -> tuple[float, float]:
    if not period > 0:
        raise ValueError(f"period must be positive, got {period}")
    angle = 2.0 * math.pi * value / period
    return math.sin(angle), math.cos(angle)


def temporal_channels(date: dt.date, passage_time_seconds: float) -> tuple[float, ...]:
    """sin/cos of day-of-year, weekday and time-of-day of the satellite pass."""
    if not 0 <= passage_time_seconds < SECONDS_PER_DAY:
        raise ValueError(f"passage time {passage_time_seconds}s outside one day")
    lo, hi = MORNING_WINDOW
    if not lo <= passage_time_seconds <= hi:
        log.warning("passage at %ss on %s is outside the 09:00-11:00 window", passage_time_seconds, date)
    days_in_year = 366 if calendar.isleap(date.year) else 365
    doy = date.timetuple().tm_yday - 1
    return (*circular_encode(doy, days_in_year),
            *circular_encode(date.weekday(), 7),
            *circular_encode(passage_time_seconds, SECONDS_PER_DAY))


def coordinate_channels(grid: Grid) -> tuple[RasterLayer, RasterLayer]:
    """Linear ramps in [-1, 1]: x west to east, y north to south."""
    n, m = grid.shape
    xs = np.linspace(-1.0, 1.0, m) if m > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1)
    cx = np.broadcast_to(xs[None, :], (n, m))
    cy = np.broadcast_to(ys[:, None], (n, m))
    return RasterLayer(grid, cx), RasterLayer(grid, cy)


def broadcast_scalar(value: float, grid: Grid) -> RasterLayer:
    return RasterLayer(grid, np.full(grid.shape, value, dtype=np.float32))


def assemble_stack(bands: Sequence[RasterLayer], dem: RasterLayer, fractions: Sequence[RasterLayer],
                   weather: WeatherVector, date: dt.date, passage_time: float, grid: Grid) -> FeatureStack:
    if len(bands) != len(BAND_NAMES):
        raise ValueError(f"expected {len(BAND_NAMES)} band layers, got {len(bands)}")
    if len(fractions) != len(GROUP_NAMES):
        raise ValueError(f"expected {len(GROUP_NAMES)} land-cover fractions, got {len(fractions)}")
    if not isinstance(weather, WeatherVector):
        weather = WeatherVector(weather)
    spatial = [*bands, dem, *fractions]
    for layer in spatial:
        if not layer.grid.same_as(grid):
            raise ValueError("all layers must lie on the stack grid")
        if not layer.fully_valid:
            raise ValueError("layers must be fully valid (impute first)")

    layout = ChannelLayout.default(weather.names)
    n, m = grid.shape
    out = np.empty((len(layout), n, m), dtype=np.float32)
    k = 0
    for layer in spatial:
        out[k] = layer.values
        k += 1
    out[k:k + N_WEATHER] = weather.values[:, None, None]
    k += N_WEATHER
    cx, cy = coordinate_channels(grid)
    out[k], out[k + 1] = cx.values, cy.values
    k += 2
    out[k:] = np.asarray(temporal_channels(date, passage_time))[:, None, None]
    return FeatureStack(grid, date, out, layout)


def compute_norm_stats(stacks: Sequence[np.ndarray | FeatureStack], eps: float = 1e-6) -> NormStats:
    """Per-channel mean/std over every pixel of every training stack."""
    arrays = [s.channels if isinstance(s, FeatureStack) else np.asarray(s) for s in stacks]
    if not arrays:
        raise ValueError("need at least one training stack")
    c = arrays[0].shape[0]
    total = np.zeros(c)
    count = 0
    for a in arrays:
        total += a.reshape(c, -1).sum(axis=1, dtype=np.float64)
        count += a[0].size
    mean = total / count
    sq = np.zeros(c)
    for a in arrays:
        d = a.reshape(c, -1).astype(np.float64) - mean[:, None]
        sq += np.einsum("ij,ij->i", d, d)
    return NormStats(mean, np.sqrt(sq / count), eps)


def apply_norm(channels: np.ndarray, stats: NormStats) -> np.ndarray:
    x = (channels - stats.mean[:, None, None]) / stats.std[:, None, None]
    return x.astype(np.float32)


def invert_norm(channels: np.ndarray, stats: NormStats) -> np.ndarray:
    return (channels * stats.std[:, None, None] + stats.mean[:, None, None]).astype(np.float32)


# --------------------------------------------------------------------------
# geometric augmentation
# --------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_rot: float = 0.25  # each of 90, 180, 270 degrees
    p_shift: float = 0.5
    max_shift: float = 0.05  # fraction of the side
    p_crop: float = 0.0
    crop_size: tuple[int, int] | None = None

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, None)


@dataclass
class Augmented:
    channels: np.ndarray
    target: np.ndarray
    valid: np.ndarray
    ops: list = field(default_factory=list)


def _shift(a: np.ndarray, dy: int, dx: int, fill) -> np.ndarray:
    out = np.full_like(a, fill)
    n, m = a.shape[-2:]
    src_r = slice(max(0, -dy), min(n, n - dy))
    dst_r = slice(max(0, dy), min(n, n + dy))
    src_c = slice(max(0, -dx), min(m, m - dx))
    dst_c = slice(max(0, dx), min(m, m + dx))
    out[..., dst_r, dst_c] = a[..., src_r, src_c]
    return out


def augment(channels: np.ndarray, target: np.ndarray, valid: np.ndarray,
            rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> Augmented:
    """Apply one random flip/rotate/shift/crop combination to inputs and target alike.

    Only index permutations, integer shifts and crops are used, so sparse
    target pixels are moved, never interpolated. Shifted-in input pixels are
    zero and shifted-in target pixels are invalid.
    """
    x, t, v = channels, target, valid
    if x.shape[-2:] != t.shape or t.shape != v.shape:
        raise ValueError("stack and target must share a grid")
    ops = []
    if cfg.crop_size is not None:
        ch, cw = cfg.crop_size
        if ch > t.shape[0] or cw > t.shape[1]:
            raise ValueError(f"crop {cfg.crop_size} larger than image {t.shape}")
    # draw every decision up front so the stream is consumed identically for any config
    u = rng.random(5)
    rot_draw = rng.random()
    shift_draw = rng.uniform(-1.0, 1.0, size=2)
    crop_draw = rng.random(2)

    if u[0] < cfg.p_hflip:
        x, t, v = x[..., ::-1], t[:, ::-1], v[:, ::-1]
        ops.append("hflip")
    if u[1] < cfg.p_vflip:
        x, t, v = x[..., ::-1, :], t[::-1], v[::-1]
        ops.append("vflip")
    k = int(rot_draw // cfg.p_rot) + 1 if cfg.p_rot > 0 else 4
    if k <= 3:
        x, t, v = np.rot90(x, k, axes=(-2, -1)), np.rot90(t, k), np.rot90(v, k)
        ops.append(f"rot{90 * k}")
    if u[2] < cfg.p_shift and cfg.max_shift > 0:
        n, m = t.shape
        dy = int(round(shift_draw[0] * cfg.max_shift * n))
        dx = int(round(shift_draw[1] * cfg.max_shift * m))
        if dy or dx:
            x = _shift(x, dy, dx, 0)
            t = _shift(t, dy, dx, 0)
            v = _shift(v, dy, dx, False)
            ops.append(f"shift{dy},{dx}")
    if cfg.crop_size is not None and u[3] < cfg.p_crop:
        ch, cw = cfg.crop_size
        n, m = t.shape
        ch, cw = min(ch, n), min(cw, m)  # rotation may have swapped the sides
        r0 = int(crop_draw[0] * (n - ch + 1))
        c0 = int(crop_draw[1] * (m - cw + 1))
        x, t, v = x[..., r0:r0 + ch, c0:c0 + cw], t[r0:r0 + ch, c0:c0 + cw], v[r0:r0 + ch, c0:c0 + cw]
        ops.append(f"crop{r0},{c0}")
    return Augmented(np.ascontiguousarray(x), np.ascontiguousarray(t), np.ascontiguousarray(v), ops)


def sample_rng(seed: int, date: dt.date, epoch: int = 0) -> np.random.Generator:
    """Independent stream per (seed, day, epoch), so worker scheduling cannot change results."""
    return np.random.default_rng([seed, date.toordinal(), epoch])

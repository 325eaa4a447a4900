"""Georeferenced grids, raster layers, resampling and hole filling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

VALID_FRACTION_THRESHOLD = 0.75


class SceneRejected(Exception):
    """Raised by :func:`impute` when too few pixels are valid to use the scene."""

    def __init__(self, fraction: float, threshold: float = VALID_FRACTION_THRESHOLD):
        super().__init__(f"valid fraction {fraction:.4f} does not exceed {threshold:.2f}")
        self.fraction = fraction
        self.threshold = threshold


@dataclass(frozen=True)
class BoundingBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float
    crs_id: str = "EPSG:32632"

    def __post_init__(self):
        if not (self.max_x > self.min_x and self.max_y > self.min_y):
            raise ValueError(f"degenerate bounding box {self}")

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y


@dataclass(frozen=True)
class Grid:
    """Pixel lattice anchored at the north-west corner of ``bbox``.

    Row 0 is the northern edge, column 0 the western edge. When the bbox is
    not a whole number of pixels the lattice overhangs it to the east/south.
    """

    bbox: BoundingBox
    resolution: float
    rows: int
    cols: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def origin(self) -> tuple[float, float]:
        return self.bbox.min_x, self.bbox.max_y

    def x_centers(self) -> np.ndarray:
        return self.bbox.min_x + (np.arange(self.cols) + 0.5) * self.resolution

    def y_centers(self) -> np.ndarray:
        return self.bbox.max_y - (np.arange(self.rows) + 0.5) * self.resolution

    def extent(self) -> tuple[float, float, float, float]:
        """(min_x, min_y, max_x, max_y) actually covered by the pixels."""
        x0, y1 = self.origin
        return x0, y1 - self.rows * self.resolution, x0 + self.cols * self.resolution, y1

    def same_as(self, other: "Grid") -> bool:
        return (self.rows, self.cols) == (other.rows, other.cols) and math.isclose(
            self.resolution, other.resolution) and np.allclose(self.origin, other.origin)


def make_grid(bbox: BoundingBox, resolution: float) -> Grid:
    if not resolution > 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    # tolerate float noise so that 1000/100 stays 10, not 11
    rows = max(1, math.ceil(bbox.height / resolution - 1e-9))
    cols = max(1, math.ceil(bbox.width / resolution - 1e-9))
    return Grid(bbox, float(resolution), rows, cols)


@dataclass
class RasterLayer:
    grid: Grid
    values: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.grid.shape or self.valid.shape != self.grid.shape:
            raise ValueError(f"array shape {self.values.shape} does not match grid {self.grid.shape}")

    @property
    def fully_valid(self) -> bool:
        return bool(self.valid.all())


@dataclass
class ClassRaster:
    """Integer class codes (0..26) on a fine grid; negative codes mean nodata."""

    grid: Grid
    classes: np.ndarray

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int16)
        if self.classes.shape != self.grid.shape:
            raise ValueError(f"array shape {self.classes.shape} does not match grid {self.grid.shape}")


def valid_fraction(layer: RasterLayer) -> float:
    return float(np.count_nonzero(layer.valid)) / layer.valid.size


def impute(layer: RasterLayer, threshold: float = VALID_FRACTION_THRESHOLD) -> RasterLayer:
    """Fill invalid pixels, or raise :class:`SceneRejected`.

    A scene is used only when strictly more than ``threshold`` of its pixels
    are valid. Each hole gets a linear interpolation between the nearest
    valid pixels along its row and along its column (the single nearest one
    if only one side exists); the two estimates are averaged. Holes with no
    valid pixel on either axis take the mean of all valid pixels. Valid
    pixels are never modified.
    """
    frac = valid_fraction(layer)
    if not frac > threshold:
        raise SceneRejected(frac, threshold)
    if layer.fully_valid:
        return layer

    values = layer.values.astype(np.float64)
    valid = layer.valid
    h_est, h_ok = kernels.row_fill(values, valid)
    v_est, v_ok = kernels.row_fill(values.T, valid.T)
    v_est, v_ok = v_est.T, v_ok.T

    n_est = h_ok.astype(np.int8) + v_ok.astype(np.int8)
    total = np.where(h_ok, h_est, 0.0) + np.where(v_ok, v_est, 0.0)
    filled = np.where(n_est > 0, total / np.maximum(n_est, 1), values[valid].mean())
    out = np.where(valid, values, filled)
    return RasterLayer(layer.grid, out.astype(np.float32), np.ones_like(valid))


def _check_overlap(src: Grid, dst: Grid) -> None:
    sx0, sy0, sx1, sy1 = src.extent()
    dx0, dy0, dx1, dy1 = dst.extent()
    if dx0 >= sx1 or sx0 >= dx1 or dy0 >= sy1 or sy0 >= dy1:
        raise ValueError("source and target grids do not overlap")


def resample_bilinear(layer: RasterLayer, target: Grid) -> RasterLayer:
    """Bilinear resampling between pixel centres.

    Target centres falling outside the span of source centres are clamped
    to the edge, so the output never leaves the source value range.
    """
    src = layer.grid
    _check_overlap(src, target)
    if not layer.fully_valid:
        raise ValueError("resample_bilinear needs a fully valid layer; impute it first")
    if src.same_as(target):
        return RasterLayer(target, layer.values.copy())

    fx = (target.x_centers() - src.bbox.min_x) / src.resolution - 0.5
    fy = (src.bbox.max_y - target.y_centers()) / src.resolution - 0.5
    fx = np.clip(fx, 0.0, src.cols - 1)
    fy = np.clip(fy, 0.0, src.rows - 1)
    x0 = np.minimum(np.floor(fx).astype(np.int64), max(src.cols - 2, 0))
    y0 = np.minimum(np.floor(fy).astype(np.int64), max(src.rows - 2, 0))
    x1 = np.minimum(x0 + 1, src.cols - 1)
    y1 = np.minimum(y0 + 1, src.rows - 1)
    tx = (fx - x0)[None, :]
    ty = (fy - y0)[:, None]

    v = layer.values.astype(np.float64)
    top = v[y0][:, x0] * (1 - tx) + v[y0][:, x1] * tx
    bottom = v[y1][:, x0] * (1 - tx) + v[y1][:, x1] * tx
    out = top * (1 - ty) + bottom * ty
    return RasterLayer(target, out.astype(np.float32))


def resample_masked(layer: RasterLayer, target: Grid) -> RasterLayer:
    """Bilinear resampling that ignores invalid source pixels.

    Each target pixel is the weight-normalised mean of its valid bilinear
    neighbours; it is invalid when all of them are invalid.
    """
    valid = layer.valid.astype(np.float32)
    num = resample_bilinear(RasterLayer(layer.grid, np.where(layer.valid, layer.values, 0)), target).values
    den = resample_bilinear(RasterLayer(layer.grid, valid), target).values.astype(np.float64)
    ok = den > 1e-9
    out = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
    return RasterLayer(target, out.astype(np.float32), ok)


def crop_to_grid(layer: RasterLayer, target: Grid) -> RasterLayer:
    """Sub-window of ``layer`` on an aligned grid with the same resolution."""
    src = layer.grid
    if not math.isclose(src.resolution, target.resolution):
        raise ValueError("crop_to_grid needs equal resolutions")
    c0 = round((target.bbox.min_x - src.bbox.min_x) / src.resolution)
    r0 = round((src.bbox.max_y - target.bbox.max_y) / src.resolution)
    if r0 < 0 or c0 < 0 or r0 + target.rows > src.rows or c0 + target.cols > src.cols:
        raise ValueError("target grid is not inside the source grid")
    sl = (slice(r0, r0 + target.rows), slice(c0, c0 + target.cols))
    return RasterLayer(target, layer.values[sl], layer.valid[sl])

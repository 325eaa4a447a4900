"""Grid bundles: the on-disk raster interchange format.

A bundle is a directory holding

* ``header.json`` with ``crs_id``, ``bbox`` ``[min_x, min_y, max_x, max_y]``,
  ``resolution``, ``rows``, ``cols``, ``channels`` (band names), ``nodata``
  and an optional free-form ``attrs`` mapping;
* ``data.bin``: little-endian float32, band-sequential, row-major
  (``channels x rows x cols``). Invalid pixels hold the ``nodata`` value.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import BoundingBox, Grid, RasterLayer

DEFAULT_NODATA = -9999.0
_DTYPE = np.dtype("<f4")


@dataclass
class Bundle:
    grid: Grid
    data: np.ndarray  # (C, rows, cols) float32
    channels: list[str]
    nodata: float = DEFAULT_NODATA
    attrs: dict = field(default_factory=dict)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.data) & (self.data != np.float32(self.nodata))

    def band(self, name: str) -> np.ndarray:
        return self.data[self.channels.index(name)]

    def layer(self, name: str) -> RasterLayer:
        i = self.channels.index(name)
        return RasterLayer(self.grid, self.data[i], self.valid[i])

    def layers(self) -> list[RasterLayer]:
        valid = self.valid
        return [RasterLayer(self.grid, self.data[i], valid[i]) for i in range(len(self.channels))]


def grid_header(grid: Grid) -> dict:
    b = grid.bbox
    return {
        "crs_id": b.crs_id,
        "bbox": [b.min_x, b.min_y, b.max_x, b.max_y],
        "resolution": grid.resolution,
        "rows": grid.rows,
        "cols": grid.cols,
    }


def grid_from_header(header: dict) -> Grid:
    bbox = BoundingBox(*map(float, header["bbox"]), crs_id=header.get("crs_id", ""))
    return Grid(bbox, float(header["resolution"]), int(header["rows"]), int(header["cols"]))


def write_bundle(path: str | Path, grid: Grid, data: np.ndarray, channels: Sequence[str],
                 valid: np.ndarray | None = None, nodata: float = DEFAULT_NODATA,
                 attrs: dict | None = None) -> Path:
    """Write ``data`` (C, rows, cols) or a single (rows, cols) band."""
    path = Path(path)
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data[None]
    channels = list(channels)
    if data.shape != (len(channels), grid.rows, grid.cols):
        raise ValueError(f"data shape {data.shape} does not match {len(channels)} channels on {grid.shape}")
    if len(set(channels)) != len(channels):
        raise ValueError("channel names must be unique")
    if valid is not None:
        valid = np.broadcast_to(np.asarray(valid, dtype=bool), data.shape)
        data = np.where(valid, data, np.float32(nodata))
    path.mkdir(parents=True, exist_ok=True)
    header = grid_header(grid) | {"channels": channels, "nodata": float(nodata)}
    if attrs:
        header["attrs"] = attrs
    (path / "header.json").write_text(json.dumps(header, indent=2) + "\n")
    (path / "data.bin").write_bytes(data.astype(_DTYPE, copy=False).tobytes(order="C"))
    return path


def read_bundle(path: str | Path) -> Bundle:
    path = Path(path)
    try:
        header = json.loads((path / "header.json").read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"{path} is not a grid bundle (no header.json)") from None
    grid = grid_from_header(header)
    channels = list(header["channels"])
    raw = np.fromfile(path / "data.bin", dtype=_DTYPE)
    expected = len(channels) * grid.rows * grid.cols
    if raw.size != expected:
        raise ValueError(f"{path}/data.bin holds {raw.size} values, header implies {expected}")
    data = raw.reshape(len(channels), grid.rows, grid.cols).astype(np.float32)
    return Bundle(grid, data, channels, float(header.get("nodata", DEFAULT_NODATA)),
                  dict(header.get("attrs", {})))


def write_layers(path: str | Path, layers: Sequence[RasterLayer], channels: Sequence[str],
                 nodata: float = DEFAULT_NODATA, attrs: dict | None = None) -> Path:
    grid = layers[0].grid
    data = np.stack([l.values for l in layers])
    valid = np.stack([l.valid for l in layers])
    return write_bundle(path, grid, data, channels, valid=valid, nodata=nodata, attrs=attrs)

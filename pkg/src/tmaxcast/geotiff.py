"""GeoTIFF import/export for the cases this pipeline needs.

Supported: single- or multi-band images, uncompressed or deflate, striped
or tiled, float32 values or uint8 class codes, with a north-up geotransform
given by ModelPixelScale + ModelTiepoint (or an axis-aligned
ModelTransformation). Anything else raises :class:`UnsupportedGeoTIFF`.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import tifffile

from .bundle import DEFAULT_NODATA
from .grid import BoundingBox, Grid

_SUPPORTED_COMPRESSION = {1: "none", 8: "deflate", 32946: "deflate"}
_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.uint8))
_CONVERT_HINT = ("convert it offline first, e.g. `gdal_translate -ot Float32 -co COMPRESS=DEFLATE "
                 "in.tif out.tif` (or `gdalwarp` for reprojection)")

_PIXEL_SCALE, _TIEPOINT, _TRANSFORM, _GEOKEYS, _NODATA = 33550, 33922, 34264, 34735, 42113


class UnsupportedGeoTIFF(ValueError):
    pass


def _crs_from_geokeys(keys) -> str:
    if not keys:
        return ""
    keys = list(keys)
    n = keys[3]
    found = {}
    for k in range(n):
        key_id, location, _count, value = keys[4 + 4 * k: 8 + 4 * k]
        if location == 0:
            found[key_id] = value
    for key_id in (3072, 2048):  # ProjectedCSType, GeographicType
        if key_id in found and found[key_id] not in (0, 32767):
            return f"EPSG:{found[key_id]}"
    return ""


def _geotransform(page, rows: int, cols: int) -> tuple[float, float, float]:
    tags = page.tags
    if _TRANSFORM in tags:
        t = tags[_TRANSFORM].value
        sx, rx, x0 = t[0], t[1], t[3]
        ry, sy, y0 = t[4], t[5], t[7]
        if rx != 0 or ry != 0:
            raise UnsupportedGeoTIFF(f"rotated geotransform is not supported; {_CONVERT_HINT}")
        res_x, res_y = sx, -sy
    elif _PIXEL_SCALE in tags and _TIEPOINT in tags:
        res_x, res_y = tags[_PIXEL_SCALE].value[:2]
        i, j, _, x, y, _ = tags[_TIEPOINT].value[:6]
        x0, y0 = x - i * res_x, y + j * res_y
    else:
        raise UnsupportedGeoTIFF("no geotransform (ModelPixelScale/ModelTiepoint) in file")
    if res_x <= 0 or res_y <= 0 or not np.isclose(res_x, res_y, rtol=1e-9):
        raise UnsupportedGeoTIFF(f"pixels must be square and north-up (got {res_x} x {res_y}); {_CONVERT_HINT}")
    geokeys = tags[_GEOKEYS].value if _GEOKEYS in tags else ()
    keys = list(geokeys)
    # GTRasterTypeGeoKey == 2 (PixelIsPoint): tiepoint refers to the pixel centre
    for k in range(keys[3] if keys else 0):
        if keys[4 + 4 * k] == 1025 and keys[7 + 4 * k] == 2:
            x0, y0 = x0 - res_x / 2, y0 + res_y / 2
    return float(x0), float(y0), float(res_x)


def read_geotiff(path: str | Path) -> tuple[Grid, np.ndarray, float | None]:
    """Return ``(grid, data, nodata)`` with data shaped (bands, rows, cols)."""
    path = Path(path)
    try:
        tif = tifffile.TiffFile(path)
    except (tifffile.TiffFileError, OSError) as exc:
        raise UnsupportedGeoTIFF(f"{path}: not a readable TIFF ({exc})") from exc
    with tif:
        page = tif.pages[0]
        comp = int(page.compression)
        if comp not in _SUPPORTED_COMPRESSION:
            raise UnsupportedGeoTIFF(
                f"{path}: compression {page.compression.name} is not supported "
                f"(only none/deflate); {_CONVERT_HINT}")
        if page.dtype not in _SUPPORTED_DTYPES:
            raise UnsupportedGeoTIFF(
                f"{path}: sample type {page.dtype} is not supported (float32 or uint8 only); {_CONVERT_HINT}")
        series = tif.series[0]
        data = series.asarray()
        axes = series.axes
        if axes == "YX":
            data = data[None]
        elif axes in ("SYX", "QYX", "IYX"):
            pass
        elif axes == "YXS":
            data = np.moveaxis(data, -1, 0)
        else:
            raise UnsupportedGeoTIFF(f"{path}: unsupported band layout {axes!r}; {_CONVERT_HINT}")
        rows, cols = data.shape[1:]
        x0, y0, res = _geotransform(page, rows, cols)
        crs = _crs_from_geokeys(page.tags[_GEOKEYS].value if _GEOKEYS in page.tags else ())
        nodata = None
        if _NODATA in page.tags:
            try:
                nodata = float(str(page.tags[_NODATA].value).strip("\x00 "))
            except ValueError:
                nodata = None
    bbox = BoundingBox(x0, y0 - rows * res, x0 + cols * res, y0, crs_id=crs)
    return Grid(bbox, res, rows, cols), np.ascontiguousarray(data), nodata


def write_geotiff(path: str | Path, grid: Grid, data: np.ndarray, nodata: float | None = DEFAULT_NODATA,
                  compress: bool = True, tile: tuple[int, int] | None = None) -> Path:
    """Write a north-up GeoTIFF (used by tests and by the synthetic generator)."""
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[None]
    x0, y0 = grid.origin
    epsg = 0
    if grid.bbox.crs_id.upper().startswith("EPSG:"):
        epsg = int(grid.bbox.crs_id.split(":")[1])
    geokeys = (1, 1, 0, 2, 1024, 0, 1, 1, 3072, 0, 1, epsg)
    extratags = [
        (_PIXEL_SCALE, "d", 3, (grid.resolution, grid.resolution, 0.0), True),
        (_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, x0, y0, 0.0), True),
        (_GEOKEYS, "H", len(geokeys), geokeys, True),
    ]
    if nodata is not None:
        extratags.append((_NODATA, "s", 0, repr(float(nodata)), True))
    payload = data[0] if data.shape[0] == 1 else data
    tifffile.imwrite(path, payload, compression="zlib" if compress else None, tile=tile,
                     planarconfig="separate" if data.shape[0] > 1 else None,
                     photometric="minisblack", extratags=extratags)
    return Path(path)

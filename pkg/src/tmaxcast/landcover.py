"""Urban Atlas class grouping and per-pixel class fractions."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import kernels
from .grid import ClassRaster, Grid, RasterLayer

# Urban Atlas 2018 nomenclature; a class raster stores the index into this list.
URBAN_ATLAS_CODES = (
    11100, 11210, 11220, 11230, 11240, 11300,
    12100, 12210, 12220, 12230, 12300, 12400,
    13100, 13300, 13400, 14100, 14200,
    21000, 22000, 23000, 24000, 25000,
    31000, 32000, 33000, 40000, 50000,
)

GROUP_NAMES = (
    "lc_dense_urban",
    "lc_low_density_urban",
    "lc_industrial_commercial",
    "lc_roads_rail",
    "lc_port_airport",
    "lc_extraction_construction",
    "lc_urban_green",
    "lc_agricultural",
    "lc_forest_natural",
    "lc_water",
)

_DEFAULT_BY_CODE = {
    11100: 0, 11210: 0,
    11220: 1, 11230: 1, 11240: 1, 11300: 1,
    12100: 2,
    12210: 3, 12220: 3, 12230: 3,
    12300: 4, 12400: 4,
    13100: 5, 13300: 5, 13400: 5,
    14100: 6, 14200: 6,
    21000: 7, 22000: 7, 23000: 7, 24000: 7, 25000: 7,
    31000: 8, 32000: 8, 33000: 8, 40000: 8,
    50000: 9,
}

DEFAULT_MAPPING = np.array([_DEFAULT_BY_CODE[c] for c in URBAN_ATLAS_CODES], dtype=np.int64)


def load_mapping(path: str | Path) -> np.ndarray:
    """Read a ``<urban atlas code or index> = <group>`` file into a 27-entry table.

    Lines starting with ``#`` are comments. Entries not listed keep their
    default group.
    """
    table = DEFAULT_MAPPING.copy()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            key, value = (int(part) for part in line.split("="))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: expected '<code> = <group>', got {raw!r}") from None
        idx = URBAN_ATLAS_CODES.index(key) if key in URBAN_ATLAS_CODES else key
        if not 0 <= idx < len(URBAN_ATLAS_CODES):
            raise ValueError(f"{path}:{lineno}: unknown class {key}")
        if not 0 <= value < len(GROUP_NAMES):
            raise ValueError(f"{path}:{lineno}: group {value} outside 0..{len(GROUP_NAMES) - 1}")
        table[idx] = value
    return table


def class_fractions(classes: ClassRaster, target: Grid,
                    mapping: np.ndarray = DEFAULT_MAPPING) -> list[RasterLayer]:
    """Share of each land-cover group inside every target pixel.

    Fine pixels are assigned to the target pixel containing their centre.
    Target pixels with no covered fine pixel are all-zero and invalid.
    """
    mapping = np.asarray(mapping, dtype=np.int64)
    n_groups = len(GROUP_NAMES)
    ratio = target.resolution / classes.grid.resolution
    if ratio < 1 - 1e-9 or not math.isclose(ratio, round(ratio), rel_tol=1e-9):
        raise ValueError(f"class raster resolution {classes.grid.resolution} does not divide "
                         f"target resolution {target.resolution}")

    codes = classes.classes.astype(np.int64)
    nodata = codes < 0
    if (codes[~nodata] >= len(mapping)).any():
        bad = np.unique(codes[~nodata][codes[~nodata] >= len(mapping)])
        raise ValueError(f"unmapped class codes {bad.tolist()}")
    groups = np.where(nodata, -1, mapping[np.clip(codes, 0, len(mapping) - 1)])

    fine = classes.grid
    row_idx = np.floor((target.bbox.max_y - fine.y_centers()) / target.resolution).astype(np.int64)
    col_idx = np.floor((fine.x_centers() - target.bbox.min_x) / target.resolution).astype(np.int64)
    counts = kernels.class_counts(groups, row_idx, col_idx, target.rows, target.cols, n_groups)

    total = counts.sum(axis=0)
    covered = total > 0
    frac = counts / np.maximum(total, 1)
    return [RasterLayer(target, frac[g].astype(np.float32), covered) for g in range(n_groups)]

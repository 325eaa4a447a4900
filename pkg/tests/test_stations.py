from __future__ import annotations

import datetime as dt

import numpy as np
import pandas as pd
import pytest

from tmaxcast.grid import BoundingBox, make_grid
from tmaxcast.stations import (daily_max, daily_maxima_table, pixel_of, rasterize_stations, read_station_csv,
                               targets_for_day)


def test_daily_max_examples():
    temps = np.linspace(10, 31.2, 144)
    assert daily_max(temps) == 31.2
    assert daily_max(np.ones(10)) is None
    assert daily_max(np.full(144, 20.0)) == 20.0
    assert daily_max(np.ones(5), min_readings=3) == 1.0


def test_rasterize_examples(grid8):
    x0, y1 = grid8.bbox.min_x, grid8.bbox.max_y
    r = grid8.resolution
    # centre of pixel (2, 3)
    t = rasterize_stations([x0 + 3.5 * r], [y1 - 2.5 * r], [30.0], grid8)
    assert t.n_valid == 1 and t.valid[2, 3] and t.values[2, 3] == 30.0
    t = rasterize_stations([x0 + 3.2 * r, x0 + 3.8 * r], [y1 - 2.5 * r, y1 - 2.1 * r], [30.0, 32.0], grid8)
    assert t.n_valid == 1 and t.values[2, 3] == 31.0
    assert rasterize_stations([x0 - 5], [y1 - 5], [30.0], grid8).n_valid == 0


def test_half_open_footprints(grid8):
    x0, y1, r = grid8.bbox.min_x, grid8.bbox.max_y, grid8.resolution
    rows, cols, inside = pixel_of([x0 + r, x0 + 8 * r, x0, x0], [y1 - r, y1 - r, grid8.bbox.min_y, y1], grid8)
    # west and south edges belong to the pixel; the east and north bbox edges are outside
    assert cols[0] == 1 and inside.tolist() == [True, False, True, False]
    assert rows[0] == 0 and rows[2] == 7
    assert pixel_of([x0 + 1], [y1 - r - 1e-9], grid8)[0][0] == 1


def test_rasterize_properties(rng):
    bbox = BoundingBox(0, 0, 400, 400)
    x, y = rng.uniform(0, 400, 25), rng.uniform(0, 400, 25)
    m = rng.normal(25, 3, 25)
    fine = rasterize_stations(x, y, m, make_grid(bbox, 20))
    perm = rng.permutation(25)
    again = rasterize_stations(x[perm], y[perm], m[perm], make_grid(bbox, 20))
    np.testing.assert_array_equal(fine.valid, again.valid)
    np.testing.assert_allclose(fine.values, again.values, rtol=1e-6)
    assert fine.n_valid <= 25
    counts = [rasterize_stations(x, y, m, make_grid(bbox, r)).n_valid for r in (20, 40, 100, 200)]
    assert counts == sorted(counts, reverse=True)


def test_separated_stations_never_share_20m_pixel(rng):
    # two points can share a 20 m pixel only if they are within the pixel diagonal
    g = make_grid(BoundingBox(0, 0, 1000, 1000), 20.0)
    for _ in range(500):
        p = rng.uniform(0, 1000, 2)
        ang = rng.uniform(0, 2 * np.pi)
        d = 20 * np.sqrt(2) + rng.uniform(1e-6, 30)
        q = p + d * np.array([np.cos(ang), np.sin(ang)])
        if not ((0 <= q) & (q < 1000)).all():
            continue
        t = rasterize_stations([p[0], q[0]], [p[1], q[1]], [1.0, 2.0], g)
        assert t.n_valid == 2


def _write_csv(path, rows):
    pd.DataFrame(rows, columns=["station_id", "x", "y", "timestamp", "temperature_c"]).to_csv(path, index=False)


def test_station_csv_pipeline(tmp_path, grid8):
    x0, y1, r = grid8.bbox.min_x, grid8.bbox.max_y, grid8.resolution
    rows = []
    for k in range(144):
        ts = (dt.datetime(2020, 7, 1) + dt.timedelta(minutes=10 * k)).isoformat() + "+02:00"
        rows.append(["A", x0 + 5, y1 - 5, ts, 20 + (k == 80) * 5.5])
        if k < 50:
            rows.append(["B", x0 + 3 * r, y1 - 3 * r, ts, 40.0])
    rows.append(["A", x0 + 5, y1 - 5, "2020-07-02T00:05:00", 99.0])
    _write_csv(tmp_path / "s.csv", rows)
    df = read_station_csv(tmp_path / "s.csv")
    table = daily_maxima_table(df)
    assert table["station_id"].tolist() == ["A"] and table["tmax"].iloc[0] == 25.5
    t = targets_for_day(table, dt.date(2020, 7, 1), grid8)
    assert t.n_valid == 1 and t.values[0, 0] == 25.5
    assert daily_maxima_table(df, min_readings=1, plausible=(-30, 50))["tmax"].max() == 40.0


def test_station_csv_errors(tmp_path):
    pd.DataFrame({"station_id": ["a"], "x": [1.0]}).to_csv(tmp_path / "bad.csv", index=False)
    with pytest.raises(ValueError, match="missing columns"):
        read_station_csv(tmp_path / "bad.csv")
    _write_csv(tmp_path / "nan.csv", [["a", 1.0, None, "2020-01-01T10:00:00", 3.0]])
    with pytest.raises(ValueError, match="empty"):
        read_station_csv(tmp_path / "nan.csv")

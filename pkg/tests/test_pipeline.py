from __future__ import annotations

import datetime as dt
import json
import logging
import shutil

import numpy as np
import pytest

from tmaxcast.bundle import read_bundle, write_bundle
from tmaxcast.dataset import load_day, open_dataset
from tmaxcast.grid import make_grid
from tmaxcast.pipeline import (DataError, build_dataset, ingest_bands, ingest_dem, ingest_landcover, read_scene_bbox,
                               read_weather_csv)
from tmaxcast.geotiff import write_geotiff
from tmaxcast.stations import daily_maxima_table, pixel_of, read_station_csv
from tmaxcast.synth import NOISE_CLIP, SynthConfig, synth_dataset

from conftest import SMALL_SYNTH


def _tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_is_byte_deterministic(tmp_path):
    cfg = SynthConfig(**SMALL_SYNTH, seed=7)
    synth_dataset(cfg, tmp_path / "a")
    synth_dataset(cfg, tmp_path / "b")
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")
    synth_dataset(SynthConfig(**SMALL_SYNTH, seed=8), tmp_path / "c")
    assert _tree_bytes(tmp_path / "a") != _tree_bytes(tmp_path / "c")


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(kind="noise")
    with pytest.raises(ValueError):
        SynthConfig(grid_size=4)
    with pytest.raises(ValueError):
        SynthConfig(dem_resolution=30.0)


def test_dataset_index_and_rejections(small_scene):
    result, data = small_scene
    info = open_dataset(data / "r100")
    assert info.grid.shape == (16, 16) and len(info.channels) == 39
    rejected = {dt.date.fromisoformat(r["date"]) for r in info.index if r["status"] == "rejected"}
    assert rejected == set(result.rejected) and rejected
    assert len(info.dates()) + len(rejected) == len(result.dates)
    assert {r["split"] for r in info.index} == {"train", "val", "test"}
    assert open_dataset(data / "r50").grid.shape == (32, 32)
    for d in rejected:
        assert not (data / "r100" / "targets" / d.isoformat()).exists()


def test_truth_is_planted_linear_function_of_stack(small_scene):
    result, data = small_scene
    info = open_dataset(data / "r100")
    for d in info.dates()[:5]:
        s = load_day(info, d)
        truth = read_bundle(result.root / "truth" / d.isoformat()).data[0]
        pred = np.tensordot(result.weights, s.channels.astype(np.float64), 1) + result.bias
        np.testing.assert_allclose(pred, truth, atol=2e-3)


def test_station_maxima_match_truth_within_noise_bound(small_scene):
    result, data = small_scene
    cfg = SynthConfig(**SMALL_SYNTH)
    table = daily_maxima_table(read_station_csv(result.root / "stations.csv"))
    grid = make_grid(cfg.bbox(), cfg.resolution)
    coords = dict(zip(table["station_id"], zip(table["x"], table["y"])))
    worst = 0.0
    for d in result.dates:
        truth = read_bundle(result.root / "truth" / d.isoformat()).data[0]
        day = table[table["date"] == d]
        rows, cols, inside = pixel_of(day["x"].to_numpy(), day["y"].to_numpy(), grid)
        assert inside.all()
        worst = max(worst, float(np.abs(day["tmax"].to_numpy() - truth[rows, cols]).max()))
    assert 0 < worst <= NOISE_CLIP * cfg.noise_std + 1e-3
    assert len(coords) == cfg.n_stations


def test_noise_free_targets_equal_truth(tmp_path):
    result = synth_dataset(SynthConfig(**SMALL_SYNTH | {"noise_std": 0.0}), tmp_path / "raw")
    build_dataset(tmp_path / "raw", tmp_path / "data", (100.0,))
    info = open_dataset(tmp_path / "data" / "r100")
    s = load_day(info, info.dates()[0])
    truth = read_bundle(result.root / "truth" / s.date.isoformat()).data[0]
    np.testing.assert_allclose(s.target[s.valid], truth[s.valid], atol=1e-3)


def test_seventy_percent_scene_is_rejected_and_logged(small_scene, tmp_path, caplog):
    result, _ = small_scene
    raw = tmp_path / "raw"
    shutil.copytree(result.root, raw)
    d = next(x for x in result.dates if x not in result.rejected)
    old = read_bundle(raw / "bands" / d.isoformat())
    bg = make_grid(old.grid.bbox, old.grid.bbox.width / 10)
    valid = np.zeros((5, 10, 10), bool)
    valid[:, :7] = True  # exactly 70 %
    write_bundle(raw / "bands" / d.isoformat(), bg, np.full((5, 10, 10), 20.0), old.channels, valid=valid,
                 attrs=old.attrs)
    with caplog.at_level(logging.WARNING):
        build_dataset(raw, tmp_path / "data", (100.0,))
    assert f"{d}: scene rejected" in caplog.text
    row = next(r for r in open_dataset(tmp_path / "data" / "r100").index if r["date"] == d.isoformat())
    assert row["status"] == "rejected"


def test_missing_weather_day_and_files(small_scene, tmp_path):
    result, _ = small_scene
    raw = tmp_path / "raw"
    shutil.copytree(result.root, raw)
    lines = (raw / "weather.csv").read_text().splitlines()
    (raw / "weather.csv").write_text("\n".join(lines[:1] + lines[2:]) + "\n")
    build_dataset(raw, tmp_path / "data", (100.0,))
    row = next(r for r in open_dataset(tmp_path / "data" / "r100").index if r["date"] == lines[1][:10])
    assert row["status"] == "no-weather"
    (raw / "stations.csv").unlink()
    with pytest.raises(DataError):
        build_dataset(raw, tmp_path / "data", (100.0,))
    (raw / "weather.csv").write_text(lines[0] + "\n2020-01-01" + "," * (lines[0].count(",")) + "\n")
    with pytest.raises(DataError):
        read_weather_csv(raw / "weather.csv")


def test_ingest_geotiffs(small_scene, tmp_path):
    result, _ = small_scene
    src = read_bundle(result.root / "bands" / result.dates[0].isoformat())
    write_geotiff(tmp_path / "b.tif", src.grid, np.where(src.valid, src.data, -9999.0))
    ingest_bands(tmp_path / "raw", tmp_path / "b.tif", result.dates[0], 36000.0)
    got = read_bundle(tmp_path / "raw" / "bands" / result.dates[0].isoformat())
    assert np.array_equal(got.valid, src.valid)
    assert np.array_equal(got.data[got.valid], src.data[src.valid])
    assert read_scene_bbox(tmp_path / "raw") == src.grid.bbox
    dem = read_bundle(result.root / "dem")
    write_geotiff(tmp_path / "d.tif", dem.grid, dem.data)
    ingest_dem(tmp_path / "raw", tmp_path / "d.tif")
    lc = read_bundle(result.root / "landcover")
    write_geotiff(tmp_path / "l.tif", lc.grid, lc.data.astype(np.uint8), nodata=255)
    ingest_landcover(tmp_path / "raw", tmp_path / "l.tif")
    assert np.array_equal(read_bundle(tmp_path / "raw" / "landcover").data, lc.data)
    with pytest.raises(DataError):
        ingest_bands(tmp_path / "raw", tmp_path / "d.tif", result.dates[0], 36000.0)
    meta = json.loads((result.root / "synth.json").read_text())
    assert meta["rejected"] == [d.isoformat() for d in result.rejected]


def test_resample_first_option(small_scene, tmp_path):
    result, data = small_scene
    build_dataset(result.root, tmp_path / "data", (100.0,), impute_first=False)
    a, b = open_dataset(data / "r100"), open_dataset(tmp_path / "data" / "r100")
    assert [r["status"] for r in a.index] == [r["status"] for r in b.index]
    for d in a.dates():
        x, y = load_day(a, d).channels, load_day(b, d).channels
        assert np.isfinite(y).all()
        np.testing.assert_array_equal(x[5:], y[5:])  # only the bands depend on the order

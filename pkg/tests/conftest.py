from __future__ import annotations

import numpy as np
import pytest

from tmaxcast.grid import BoundingBox, make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid8():
    """8 x 8 grid at 20 m."""
    return make_grid(BoundingBox(1000.0, 2000.0, 1160.0, 2160.0), 20.0)


SMALL_SYNTH = dict(grid_size=16, train_days=8, val_days=4, test_days=4, n_stations=12, rejected_fraction=0.2,
                   band_resolution=400.0)


@pytest.fixture(scope="session")
def small_scene(tmp_path_factory):
    """Tiny planted-linear raw scene plus its datasets at 100 and 50 m/px."""
    from tmaxcast.pipeline import build_dataset
    from tmaxcast.synth import SynthConfig, synth_dataset

    base = tmp_path_factory.mktemp("scene")
    result = synth_dataset(SynthConfig(**SMALL_SYNTH), base / "raw")
    build_dataset(base / "raw", base / "data", (100.0, 50.0))
    return result, base / "data"


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)

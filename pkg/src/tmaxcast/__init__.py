"""Daily maximum air-temperature maps from satellite bands, weather, DEM and land cover.

Submodules: grid, bundle, geotiff, landcover, features, stations, pipeline, dataset,
tensor (autograd), models, training, evaluation, synth, cli.
"""
from __future__ import annotations

__version__ = "0.1.0"

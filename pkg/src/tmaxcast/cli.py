"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from pathlib import Path

from . import config as cfgfile
from .dataset import open_dataset
from .evaluation import EvaluationError, evaluate, export_map, format_table, write_reports
from .geotiff import UnsupportedGeoTIFF
from .grid import SceneRejected
from .models import MODEL_KINDS
from .pipeline import (DEFAULT_RESOLUTIONS, DataError, build_dataset, ingest_bands, ingest_dem, ingest_landcover,
                       ingest_stations, ingest_weather, parse_time_of_day, res_key)
from .synth import SynthConfig, synth_dataset
from .training import NumericalError, TrainConfig, TrainingError, fit, load_model, save_model, write_history

log = logging.getLogger("tmaxcast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolutions(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution list {text!r}") from None
    if not vals or min(vals) <= 0:
        raise argparse.ArgumentTypeError("resolutions must be positive")
    return vals


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad date {text!r}, expected YYYY-MM-DD") from None


def _models(text: str) -> list[str]:
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    bad = [k for k in kinds if k not in MODEL_KINDS]
    if bad or not kinds:
        raise argparse.ArgumentTypeError(f"unknown model(s) {bad}; choose from {', '.join(MODEL_KINDS)}")
    return kinds


def _common(p: argparse.ArgumentParser, config=False, resolution=None, model=None, seed=False, out=True):
    if config:
        p.add_argument("--config", type=Path, help="key = value run-config file")
    if resolution == "one":
        p.add_argument("--resolution", type=float, default=100.0, help="m/px (default 100)")
    elif resolution == "many":
        p.add_argument("--resolution", type=_resolutions, default=list(DEFAULT_RESOLUTIONS),
                       help="comma-separated m/px list (default 100,50,20)")
    if model == "one":
        p.add_argument("--model", choices=MODEL_KINDS, required=True)
    elif model == "many":
        p.add_argument("--model", type=_models, default=list(MODEL_KINDS),
                       help=f"comma-separated subset of {{{','.join(MODEL_KINDS)}}} (default all)")
    if seed:
        p.add_argument("--seed", type=int, help="overrides the seed of the config")
    if out:
        p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tmaxcast", description="Daily maximum-temperature maps from satellite, terrain, "
                                              "land-cover and weather rasters supervised by station readings.")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="convert GeoTIFF / CSV inputs into a raw scene directory")
    p.add_argument("kind", choices=("bands", "dem", "landcover", "weather", "stations"))
    p.add_argument("source", type=Path, help="GeoTIFF (bands/dem/landcover) or CSV (weather/stations)")
    p.add_argument("--date", type=_date, help="scene date (bands)")
    p.add_argument("--passage-time", default="10:00", help="satellite pass HH:MM[:SS] local time (bands)")
    p.add_argument("--urban-atlas-codes", action="store_true",
                   help="landcover raster holds 5-digit Urban Atlas codes rather than indices 0..26")
    _common(p)

    p = sub.add_parser("build-dataset", help="impute, resample and stack every day; rasterize targets")
    p.add_argument("raw", type=Path, help="raw scene directory")
    p.add_argument("--resample-first", action="store_true",
                   help="resample cloudy bands to the target grid before imputing (default: impute at native res)")
    _common(p, resolution="many")

    p = sub.add_parser("train", help="fit one model at one resolution")
    p.add_argument("data", type=Path, help="dataset root written by build-dataset")
    _common(p, config=True, resolution="one", model="one", seed=True)

    p = sub.add_parser("evaluate", help="test-year MAE table over models and resolutions")
    p.add_argument("data", type=Path, help="dataset root written by build-dataset")
    p.add_argument("runs", type=Path, help="runs root written by train")
    _common(p, config=True, resolution="many", model="many")

    p = sub.add_parser("predict", help="predict one day and export the map")
    p.add_argument("data", type=Path)
    p.add_argument("runs", type=Path)
    p.add_argument("--date", type=_date, required=True)
    _common(p, resolution="one", model="one")

    p = sub.add_parser("gradcheck", help="finite-difference check of the autograd engine")
    _common(p, seed=True, out=False)
    p.add_argument("--out", type=Path, help="also write the results here")

    p = sub.add_parser("synth", help="write a seeded synthetic raw scene with known truth")
    _common(p, config=True, resolution=None, seed=True)
    p.add_argument("--resolution", type=float, help="scene m/px (overrides the config)")
    return ap


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfgfile.build(TrainConfig, {"seed": str(args.seed)}, base=cfg)
    return cfg


def cmd_ingest(args) -> int:
    if args.kind == "bands":
        if args.date is None:
            raise UsageError("ingest bands needs --date")
        path = ingest_bands(args.out, args.source, args.date, parse_time_of_day(args.passage_time))
    elif args.kind == "dem":
        path = ingest_dem(args.out, args.source)
    elif args.kind == "landcover":
        path = ingest_landcover(args.out, args.source, codes_are_indices=not args.urban_atlas_codes)
    elif args.kind == "weather":
        path = ingest_weather(args.out, args.source)
    else:
        path = ingest_stations(args.out, args.source)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    made = build_dataset(args.raw, args.out, args.resolution, impute_first=not args.resample_first)
    for res, root in made.items():
        info = open_dataset(root)
        rejected = sum(r["status"] == "rejected" for r in info.index)
        print(f"{res:g} m/px: {len(info.dates())} day(s) usable, {rejected} rejected -> {root}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    info = open_dataset(args.data / res_key(args.resolution))
    from .dataset import load_samples
    samples = load_samples(info)
    result = fit(samples, args.model, cfg)
    run = args.out / args.model / res_key(args.resolution)
    run.mkdir(parents=True, exist_ok=True)
    save_model(run / "checkpoint", result.model)
    write_history(run / "history.csv", result.history)
    (run / "train_config.txt").write_text(cfgfile.dump(cfg))
    print(f"{args.model} at {args.resolution:g} m/px: best val MAE {result.best_val_mae:.4f} °C "
          f"at epoch {result.best_epoch}/{len(result.history)} -> {run}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    years = TrainConfig.from_file(args.config).test_years if args.config else TrainConfig().test_years
    reports = []
    for res in args.resolution:
        for kind in args.model:
            ckpt = args.runs / kind / res_key(res) / "checkpoint"
            if not ckpt.exists():
                log.info("no checkpoint for %s at %g m/px", kind, res)
                continue
            info = open_dataset(args.data / res_key(res))
            reports.append(evaluate(load_model(ckpt), info, years))
    if not reports:
        raise DataError(f"no trained model found under {args.runs} for the requested models/resolutions")
    paths = write_reports(args.out, reports)
    sys.stdout.write(format_table(reports))
    print(f"report written to {paths['csv']}")
    return EXIT_OK


def cmd_predict(args) -> int:
    info = open_dataset(args.data / res_key(args.resolution))
    row = next((r for r in info.index if r["date"] == args.date.isoformat()), None)
    if row is None or row["status"] != "ok":
        status = "absent" if row is None else row["status"]
        raise DataError(f"{args.date}: no usable scene at {args.resolution:g} m/px ({status})")
    from .dataset import load_day
    model = load_model(args.runs / args.model / res_key(args.resolution) / "checkpoint")
    pred = model.predict(load_day(info, args.date).channels)
    exp = export_map(pred, info.grid, args.out, title=f"{args.model} {args.date}")
    print(f"{args.date}: {exp.min_c:.2f} .. {exp.max_c:.2f} °C -> {exp.image}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .tensor.suite import run_suite
    results = run_suite(args.seed or 0)
    lines = [f"{'PASS' if r.report.passed else 'FAIL'}  {r.name:<40} worst rel. error "
             f"{r.report.worst_rel_error:.2e}  ({r.report.n_probes} probes)" for r in results]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gradcheck.txt").write_text(text)
    failed = [r.name for r in results if not r.report.passed]
    if failed:
        raise NumericalError(f"gradient check failed for {failed}")
    return EXIT_OK


def cmd_synth(args) -> int:
    values = cfgfile.read_config_file(args.config) if args.config else {}
    cfg = cfgfile.build(SynthConfig, values)
    over = {}
    if args.seed is not None:
        over["seed"] = str(args.seed)
    if args.resolution is not None:
        over["resolution"] = str(args.resolution)
    if over:
        cfg = cfgfile.build(SynthConfig, over, base=cfg)
    res = synth_dataset(cfg, args.out)
    print(f"{cfg.kind}: {len(res.dates)} days ({len(res.rejected)} cloud-rejected), "
          f"{cfg.n_stations} stations -> {res.root}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest, "build-dataset": cmd_build_dataset, "train": cmd_train, "evaluate": cmd_evaluate,
    "predict": cmd_predict, "gradcheck": cmd_gradcheck, "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, cfgfile.ConfigError) as exc:
        print(f"tmaxcast {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"tmaxcast {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, TrainingError, EvaluationError, UnsupportedGeoTIFF, SceneRejected,
            FileNotFoundError, ValueError) as exc:
        print(f"tmaxcast {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

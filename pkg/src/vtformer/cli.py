"""Command-line entry point: ``vtformer <command> [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import datahub, metrics
from .datahub import DataError, DatasetConfig
from .model import VTFormer
from .trainer import DivergenceError, horizon_sweep, sweep_table_csv, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("vtformer")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _load_windows(path, dcfg: DatasetConfig) -> tuple[list, list, dict]:
    """Return ``(train, eval, info)`` from a prepared directory or a raw table."""
    path = Path(path)
    if path.is_dir():
        manifest, train_set, eval_set = datahub.load_prepared(path)
        if manifest["T_OH"] != dcfg.T_OH or manifest["T_PH"] != dcfg.T_PH:
            raise UsageError(
                f"prepared data has T_OH={manifest['T_OH']}, T_PH={manifest['T_PH']}; "
                f"config asks for T_OH={dcfg.T_OH}, T_PH={dcfg.T_PH}")
        return train_set, eval_set, manifest
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    windows, unit = datahub.prepare_windows(path, dcfg)
    if not windows:
        raise DataError(f"{path}: no complete {dcfg.T_OH + dcfg.T_PH}-step windows")
    train_set, eval_set = datahub.split(windows, dcfg.split_fraction, dcfg.seed)
    return train_set, eval_set, {"unit": unit, "n_windows": len(windows)}


def _write_report(report: metrics.MetricsReport, out: Path, formats) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if "json" in formats:
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    if "csv" in formats:
        (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    with (out / "rmse_plot.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seconds", "rmse"])
        w.writerows(report.plot_rows())


def _require_data_path(cfg: dict) -> Path:
    path = cfg["data"]["path"]
    if not path:
        raise UsageError("config data.path is not set")
    return Path(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    cfg = config_mod.load(args.config) if args.config else config_mod.resolve({"schema_version": 1})
    dcfg = config_mod.dataset_config(cfg)
    dcfg.source_format = args.format
    DatasetConfig(**dcfg.to_dict())  # re-validate
    points, unit = datahub.load_tracks(args.input, args.format, dcfg.columns or None)
    points = datahub.downsample(points, dcfg.native_rate_hz, dcfg.target_rate_hz)
    windows = datahub.window_scenes(points, dcfg, unit)
    train_set, eval_set = datahub.split(windows, dcfg.split_fraction, dcfg.seed) if windows else ([], [])
    manifest = datahub.write_prepared(args.out, points, unit, windows, train_set, eval_set, dcfg,
                                      source=Path(args.input).name)
    print(json.dumps({k: manifest[k] for k in ("unit", "downsample_stride", "n_windows")}, sort_keys=True))
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    sidecar = datahub.write_synthetic(args.out, args.scenario, args.scenes, args.vehicles, args.rate, args.seed,
                                      args.noise, args.steps)
    print(f"wrote {args.scenes} scenes x {args.vehicles} vehicles ({sidecar['scenario']}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = config_mod.load(args.config)
    print(config_mod.dumps(cfg))
    data_path = _require_data_path(cfg)
    dcfg = config_mod.dataset_config(cfg)
    tcfg = config_mod.train_config(cfg)
    train_set, eval_set, _ = _load_windows(data_path, dcfg)
    if not train_set:
        raise DataError("training split is empty")
    out = Path(args.out or cfg["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config_mod.dumps(cfg) + "\n", encoding="utf-8")
    record = train(train_set, eval_set, tcfg, out)
    if record.final_report is not None:
        _write_report(record.final_report, out, cfg["output"]["report_formats"])
    print(f"final loss {record.losses[-1]:.6g}; checkpoint {record.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = VTFormer.load(args.checkpoint)
    c = model.config
    dcfg = DatasetConfig(native_rate_hz=args.rate, target_rate_hz=args.rate, T_OH=c.T_OH, T_PH=c.T_PH)
    path = Path(args.data)
    if path.is_dir():
        train_set, eval_set, _ = _load_windows(path, dcfg)
        scenes = eval_set if args.split == "eval" else train_set + eval_set
    else:
        scenes, _ = datahub.prepare_windows(path, dcfg)
    if not scenes:
        raise DataError(f"{path}: nothing to evaluate")
    report = metrics.evaluate(model, scenes, params=model.count_params())
    out = Path(args.out or config_mod.canonical_config()["output"]["directory"] or "runs")
    _write_report(report, out, ("json", "csv"))
    print(report.to_json())
    return EXIT_OK


def cmd_predict(args) -> int:
    model = VTFormer.load(args.checkpoint)
    c = model.config
    dcfg = DatasetConfig(native_rate_hz=args.rate, target_rate_hz=args.rate, T_OH=c.T_OH, T_PH=c.T_PH)
    scenes, _ = datahub.prepare_windows(args.data, dcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scene_id", "vehicle_id", "step", "x", "y"])
        for scene in scenes:
            traj = model.predict_scene(scene)
            for vid, path in zip(scene.vehicle_ids, traj.positions):
                for k, (x, y) in enumerate(path, start=1):
                    w.writerow([scene.scene_id, vid, k, repr(float(x)), repr(float(y))])
    print(f"wrote predictions for {len(scenes)} windows to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = config_mod.load(args.config)
    print(config_mod.dumps(cfg))
    data_path = _require_data_path(cfg)
    if data_path.is_dir():
        raise UsageError("sweep needs a raw trajectory table; windows depend on T_OH")
    datasets = {}
    for T_OH in args.horizons:
        train_set, eval_set, _ = _load_windows(data_path, config_mod.dataset_config(cfg, T_OH))
        if not train_set or not eval_set:
            raise DataError(f"T_OH={T_OH}: empty train or eval split")
        datasets[T_OH] = (train_set, eval_set)
    out = Path(args.out or cfg["output"]["directory"])
    rows = horizon_sweep(datasets, config_mod.train_config(cfg), out, horizons=args.horizons)
    table = sweep_table_csv(rows)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def cmd_config(args) -> int:
    print(config_mod.dumps(config_mod.canonical_config()))
    return EXIT_OK


# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vtformer", description="Vehicle trajectory prediction with graph-tokenised transformers.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", help="down-sample, window and split a trajectory table")
    s.add_argument("--input", required=True)
    s.add_argument("--format", required=True, choices=datahub.FORMATS)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("gen-synthetic", help="write synthetic highway scenes as canonical CSV")
    s.add_argument("--scenario", required=True, choices=datahub.SCENARIOS)
    s.add_argument("--scenes", type=int, required=True)
    s.add_argument("--vehicles", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--rate", type=int, default=5)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--steps", type=int, default=40, help="steps per scene (T_OH + T_PH)")
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("train", help="train a model from a run config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (overrides the config)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="prepared directory or canonical CSV")
    s.add_argument("--rate", type=int, default=5, help="sampling rate of a canonical CSV")
    s.add_argument("--split", choices=("eval", "all"), default="eval")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="write predicted trajectories for every window")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="canonical CSV")
    s.add_argument("--rate", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("sweep", help="train and evaluate T_OH = 15, 10, 5")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--horizons", type=int, nargs="+", default=[15, 10, 5])
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("config", help="print the canonical run config")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"vtformer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, config_mod.ConfigError, datahub.ConfigError) as exc:
        print(f"vtformer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"vtformer: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, metrics.MetricsError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"vtformer: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"vtformer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

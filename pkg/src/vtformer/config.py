"""JSON run configuration: data, model, train and output sections."""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .datahub import DatasetConfig
from .trainer import TrainConfig

SCHEMA_VERSION = 1
OUTPUT_ENV = "VTFORMER_OUTPUT_DIR"

CANONICAL = {
    "schema_version": SCHEMA_VERSION,
    "data": {
        "path": None,
        "source_format": "canonical",
        "native_rate_hz": 5,
        "target_rate_hz": 5,
        "T_OH": 15,
        "T_PH": 25,
        "stride": None,
        "split_fraction": 0.8,
        "seed": 0,
        "columns": {},
    },
    "model": {"d_model": 24, "layers": 8, "heads": 4, "ffn": 256, "dropout": 0.2},
    "train": {"epochs": 80, "lr": 0.01, "weight_decay": 0.0005, "batch_size": 16, "seed": 0, "eval_every": 10},
    "output": {"directory": None, "report_formats": ["json", "csv"]},
}


class ConfigError(ValueError):
    pass


def canonical_config() -> dict:
    return copy.deepcopy(CANONICAL)


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown key {where}{key!r}")
        if isinstance(base[key], dict) and key != "columns":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def resolve(raw: dict) -> dict:
    """Fill defaults, reject unknown keys and check cross-section consistency."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    cfg = _merge(CANONICAL, raw, "")
    if cfg["output"]["directory"] is None:
        cfg["output"]["directory"] = os.environ.get(OUTPUT_ENV, "runs")
    bad = set(cfg["output"]["report_formats"]) - {"json", "csv"}
    if bad:
        raise ConfigError(f"unknown report formats {sorted(bad)}")
    # building the typed configs runs their validation
    try:
        dataset_config(cfg)
        train_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return resolve(raw)


def dataset_config(cfg: dict, T_OH: int | None = None) -> DatasetConfig:
    d = cfg["data"]
    return DatasetConfig(
        source_format=d["source_format"], native_rate_hz=d["native_rate_hz"], target_rate_hz=d["target_rate_hz"],
        T_OH=T_OH or d["T_OH"], T_PH=d["T_PH"], stride=d["stride"], split_fraction=d["split_fraction"],
        seed=d["seed"], columns=dict(d["columns"]))


def train_config(cfg: dict, T_OH: int | None = None) -> TrainConfig:
    m, t, d = cfg["model"], cfg["train"], cfg["data"]
    return TrainConfig(
        epochs=t["epochs"], lr=t["lr"], weight_decay=t["weight_decay"], dropout=m["dropout"],
        batch_size=t["batch_size"], T_OH=T_OH or d["T_OH"], T_PH=d["T_PH"], seed=t["seed"],
        d_model=m["d_model"], eval_every=t["eval_every"], n_layers=m["layers"], n_heads=m["heads"],
        d_ff=m["ffn"])


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2)

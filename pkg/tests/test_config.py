import json

import pytest

from vtformer import config


def test_canonical_values():
    c = config.canonical_config()
    assert c["train"] == {"epochs": 80, "lr": 0.01, "weight_decay": 0.0005, "batch_size": 16, "seed": 0,
                          "eval_every": 10}
    assert c["model"]["layers"] == 8 and c["model"]["heads"] == 4 and c["model"]["ffn"] == 256
    assert c["model"]["dropout"] == 0.2 and c["data"]["T_PH"] == 25
    # a fresh copy each time
    c["train"]["epochs"] = 1
    assert config.canonical_config()["train"]["epochs"] == 80


def test_resolve_fills_defaults_and_output_env(monkeypatch):
    monkeypatch.delenv(config.OUTPUT_ENV, raising=False)
    cfg = config.resolve({"schema_version": 1, "train": {"epochs": 3}})
    assert cfg["train"]["epochs"] == 3 and cfg["train"]["lr"] == 0.01
    assert cfg["output"]["directory"] == "runs"
    monkeypatch.setenv(config.OUTPUT_ENV, "/tmp/elsewhere")
    assert config.resolve({"schema_version": 1})["output"]["directory"] == "/tmp/elsewhere"


@pytest.mark.parametrize("raw,match", [
    ({}, "schema_version"),
    ({"schema_version": 2}, "schema_version"),
    ({"schema_version": 1, "trian": {}}, "unknown key"),
    ({"schema_version": 1, "train": {"epoch": 3}}, "unknown key"),
    ({"schema_version": 1, "train": 5}, "object"),
    ({"schema_version": 1, "data": {"native_rate_hz": 10, "target_rate_hz": 3}}, "divisible"),
    ({"schema_version": 1, "train": {"lr": -1}}, "lr"),
    ({"schema_version": 1, "output": {"report_formats": ["xlsx"]}}, "formats"),
])
def test_resolve_rejects_bad_configs(raw, match):
    with pytest.raises(config.ConfigError, match=match):
        config.resolve(raw)


def test_load_and_typed_views(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"schema_version": 1, "data": {"T_OH": 10}, "model": {"d_model": 16}}))
    cfg = config.load(p)
    assert config.dataset_config(cfg).T_OH == 10
    assert config.dataset_config(cfg, 5).T_OH == 5
    t = config.train_config(cfg, 15)
    assert t.T_OH == 15 and t.d_model == 16 and t.n_layers == 8
    with pytest.raises(config.ConfigError, match="not found"):
        config.load(tmp_path / "absent.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(config.ConfigError, match="invalid JSON"):
        config.load(tmp_path / "bad.json")
    assert json.loads(config.dumps(cfg)) == cfg

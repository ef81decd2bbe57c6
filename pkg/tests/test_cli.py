import csv
import json

import pytest

from vtformer.cli import main

TINY_MODEL = {"d_model": 8, "layers": 1, "heads": 2, "ffn": 16}


@pytest.fixture()
def synthetic(tmp_path):
    path = tmp_path / "syn.csv"
    assert main(["gen-synthetic", "--scenario", "constant_velocity", "--scenes", "6", "--vehicles", "2",
                 "--seed", "1", "--out", str(path)]) == 0
    return path


def _config(tmp_path, data, out="run", **train):
    cfg = {"schema_version": 1, "data": {"path": str(data)}, "model": TINY_MODEL,
           "train": {"epochs": 2, "batch_size": 4, "eval_every": 1, **train},
           "output": {"directory": str(tmp_path / out)}}
    p = tmp_path / f"{out}.json"
    p.write_text(json.dumps(cfg))
    return p


def test_gen_synthetic_writes_csv_and_sidecar(synthetic):
    rows = list(csv.DictReader(synthetic.open()))
    assert len(rows) == 6 * 2 * 40 and rows[0]["unit"] == "meters"
    assert json.loads(synthetic.with_suffix(".json").read_text())["scenario"] == "constant_velocity"


def test_train_eval_predict(tmp_path, synthetic, capsys):
    assert main(["train", "--config", str(_config(tmp_path, synthetic))]) == 0
    run = tmp_path / "run"
    for name in ("config.json", "run.jsonl", "final.json", "best.json", "report.json", "report.csv",
                 "rmse_plot.csv"):
        assert (run / name).exists(), name
    echoed = capsys.readouterr().out
    assert '"epochs": 2' in echoed
    assert main(["eval", "--checkpoint", str(run / "final.json"), "--data", str(synthetic),
                 "--out", str(tmp_path / "ev")]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["n_vehicles"] == 12 and report["params"] > 0
    plot = list(csv.reader((tmp_path / "ev" / "rmse_plot.csv").open()))
    assert plot[0] == ["seconds", "rmse"] and len(plot) == 6
    assert main(["predict", "--checkpoint", str(run / "final.json"), "--data", str(synthetic),
                 "--out", str(tmp_path / "pred.csv")]) == 0
    pred = list(csv.DictReader((tmp_path / "pred.csv").open()))
    assert len(pred) == 6 * 2 * 25


def test_prepare_then_train_on_prepared_directory(tmp_path, synthetic):
    prep = tmp_path / "prep"
    assert main(["prepare", "--input", str(synthetic), "--format", "canonical", "--out", str(prep)]) == 0
    manifest = json.loads((prep / "manifest.json").read_text())
    assert manifest["n_windows"] == 6 and len(manifest["train"]) == 5
    assert main(["train", "--config", str(_config(tmp_path, prep, out="p"))]) == 0
    assert main(["eval", "--checkpoint", str(tmp_path / "p" / "final.json"), "--data", str(prep),
                 "--out", str(tmp_path / "pe")]) == 0
    assert json.loads((tmp_path / "pe" / "report.json").read_text())["n_vehicles"] == 2


def test_prepare_rejects_horizon_mismatch_on_prepared_data(tmp_path, synthetic):
    prep = tmp_path / "prep"
    main(["prepare", "--input", str(synthetic), "--format", "canonical", "--out", str(prep)])
    cfg = json.loads(_config(tmp_path, prep).read_text())
    cfg["data"]["T_OH"] = 10
    p = tmp_path / "mismatch.json"
    p.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(p)]) == 2


def test_sweep_writes_table(tmp_path, synthetic):
    cfg = _config(tmp_path, synthetic, out="sw", epochs=1)
    assert main(["sweep", "--config", str(cfg)]) == 0
    header, *rows = (tmp_path / "sw" / "sweep.csv").read_text().strip().split("\n")
    assert header == "Model,ADE,FDE,1s,2s,3s,4s,5s,Params"
    assert [r.split(",")[0] for r in rows] == ["VT-Former_LH", "VT-Former_MH", "VT-Former_SH"]


def test_exit_codes(tmp_path, synthetic, capsys):
    assert main(["no-such-command"]) == 2
    assert main(["train"]) == 2
    assert main(["train", "--config", str(tmp_path / "absent.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "trian": {}}))
    assert main(["train", "--config", str(bad)]) == 2
    missing = _config(tmp_path, tmp_path / "missing.csv", out="m")
    assert main(["train", "--config", str(missing)]) == 3
    assert not (tmp_path / "m").exists()
    garbage = tmp_path / "garbage.csv"
    garbage.write_text("scene_id,vehicle_id,frame,x,y,unit\n0,1,0,oops,0,meters\n")
    assert main(["train", "--config", str(_config(tmp_path, garbage, out="g"))]) == 3
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.json"), "--data", str(synthetic)]) == 3
    assert main(["config"]) == 0
    assert "Params" not in capsys.readouterr().err


def test_divergence_exit_code(tmp_path, synthetic, monkeypatch):
    from vtformer import numkit, trainer

    def poisoned(store, lr, weight_decay=0.0, **kw):
        raise numkit.PoisonedGradientError("non-finite gradient in parameter 'x'")

    monkeypatch.setattr(trainer.nk, "adam_step", poisoned)
    assert main(["train", "--config", str(_config(tmp_path, synthetic, out="d"))]) == 4

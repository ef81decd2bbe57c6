"""Training loop, sanity baselines and the observation-horizon sweep."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import metrics
from . import numkit as nk
from .datahub import SceneWindow
from .metrics import MetricsReport
from .model import HORIZON_LABELS, ModelConfig, Normalizer, VTFormer
from .predictor import PredictedTrajectory

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    epochs: int = 80
    lr: float = 0.01
    weight_decay: float = 0.0005
    dropout: float = 0.2
    batch_size: int = 16
    T_OH: int = 15
    T_PH: int = 25
    seed: int = 0
    d_model: int = 24
    eval_every: int = 10
    n_layers: int = 8
    n_heads: int = 4
    d_ff: int = 256

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs, batch_size and eval_every must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")

    def model_config(self) -> ModelConfig:
        return ModelConfig(T_OH=self.T_OH, T_PH=self.T_PH, d_model=self.d_model, n_layers=self.n_layers,
                           n_heads=self.n_heads, d_ff=self.d_ff, dropout=self.dropout)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    evals: dict[int, MetricsReport] = field(default_factory=dict)
    checkpoint: str | None = None
    best_checkpoint: str | None = None
    best_ade: float = math.inf
    model: VTFormer | None = field(default=None, repr=False)

    @property
    def final_report(self) -> MetricsReport | None:
        return self.evals[max(self.evals)] if self.evals else None

    def jsonl_lines(self) -> list[str]:
        lines = []
        for epoch, loss in enumerate(self.losses, start=1):
            rec = {"epoch": epoch, "loss": loss, "seconds": self.epoch_seconds[epoch - 1],
                   "config_hash": self.config_hash}
            if epoch in self.evals:
                rec["eval"] = asdict(self.evals[epoch])
            lines.append(json.dumps(rec, sort_keys=True))
        return lines


def mse_loss(pred_deltas, gt_deltas) -> nk.Tensor:
    return nk.mse(nk.as_tensor(pred_deltas), gt_deltas)


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def train(train_set: Sequence[SceneWindow], eval_set: Sequence[SceneWindow], cfg: TrainConfig,
          out_dir=None, model: VTFormer | None = None) -> RunRecord:
    """Teacher-forced training with one Adam step per batch of scene windows."""
    if not train_set:
        raise ValueError("train_set is empty")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    model = model or VTFormer(cfg.model_config(), seed=cfg.seed)
    model.normalizer = Normalizer.fit(train_set)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    record = RunRecord(config=asdict(cfg), config_hash=cfg.digest(), model=model)
    store = model.params
    jsonl = (out / "run.jsonl").open("w", encoding="utf-8") if out is not None else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            start = time.perf_counter()
            total, count = 0.0, 0
            for b, idx in enumerate(_batches(len(train_set), cfg.batch_size, shuffle_rng)):
                with nk.Tape() as tape:
                    loss = model.batch_loss([train_set[i] for i in idx], dropout_rng, training=True)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise DivergenceError(f"loss became {value} at epoch {epoch}, batch {b}", epoch, b)
                tape.backward(loss)
                try:
                    nk.adam_step(store, cfg.lr, cfg.weight_decay)
                except nk.PoisonedGradientError as exc:
                    raise DivergenceError(f"{exc} at epoch {epoch}, batch {b}", epoch, b) from exc
                total += value * len(idx)
                count += len(idx)
            record.losses.append(total / count)
            record.epoch_seconds.append(time.perf_counter() - start)
            if eval_set and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
                report = metrics.evaluate(model, eval_set, params=model.count_params())
                record.evals[epoch] = report
                if report.ade < record.best_ade:
                    record.best_ade = report.ade
                    if out is not None:
                        record.best_checkpoint = str(model.save(out / "best.json"))
            log.info("epoch %d loss %.6g", epoch, record.losses[-1])
            if jsonl is not None:
                jsonl.write(record.jsonl_lines()[-1] + "\n")
                jsonl.flush()
    finally:
        if jsonl is not None:
            jsonl.close()
    if out is not None:
        record.checkpoint = str(model.save(out / "final.json"))
    return record


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def baseline_constant_velocity(scene: SceneWindow, T_PH: int | None = None) -> PredictedTrajectory:
    """Extrapolate the mean observed per-step displacement."""
    if scene.T_OH < 2:
        raise ValueError("constant-velocity baseline needs T_OH >= 2")
    T_PH = T_PH or scene.T_PH
    obs = scene.observed
    step = (obs[:, -1] - obs[:, 0]) / (scene.T_OH - 1)
    return PredictedTrajectory.from_deltas(obs[:, -1], np.repeat(step[:, None, :], T_PH, axis=1))


def baseline_constant_position(scene: SceneWindow, T_PH: int | None = None) -> PredictedTrajectory:
    T_PH = T_PH or scene.T_PH
    return PredictedTrajectory.from_deltas(scene.last_observed, np.zeros((scene.n_vehicles, T_PH, 2)))


# ---------------------------------------------------------------------------
# horizon sweep
# ---------------------------------------------------------------------------

SWEEP_HORIZONS = (15, 10, 5)


@dataclass
class SweepRow:
    label: str
    T_OH: int
    record: RunRecord
    report: MetricsReport


def horizon_sweep(datasets: Mapping[int, tuple[Sequence[SceneWindow], Sequence[SceneWindow]]],
                  base_cfg: TrainConfig, out_dir=None, horizons: Sequence[int] = SWEEP_HORIZONS
                  ) -> list[SweepRow]:
    """Train and evaluate one model per observation horizon, all else fixed."""
    rows = []
    for T_OH in horizons:
        cfg = TrainConfig(**{**asdict(base_cfg), "T_OH": T_OH})
        train_set, eval_set = datasets[T_OH]
        label = HORIZON_LABELS.get(T_OH, f"OH{T_OH}")
        sub = Path(out_dir) / label if out_dir is not None else None
        record = train(train_set, eval_set, cfg, sub)
        report = record.final_report or metrics.evaluate(record.model, eval_set,
                                                         params=record.model.count_params())
        rows.append(SweepRow(label, T_OH, record, report))
    return rows


def sweep_table_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if rows:
        w.writerow(["Model", *rows[0].report.columns()])
        for r in rows:
            w.writerow([f"VT-Former_{r.label}", *r.report.row()])
    return buf.getvalue()

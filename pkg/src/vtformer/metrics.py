"""Displacement-error metrics: ADE, FDE and RMSE at fixed horizons."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

SECOND_MARKS = (1, 2, 3, 4, 5)


class MetricsError(ValueError):
    pass


def _check(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricsError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    if pred.ndim != 3 or pred.shape[2] != 2 or pred.shape[0] < 1 or pred.shape[1] < 1:
        raise MetricsError(f"expected (N, T_PH, 2) arrays with N, T_PH >= 1, got {pred.shape}")
    return pred, gt


def displacement(pred, gt) -> np.ndarray:
    """Euclidean distance per vehicle and step, ``(N, T_PH)``."""
    pred, gt = _check(pred, gt)
    return np.sqrt(np.sum((pred - gt) ** 2, axis=-1))


def ade(pred, gt) -> float:
    return float(displacement(pred, gt).mean())


def fde(pred, gt) -> float:
    return float(displacement(pred, gt)[:, -1].mean())


def rmse_at(pred, gt, step: int) -> float:
    """RMSE over vehicles at a 1-based future ``step``."""
    pred, gt = _check(pred, gt)
    if not 1 <= step <= pred.shape[1]:
        raise MetricsError(f"step {step} outside 1..{pred.shape[1]}")
    err = pred[:, step - 1] - gt[:, step - 1]
    return float(np.sqrt(np.mean(np.sum(err * err, axis=-1))))


def horizon_marks(rate_hz: int, T_PH: int) -> dict[str, int]:
    """Map column labels to 1-based steps for the five evaluation marks.

    At 5 Hz the marks are whole seconds; at higher rates the T_PH steps are
    split into five equal spans (0.5 s marks at 10 Hz with T_PH = 25).
    """
    if rate_hz <= 5:
        marks = {}
        for sec in SECOND_MARKS:
            step = sec * rate_hz
            if step <= T_PH:
                marks[f"{sec}s"] = step
        return marks
    if T_PH % len(SECOND_MARKS):
        raise MetricsError(f"T_PH={T_PH} cannot be split into {len(SECOND_MARKS)} horizon marks")
    span = T_PH // len(SECOND_MARKS)
    out = {}
    for i in range(1, len(SECOND_MARKS) + 1):
        seconds = Fraction(i * span, rate_hz)
        out[f"{float(seconds):.1f}s"] = i * span
    return out


@dataclass
class MetricsReport:
    ade: float
    fde: float
    rmse_at: dict[str, float]
    n_vehicles: int
    unit: str
    rate_hz: int
    params: int | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    def columns(self) -> list[str]:
        cols = ["ADE", "FDE", *self.rmse_at]
        return cols + (["Params"] if self.params is not None else [])

    def row(self) -> list:
        vals = [self.ade, self.fde, *self.rmse_at.values()]
        return vals + ([self.params] if self.params is not None else [])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        w.writerow(self.row())
        return buf.getvalue()

    def plot_rows(self) -> list[tuple[float, float]]:
        """``(seconds, rmse)`` pairs for an RMSE-vs-horizon plot."""
        return [(float(k.rstrip("s")), v) for k, v in self.rmse_at.items()]


def report_from_arrays(pred, gt, rate_hz: int, unit: str = "meters", params: int | None = None) -> MetricsReport:
    pred, gt = _check(pred, gt)
    marks = horizon_marks(rate_hz, pred.shape[1])
    return MetricsReport(
        ade=ade(pred, gt), fde=fde(pred, gt),
        rmse_at={label: rmse_at(pred, gt, step) for label, step in marks.items()},
        n_vehicles=pred.shape[0], unit=unit, rate_hz=rate_hz, params=params)


def evaluate(model, dataset: Sequence, rate_hz: int | None = None,
             params: int | None = None) -> MetricsReport:
    """Score a model over every vehicle of every scene.

    ``model`` is either a callable ``scene -> (N, T_PH, 2)`` or an object with
    a ``predict_scene`` method. Errors are pooled per vehicle across the whole
    set, so scenes with more vehicles weigh more.
    """
    if not dataset:
        raise MetricsError("cannot evaluate an empty dataset")
    predict = getattr(model, "predict_scene", model)
    preds, gts = [], []
    for scene in dataset:
        p = predict(scene)
        p = getattr(p, "positions", p)
        preds.append(np.asarray(p, dtype=np.float64))
        gts.append(scene.future)
    rate = rate_hz or dataset[0].rate_hz
    return report_from_arrays(np.concatenate(preds), np.concatenate(gts), rate, dataset[0].unit, params)

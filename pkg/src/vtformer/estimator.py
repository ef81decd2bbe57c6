"""scikit-learn style wrapper around the training pipeline."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import metrics
from .datahub import SceneWindow
from .model import VTFormer
from .trainer import TrainConfig, train


def check_scenes(X, T_OH: int | None = None, T_PH: int | None = None, require_future: bool = True
                 ) -> list[SceneWindow]:
    """Validate a sequence of scene windows and return it as a list."""
    if isinstance(X, SceneWindow):
        X = [X]
    try:
        scenes = list(X)
    except TypeError:
        raise TypeError(f"expected a sequence of SceneWindow, got {type(X).__name__}") from None
    if not scenes:
        raise ValueError("expected at least one scene window")
    for s in scenes:
        if not isinstance(s, SceneWindow):
            raise TypeError(f"expected SceneWindow, got {type(s).__name__}")
        if T_OH is not None and s.T_OH != T_OH:
            raise ValueError(f"scene {s.scene_id}: T_OH={s.T_OH}, expected {T_OH}")
        if require_future and T_PH is not None and s.T_PH != T_PH:
            raise ValueError(f"scene {s.scene_id}: T_PH={s.T_PH}, expected {T_PH}")
        if not (np.all(np.isfinite(s.observed)) and np.all(np.isfinite(s.future))):
            raise ValueError(f"scene {s.scene_id}: non-finite coordinates")
    return scenes


class VTFormerRegressor(RegressorMixin, BaseEstimator):
    """Trajectory regressor over scene windows.

    ``fit`` takes a sequence of :class:`SceneWindow` (the future coordinates
    inside each window are the targets, so ``y`` is ignored). ``predict``
    returns absolute future positions stacked over every vehicle of every
    scene, shape ``(sum N, T_PH, 2)``.
    """

    def __init__(self, T_OH=15, T_PH=25, d_model=24, n_layers=8, n_heads=4, d_ff=256, dropout=0.2,
                 epochs=80, lr=0.01, weight_decay=0.0005, batch_size=16, eval_every=10, random_state=0):
        self.T_OH = T_OH
        self.T_PH = T_PH
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.dropout = dropout
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.eval_every = eval_every
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, weight_decay=self.weight_decay, dropout=self.dropout,
                           batch_size=self.batch_size, T_OH=self.T_OH, T_PH=self.T_PH,
                           seed=int(self.random_state or 0), d_model=self.d_model, eval_every=self.eval_every,
                           n_layers=self.n_layers, n_heads=self.n_heads, d_ff=self.d_ff)

    def fit(self, X, y=None, eval_set: Sequence[SceneWindow] | None = None, out_dir=None):
        scenes = check_scenes(X, self.T_OH, self.T_PH)
        held = check_scenes(eval_set, self.T_OH, self.T_PH) if eval_set else []
        self.record_ = train(scenes, held, self._train_config(), out_dir)
        self.model_ = self.record_.model
        self.n_params_ = self.model_.count_params()
        return self

    @classmethod
    def from_model(cls, model: VTFormer) -> "VTFormerRegressor":
        c = model.config
        est = cls(T_OH=c.T_OH, T_PH=c.T_PH, d_model=c.d_model, n_layers=c.n_layers, n_heads=c.n_heads,
                  d_ff=c.d_ff, dropout=c.dropout)
        est.model_ = model
        est.n_params_ = model.count_params()
        return est

    def predict_trajectories(self, X) -> list:
        check_is_fitted(self, "model_")
        scenes = check_scenes(X, self.T_OH, require_future=False)
        return [self.model_.predict_scene(s) for s in scenes]

    def predict(self, X) -> np.ndarray:
        return np.concatenate([t.positions for t in self.predict_trajectories(X)])

    def evaluate(self, X) -> metrics.MetricsReport:
        check_is_fitted(self, "model_")
        scenes = check_scenes(X, self.T_OH, self.T_PH)
        return metrics.evaluate(self.model_, scenes, params=self.n_params_)

    def score(self, X, y=None, sample_weight=None) -> float:
        """Negative ADE, so that larger is better."""
        return -self.evaluate(X).ade

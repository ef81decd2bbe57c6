"""Tokenizer and predictor bundled with their parameters and checkpoint format."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numkit as nk
from .datahub import SceneWindow
from .numkit import ParamStore, Tensor
from .predictor import (PredictedTrajectory, forward_teacher_forced, future_deltas, generate,
                        init_predictor_params)
from .tokenizer import init_gat_params, relative_trajectory, tokenize

CHECKPOINT_FORMAT = "vtformer-checkpoint"
CHECKPOINT_VERSION = 1
HORIZON_LABELS = {15: "LH", 10: "MH", 5: "SH"}


@dataclass(frozen=True)
class ModelConfig:
    T_OH: int = 15
    T_PH: int = 25
    d_model: int = 24
    n_layers: int = 8
    n_heads: int = 4
    d_ff: int = 256
    dropout: float = 0.2
    slope: float = 0.01

    def __post_init__(self):
        if self.d_model % 2 or self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} must be even and divisible by n_heads={self.n_heads}")
        if self.T_OH < 1 or self.T_PH < 1:
            raise ValueError("T_OH and T_PH must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def label(self) -> str:
        return HORIZON_LABELS.get(self.T_OH, f"OH{self.T_OH}")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Normalizer:
    """Standardisation of network inputs and regression targets.

    Absolute positions are centred and divided by one ``spread``; the relative
    trajectory is standardised per (step, axis); per-step displacement targets
    are shifted by ``delta_mean`` and divided by ``delta_scale``. Fitted on the
    training windows, the identity by default.
    """

    center: tuple[float, float] = (0.0, 0.0)
    spread: float = 1.0
    relative_mean: list | None = None
    relative_std: list | None = None
    delta_mean: tuple[float, float] = (0.0, 0.0)
    delta_scale: float = 1.0

    @classmethod
    def fit(cls, scenes: Sequence[SceneWindow]) -> "Normalizer":
        obs = np.concatenate([s.observed for s in scenes])
        rel = relative_trajectory(obs)
        steps = np.concatenate([future_deltas(s.last_observed, s.future).reshape(-1, 2) for s in scenes])
        points = obs.reshape(-1, 2)
        center = points.mean(axis=0)
        spread = _guard(float(np.sqrt(np.mean(np.sum((points - center) ** 2, axis=-1)))))
        rel_std = rel.std(axis=0)
        rel_std[rel_std < 1e-12] = 1.0
        mu = steps.mean(axis=0)
        scale = _guard(float(np.sqrt(np.mean(np.sum((steps - mu) ** 2, axis=-1)))))
        return cls((float(center[0]), float(center[1])), spread, rel.mean(axis=0).tolist(), rel_std.tolist(),
                   (float(mu[0]), float(mu[1])), scale)

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(tuple(d["center"]), float(d["spread"]), d["relative_mean"], d["relative_std"],
                   tuple(d["delta_mean"]), float(d["delta_scale"]))

    def positions(self, coords: np.ndarray) -> np.ndarray:
        return (coords - np.asarray(self.center)) / self.spread

    def relative(self, coords: np.ndarray) -> np.ndarray:
        rel = relative_trajectory(coords)
        if self.relative_mean is None:
            return rel / self.spread
        mean, std = np.asarray(self.relative_mean), np.asarray(self.relative_std)
        if mean.shape != rel.shape[-2:]:
            raise ValueError(f"normalizer fitted for T_OH={mean.shape[0]}, got {rel.shape[-2]}")
        return (rel - mean) / std

    def deltas(self, deltas: np.ndarray) -> np.ndarray:
        return (deltas - np.asarray(self.delta_mean)) / self.delta_scale

    def inverse_deltas(self, z: np.ndarray) -> np.ndarray:
        return z * self.delta_scale + np.asarray(self.delta_mean)


def _guard(scale: float) -> float:
    return scale if scale > 1e-12 else 1.0


class VTFormer:
    """Graph attentive tokenizer feeding a causal transformer predictor."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0, params: ParamStore | None = None,
                 normalizer: Normalizer | None = None):
        self.config = config or ModelConfig()
        self.normalizer = normalizer or Normalizer()
        if params is None:
            rng = np.random.default_rng(seed)
            params = ParamStore()
            init_gat_params(params, self.config.T_OH, self.config.d_model, rng)
            init_predictor_params(params, self.config.d_model, self.config.n_layers, self.config.n_heads,
                                  self.config.d_ff, rng)
        self.params = params

    # ------------------------------------------------------------------
    def count_params(self) -> int:
        return self.params.count()

    def _check_scene(self, scene: SceneWindow) -> None:
        if scene.T_OH != self.config.T_OH:
            raise ValueError(f"scene {scene.scene_id} has T_OH={scene.T_OH}, model expects {self.config.T_OH}")

    def tokens(self, scene: SceneWindow) -> Tensor:
        self._check_scene(scene)
        norm = self.normalizer
        return tokenize(norm.positions(scene.observed), self.params, self.config.d_model, self.config.slope,
                        relative=norm.relative(scene.observed))

    def batch_loss(self, scenes: Sequence[SceneWindow], rng: np.random.Generator | None = None,
                   training: bool = True) -> Tensor:
        """Mean squared error of standardised per-step displacements over all vehicles."""
        cfg = self.config
        toks = nk.concat([self.tokens(s) for s in scenes], axis=0) if len(scenes) > 1 else self.tokens(scenes[0])
        target = self.normalizer.deltas(
            np.concatenate([future_deltas(s.last_observed, s.future) for s in scenes]))
        pred = forward_teacher_forced(toks, target, self.params, cfg.n_layers, cfg.n_heads,
                                      cfg.dropout, rng, training, cfg.slope)
        return nk.mse(pred, target)

    def predict_scene(self, scene: SceneWindow) -> PredictedTrajectory:
        cfg = self.config
        with nk.no_grad():
            toks = self.tokens(scene)
            traj = generate(toks, np.zeros((scene.n_vehicles, 2)), self.params, cfg.T_PH, cfg.n_layers,
                            cfg.n_heads, cfg.slope)
        return PredictedTrajectory.from_deltas(scene.last_observed, self.normalizer.inverse_deltas(traj.deltas))

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        payload = self.params.to_dict()
        payload.update({
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "config_hash": self.config.digest(),
            "normalizer": asdict(self.normalizer),
        })
        return payload

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
        return path

    @classmethod
    def from_dict(cls, payload: dict) -> "VTFormer":
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a vtformer checkpoint")
        known = {f.name for f in fields(ModelConfig)}
        config = ModelConfig(**{k: v for k, v in payload["config"].items() if k in known})
        if payload.get("config_hash") != config.digest():
            raise ValueError("checkpoint config hash does not match its config")
        normalizer = Normalizer.from_dict(payload["normalizer"])
        model = cls(config, normalizer=normalizer)
        model.params.load_values(ParamStore.from_dict(payload))
        return model

    @classmethod
    def load(cls, path) -> "VTFormer":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

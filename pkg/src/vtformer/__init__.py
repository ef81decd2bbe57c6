"""Vehicle trajectory prediction with graph-attentive tokenisation and a decoder-only transformer."""
from .datahub import DatasetConfig, SceneWindow, TrackPoint, generate_synthetic, load_tracks, window_scenes
from .estimator import VTFormerRegressor, check_scenes
from .metrics import MetricsReport, ade, evaluate, fde, rmse_at
from .model import ModelConfig, Normalizer, VTFormer
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DatasetConfig", "SceneWindow", "TrackPoint", "generate_synthetic", "load_tracks", "window_scenes",
    "VTFormerRegressor", "check_scenes", "MetricsReport", "ade", "evaluate", "fde", "rmse_at",
    "ModelConfig", "Normalizer", "VTFormer", "TrainConfig", "train",
]

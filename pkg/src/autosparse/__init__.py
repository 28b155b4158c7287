"""Sparse training with learnable soft thresholds and annealed proxy gradients."""
from .model import SparseNet, build_model
from .prune import BackwardSupersetSpec, prune_forward
from .schedules import AnnealSchedule, alpha_at_epoch
from .training import AutoTuneConfig, ConfigError, DivergedError, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule",
    "AutoTuneConfig",
    "BackwardSupersetSpec",
    "ConfigError",
    "DivergedError",
    "SparseNet",
    "TrainConfig",
    "alpha_at_epoch",
    "build_model",
    "prune_forward",
    "train",
]

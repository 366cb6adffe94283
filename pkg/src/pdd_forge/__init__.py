"""Teacher-student distillation of a Gaussian WaveNet vocoder into a parallel
IAF student, built on a small numpy reverse-mode autodiff engine."""

from .autodiff import Tensor, no_grad
from .config import ArchConfig, Schedule, TrainConfig
from .losses import PRESETS, LossWeights, resolve_preset

__all__ = [
    "ArchConfig",
    "LossWeights",
    "PRESETS",
    "Schedule",
    "Tensor",
    "TrainConfig",
    "no_grad",
    "resolve_preset",
]

__version__ = "0.1.0"

"""Restormer: transposed-attention image restoration on a small numpy autodiff core."""
from .config import ModelConfig, RunConfig, ScheduleEntry, TrainConfig
from .network import Model, build_model, forward
from .tensor import Tape, Tensor

__all__ = ["ModelConfig", "TrainConfig", "RunConfig", "ScheduleEntry",
           "Model", "build_model", "forward", "Tape", "Tensor"]
__version__ = "0.1.0"

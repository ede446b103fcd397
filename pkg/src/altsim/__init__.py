"""Learned deformable-object dynamics on graphs: an alternating graph-ConvLSTM,
vanilla ConvLSTM baselines, a forward-Euler mass-spring data generator, and a
training/evaluation harness, all on a small self-contained autodiff engine."""

from .errors import (
    ContractError,
    DimensionError,
    DivergenceError,
    FormatError,
    NumericFaultError,
    TrainingDivergedError,
)
from .tensor import Tape, Tensor, backward, finite_diff_grad

__all__ = [
    "ContractError",
    "DimensionError",
    "DivergenceError",
    "FormatError",
    "NumericFaultError",
    "TrainingDivergedError",
    "Tape",
    "Tensor",
    "backward",
    "finite_diff_grad",
]

__version__ = "0.1.0"

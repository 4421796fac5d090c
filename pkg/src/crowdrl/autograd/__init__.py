"""Minimal reverse-mode autodiff over float64 numpy arrays."""
from . import tensor as F
from .optim import Adam, AdamState, adam_step
from .serialize import CheckpointError, load_params, save_params
from .tensor import ShapeError, Tape, TapeError, Tensor

__all__ = [
    "F", "Adam", "AdamState", "adam_step", "CheckpointError", "load_params", "save_params",
    "ShapeError", "Tape", "TapeError", "Tensor",
]

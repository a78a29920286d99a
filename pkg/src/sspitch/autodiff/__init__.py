"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, grad_check
from .optim import Adam
from .tensor import ShapeError, Tensor, as_tensor, parameter

__all__ = [
    "Adam", "CheckpointError", "GradCheckResult", "ShapeError", "Tensor",
    "as_tensor", "grad_check", "load_checkpoint", "ops", "parameter",
    "save_checkpoint",
]

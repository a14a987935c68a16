"""Minimal float32 tensor core: tape autodiff, Adam, gradient checking."""

from . import ops
from .checkpoint import FORMAT_TAG, CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .ops import ShapeError
from .optim import Adam, AdamState, adam_step
from .tensor import DTYPE, Tape, Tensor, as_tensor

__all__ = [
    "Adam", "AdamState", "CheckpointError", "DTYPE", "FORMAT_TAG", "ShapeError",
    "Tape", "Tensor", "adam_step", "as_tensor", "grad_check", "load_checkpoint",
    "ops", "save_checkpoint",
]

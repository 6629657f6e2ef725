from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import BatchNorm, Linear, Module, PointwiseConv1d
from .optim import AdamW, AdamWState, adamw_step, lr_schedule
from .tensor import DimensionError, Tape, Tensor, get_dtype, no_grad, precision, set_precision

__all__ = [
    "AdamW",
    "AdamWState",
    "BatchNorm",
    "DimensionError",
    "Linear",
    "Module",
    "PointwiseConv1d",
    "Tape",
    "Tensor",
    "adamw_step",
    "functional",
    "get_dtype",
    "load_checkpoint",
    "lr_schedule",
    "no_grad",
    "precision",
    "save_checkpoint",
    "set_precision",
]

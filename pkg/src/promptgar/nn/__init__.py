from . import tensor as F
from .finite_diff import NondeterministicError, fd_gradient, relative_error
from .modules import MLP, LayerNorm, Linear, Module, parameter
from .optim import AdamW, clip_grad_norm, cosine_lr
from .tensor import RULES, ShapeError, Tape, Tensor, backward, no_grad

__all__ = [
    "F",
    "Tensor",
    "Tape",
    "RULES",
    "ShapeError",
    "backward",
    "no_grad",
    "fd_gradient",
    "relative_error",
    "NondeterministicError",
    "Module",
    "Linear",
    "LayerNorm",
    "MLP",
    "parameter",
    "AdamW",
    "cosine_lr",
    "clip_grad_norm",
]

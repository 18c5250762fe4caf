"""Small dense-tensor library: reverse-mode autodiff, Adam, positions."""

import numpy as np

from . import ops
from .gradcheck import check_gradients, numeric_grad, relative_error
from .optim import AdamState, adam_step, warmup_lr
from .tensor import (
    NonFiniteError,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    float64_mode,
    gradients,
    grad_enabled,
    no_grad,
)


def sinusoidal_positions(length, dim):
    """Fixed sin/cos position table of shape (length, dim)."""
    if dim % 2:
        raise ValueError(f"positional dimension must be even, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    rate = np.power(10000.0, np.arange(0, dim, 2, dtype=np.float64) / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos / rate)
    pe[:, 1::2] = np.cos(pos / rate)
    return Tensor(pe)


__all__ = [
    "AdamState",
    "NonFiniteError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "check_gradients",
    "default_dtype",
    "float64_mode",
    "gradients",
    "grad_enabled",
    "no_grad",
    "numeric_grad",
    "ops",
    "relative_error",
    "sinusoidal_positions",
    "warmup_lr",
]

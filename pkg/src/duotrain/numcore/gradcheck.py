"""Central finite-difference oracle for checking backward passes."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, float64_mode


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(fn, tensors, index, eps=1e-6, entries=None):
    """d fn() / d tensors[index] by central differences.

    ``entries`` limits the check to a subset of flat positions (the rest are
    left NaN) which keeps checks on big tensors affordable.
    """
    t = tensors[index]
    flat = t.data.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    positions = range(flat.size) if entries is None else entries
    for i in positions:
        orig = flat[i]
        flat[i] = orig + eps
        up = float(fn().data)
        flat[i] = orig - eps
        down = float(fn().data)
        flat[i] = orig
        grad[i] = (up - down) / (2 * eps)
    return grad.reshape(t.shape)


def check_gradients(fn, tensors, eps=1e-6, entries=None):
    """Return the worst relative error between autodiff and finite differences.

    ``fn`` takes no arguments and rebuilds the scalar loss from ``tensors``
    (which must require grad). Run inside :func:`float64_mode` for
    meaningful tolerances.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    backward(loss)
    worst = 0.0
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        sel = None if entries is None else entries.get(i)
        numeric = numeric_grad(fn, tensors, i, eps=eps, entries=sel)
        mask = ~np.isnan(numeric)
        worst = max(worst, relative_error(analytic[mask], numeric[mask]))
    return worst


def random_tensor(rng, shape, scale=1.0):
    with float64_mode():
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    # per-parameter step counts; a parameter outside the current graph is
    # skipped entirely so its moments and step stay untouched
    t: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr=None):
    """Update ``params`` (name -> Tensor) in place from ``grads`` (name -> array).

    A ``None`` gradient means the parameter took no part in the loss; it is
    left bitwise unchanged. ``lr`` overrides ``state.lr`` for this step
    (used by warmup schedules).
    """
    lr = state.lr if lr is None else lr
    b1, b2, eps = state.beta1, state.beta2, state.eps
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
            state.t[name] = 0
        t = state.t[name] + 1
        state.t[name] = t
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)
    return params, state


def warmup_lr(step, base_lr, warmup_steps):
    """Linear warmup to ``base_lr`` over ``warmup_steps`` (1-based step), then flat."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup_steps)

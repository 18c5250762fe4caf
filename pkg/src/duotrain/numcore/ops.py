"""Differentiable primitives.

Each primitive computes its output with numpy and registers a closure that
maps the output gradient to one gradient per input.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_node

MASK_VALUE = -1e9


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _const(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a = as_tensor(a)
    b = _const(b, a)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, (a, b), back, "add")


def sub(a, b):
    if not isinstance(a, Tensor):
        a = _const(a, b)
    b = _const(b, a)
    out = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(out, (a, b), back, "sub")


def mul(a, b):
    a = as_tensor(a)
    b = _const(b, a)
    out = a.data * b.data

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), back, "mul")


def div(a, b):
    a = as_tensor(a)
    b = _const(b, a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data  # non-finite results are caught by make_node

    def back(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), back, "div")


def exp(x):
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return make_node(out, (x,), lambda g: (g / x.data,), "log")


def relu(x):
    keep = x.data > 0
    out = np.where(keep, x.data, 0).astype(x.dtype)
    return make_node(out, (x,), lambda g: (g * keep,), "relu")


def tanh(x):
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1 - out * out),), "tanh")


# -- reductions and shape ----------------------------------------------------

def sum(x, axis=None, keepdims=False):
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(np.asarray(out, dtype=x.dtype), (x,), back, "sum")


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    out = x.data.reshape(shape)
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return make_node(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(xs, axis=0):
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, tuple(xs), back, "concat")


def pick(x, index):
    """``x[..., index]`` along the last axis, one index per leading position."""
    index = np.asarray(index)
    out = np.take_along_axis(x.data, index[..., None], axis=-1)[..., 0]

    def back(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, index[..., None], g[..., None], axis=-1)
        return (gx,)

    return make_node(out, (x,), back, "pick")


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    a = as_tensor(a)
    b = _const(b, a)
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            bt = np.swapaxes(b.data, -1, -2) if b.ndim > 1 else b.data[None, :]
            gg = g if b.ndim > 1 else g[..., None]
            ga = _unbroadcast(np.matmul(gg, bt), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # shared weight: fold batch dims into rows
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_node(out, (a, b), back, "matmul")


def linear(x, weight, bias=None):
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- normalization and probabilities -----------------------------------------

def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), back, "softmax")


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def back(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), back, "log_softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def back(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = _unbroadcast(g * xhat, gamma.shape)
        if beta.requires_grad:
            gb = _unbroadcast(g, beta.shape)
        if x.requires_grad:
            gh = g * gamma.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return make_node(out.astype(x.dtype), (x, gamma, beta), back, "layer_norm")


# -- sequence primitives ------------------------------------------------------

def embedding(ids, table):
    """Row lookup ``table[ids]``; out-of-range ids raise IndexError."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for vocabulary of size {table.shape[0]}")
    out = table.data[ids]

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return make_node(out, (table,), back, "embedding")


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """Convolution over time.

    x: (batch, time, in_ch); weight: (kernel, in_ch, out_ch).
    Output length is floor((T + 2*padding - kernel) / stride) + 1.
    """
    k, cin, cout = weight.shape
    bsz, t, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0)))
    t_out = (t + 2 * padding - k) // stride + 1
    if t_out < 1:
        raise ValueError("input too short for convolution")
    idx = np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]  # (t_out, k)
    cols = xp[:, idx, :].reshape(bsz, t_out, k * cin)
    w2 = weight.data.reshape(k * cin, cout)
    out = cols @ w2
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx = gw = None
        if x.requires_grad:
            gcols = (g @ w2.T).reshape(bsz, t_out, k, cin)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, idx[:, j], :] += gcols[:, :, j, :]
            gx = gxp[:, padding:padding + t, :]
        if weight.requires_grad:
            gw = (cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(k, cin, cout)
        if bias is None:
            return gx, gw
        gb = g.reshape(-1, cout).sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return make_node(out.astype(x.dtype), parents, back, "conv1d")


def dropout(x, rate, rng=None, training=True):
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate <= 0 or rng is None:
        return x
    if rate >= 1:
        keep = np.zeros(x.shape, dtype=x.dtype)
    else:
        keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make_node(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def attention(q, k, v, mask=None):
    """Scaled dot-product attention.

    q: (..., Tq, d), k and v: (..., Tk, d). ``mask`` is an additive numpy
    array broadcastable to (..., Tq, Tk), holding 0 or MASK_VALUE.
    """
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = np.matmul(q.data, np.swapaxes(k.data, -1, -2)) * scale
    if mask is not None:
        scores = scores + mask
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    p = e / e.sum(axis=-1, keepdims=True)
    out = np.matmul(p, v.data)

    def back(g):
        gv = np.matmul(np.swapaxes(p, -1, -2), g)
        gp = np.matmul(g, np.swapaxes(v.data, -1, -2))
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        gq = np.matmul(gs, k.data)
        gk = np.matmul(np.swapaxes(gs, -1, -2), q.data)
        return gq, gk, gv

    return make_node(out.astype(q.dtype), (q, k, v), back, "attention")

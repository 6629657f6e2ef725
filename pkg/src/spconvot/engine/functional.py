"""Differentiable operations on :class:`Tensor`.

Only the shapes the network needs are supported; there is no general
broadcasting beyond scalar operands and trailing-axis biases.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return make_result(a.data + b, [a], a.accumulate)
    _check(a.shape == b.shape, f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    return make_result(a.data + b.data, [a, b], backward)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        return make_result(a.data * s, [a], lambda g: a.accumulate(g * s))
    _check(a.shape == b.shape, f"mul: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return make_result(a.data * b.data, [a, b], backward)


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_result(np.asarray(a.data.sum()), [a], lambda g: a.accumulate(np.broadcast_to(g, a.shape)))


def mean(a: Tensor) -> Tensor:
    n = a.size

    def backward(g):
        a.accumulate(np.broadcast_to(g / n, a.shape))

    return make_result(np.asarray(a.data.mean()), [a], backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return make_result(a.data.reshape(shape), [a], lambda g: a.accumulate(g.reshape(a.shape)))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_result(np.ascontiguousarray(a.data.transpose(axes)), [a], lambda g: a.accumulate(g.transpose(inv)))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ax = axis % parts[0].ndim
    sizes = [p.shape[ax] for p in parts]
    for p in parts[1:]:
        other = tuple(s for i, s in enumerate(p.shape) if i != ax)
        ref = tuple(s for i, s in enumerate(parts[0].shape) if i != ax)
        _check(other == ref, f"concat: incompatible shapes {[q.shape for q in parts]}")
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=ax)):
            p.accumulate(piece)

    return make_result(np.concatenate([p.data for p in parts], axis=ax), parts, backward)


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (B, In) and ``W`` of shape (In, Out)."""
    _check(x.ndim == 2 and W.ndim == 2, f"affine: x{x.shape} and W{W.shape} must be 2-D")
    _check(x.shape[1] == W.shape[0], f"affine: x{x.shape} inner dim does not match W{W.shape}")
    if b is not None:
        _check(b.shape == (W.shape[1],), f"affine: bias{b.shape} does not match W{W.shape}")
    out = x.data @ W.data
    if b is not None:
        out = out + b.data

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ W.data.T)
        if W.requires_grad:
            W.accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))

    parents = [x, W] if b is None else [x, W, b]
    return make_result(out, parents, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the leading axis: (B,n,k) @ (B,k,m)."""
    _check(a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0] and a.shape[2] == b.shape[1],
           f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.transpose(0, 2, 1))
        if b.requires_grad:
            b.accumulate(a.data.transpose(0, 2, 1) @ g)

    return make_result(a.data @ b.data, [a, b], backward)


def pointwise_conv1d(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Kernel-size-1 convolution: (B,C,N) with W (C',C) gives (B,C',N)."""
    _check(x.ndim == 3, f"pointwise_conv1d: x must be (B,C,N), got {x.shape}")
    _check(W.ndim == 2 and W.shape[1] == x.shape[1],
           f"pointwise_conv1d: W{W.shape} does not match x channels {x.shape[1]}")
    out = np.matmul(W.data, x.data)
    if b is not None:
        _check(b.shape == (W.shape[0],), f"pointwise_conv1d: bias{b.shape} does not match W{W.shape}")
        out = out + b.data[None, :, None]

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.matmul(W.data.T, g))
        if W.requires_grad:
            W.accumulate(np.einsum("bon,bin->oi", g, x.data))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2)))

    parents = [x, W] if b is None else [x, W, b]
    return make_result(out, parents, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0), [x], lambda g: x.accumulate(g * mask))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, channel_axis: int = 1, eps: float = BN_EPS,
               momentum: float = BN_MOMENTUM) -> Tensor:
    """Batch normalization with statistics over every axis except ``channel_axis``.

    In training mode the running buffers are updated in place with an
    exponential moving average (unbiased variance, as is customary).
    """
    ax = channel_axis % x.ndim
    C = x.shape[ax]
    _check(gamma.shape == (C,) and beta.shape == (C,), f"batch_norm: gamma/beta must be ({C},)")
    red = tuple(i for i in range(x.ndim) if i != ax)
    bshape = [1] * x.ndim
    bshape[ax] = C
    n = x.size // C

    if training:
        _check(n >= 1, "batch_norm: empty batch")
        mu = x.data.mean(axis=red)
        var = x.data.var(axis=red)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        unbiased = var * n / (n - 1) if n > 1 else var
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=red))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=red))
        if x.requires_grad:
            gx = g * gamma.data.reshape(bshape)
            if training:
                m1 = gx.mean(axis=red, keepdims=True)
                m2 = (gx * xhat).mean(axis=red, keepdims=True)
                x.accumulate((gx - m1 - xhat * m2) * inv.reshape(bshape))
            else:
                x.accumulate(gx * inv.reshape(bshape))

    return make_result(out, [x, gamma, beta], backward)


def max_over_points(x: Tensor) -> Tensor:
    """Per-channel max over the last axis of a (B,C,N) tensor.

    Ties route the gradient to the lowest point index (``argmax`` semantics).
    """
    _check(x.ndim == 3, f"max_over_points: x must be (B,C,N), got {x.shape}")
    if x.shape[2] == 0:
        raise ValueError("max_over_points: empty point set")
    idx = x.data.argmax(axis=2)
    out = np.take_along_axis(x.data, idx[..., None], axis=2)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=2)
        x.accumulate(gx)

    return make_result(out, [x], backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    _check(logits.ndim == 2 and labels.shape == (logits.shape[0],),
           f"cross_entropy: logits{logits.shape} vs labels{labels.shape}")
    n_cls = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise IndexError(f"cross_entropy: label outside [0, {n_cls})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(labels.size)
    loss = (logsum - z[rows, labels]).mean()

    def backward(g):
        p = np.exp(z - logsum[:, None])
        p[rows, labels] -= 1.0
        logits.accumulate(p * (g / labels.size))

    return make_result(np.asarray(loss, dtype=logits.data.dtype), [logits], backward)


def gather_rows(table: Tensor, idx) -> Tensor:
    """Row lookup ``table[idx]``; backward scatters into the used rows."""
    idx = np.asarray(idx, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index outside [0, {n})")

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx.reshape(-1), g.reshape(-1, *table.shape[1:]))
            table.accumulate(gt)

    return make_result(table.data[idx], [table], backward)


def add_identity(T: Tensor) -> Tensor:
    """``T + I`` for a batch of square matrices (B,C,C)."""
    eye = np.eye(T.shape[-1], dtype=T.data.dtype)
    return make_result(T.data + eye, [T], T.accumulate)

"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-6,
                   idx: np.ndarray | None = None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``t`` at flat positions ``idx``."""
    flat = t.data.reshape(-1)
    idx = np.arange(flat.size) if idx is None else idx
    out = np.empty(idx.size)
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = float(fn().data)
        flat[i] = old - h
        fm = float(fn().data)
        flat[i] = old
        out[n] = (fp - fm) / (2 * h)
    return out


def analytic_grads(fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> list[np.ndarray]:
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        out = fn()
    tape.backward(out)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-6,
              max_entries: int | None = None, seed: int = 0) -> float:
    """Worst relative error between tape gradients and central differences.

    The error is taken per tensor.  Its denominator is floored at the norm
    of the whole checked gradient, so a tensor whose true gradient is zero
    (a shift cancelled by a later batch norm, say) is judged against the
    overall gradient scale instead of against finite-difference noise.
    With ``max_entries`` only that many randomly chosen entries per tensor
    are differenced.
    """
    grads = analytic_grads(fn, tensors)
    rng = np.random.default_rng(seed)
    pairs = []
    for t, g in zip(tensors, grads):
        n = t.data.size
        idx = np.arange(n)
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        pairs.append((g.reshape(-1)[idx], numerical_grad(fn, t, h, idx)))
    total = np.sqrt(sum(max(np.sum(a * a), np.sum(b * b)) for a, b in pairs))
    return max((rel_error(a, b, max(total, 1e-12)) for a, b in pairs), default=0.0)

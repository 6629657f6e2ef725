"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array.  Operations executed while a
:class:`Tape` is active append a node (output tensor, backward closure) to
that tape; :meth:`Tape.backward` replays the nodes in reverse execution
order, which is always a valid reverse topological order.

Tapes are thread-local, so independent shards can be differentiated on
separate threads.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPES = {32: np.float32, 64: np.float64}
_precision = {"dtype": np.float64}
_local = threading.local()


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def set_precision(bits: int) -> None:
    if bits not in _DTYPES:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _precision["dtype"] = _DTYPES[bits]


def get_dtype():
    return _precision["dtype"]


@contextmanager
def precision(bits: int):
    old = _precision["dtype"]
    set_precision(bits)
    try:
        yield
    finally:
        _precision["dtype"] = old


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or get_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        if self._tape is None:
            raise RuntimeError("tensor was not produced under an active Tape")
        self._tape.backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar; implementations live in functional
    def __add__(self, other):
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import functional as F

        return F.add(self, F.mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __neg__(self):
        from . import functional as F

        return F.mul(self, -1.0)

    def sum(self):
        from . import functional as F

        return F.sum(self)

    def reshape(self, *shape):
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F

        return F.transpose(self, axes)


class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        stack.pop()

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        out._tape = self
        self.nodes.append((out, backward))

    def backward(self, loss: Tensor, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if loss.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(loss.data)
        loss.grad = np.asarray(grad, dtype=loss.data.dtype).reshape(loss.shape).copy()
        for out, fn in reversed(self.nodes):
            if out.grad is not None:
                fn(out.grad)
        # intermediate buffers are no longer needed once the tape is spent
        for out, _ in self.nodes:
            if out is not loss:
                out.grad = None
        self.nodes.clear()


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap ``data`` as an op output and record it if any parent needs grads."""
    needs = any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.name = None
    out._tape = None
    if needs:
        tape = active_tape()
        if tape is not None:
            out.requires_grad = True
            tape.record(out, backward)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameters_grads(params: Iterable[Tensor]) -> list[np.ndarray | None]:
    return [p.grad for p in params]

"""Parameter containers for the dense layers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, get_dtype


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(get_dtype())


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, np.ndarray):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for name, arr in state.items():
            if name in params:
                target = params[name].data
            elif name in buffers:
                target = buffers[name]
            else:
                raise KeyError(f"unexpected entry {name!r} in state")
            if target.shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {target.shape}")
            target[...] = arr
        missing = set(params) | set(buffers)
        missing -= set(state)
        if missing:
            raise KeyError(f"missing entries: {sorted(missing)}")


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Tensor(uniform_init(rng, (in_features, out_features), in_features), requires_grad=True)
        self.bias = Tensor(uniform_init(rng, (out_features,), in_features), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.affine(x, self.weight, self.bias)

    def zero_(self) -> None:
        self.weight.data[...] = 0
        if self.bias is not None:
            self.bias.data[...] = 0


class PointwiseConv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Tensor(uniform_init(rng, (out_channels, in_channels), in_channels), requires_grad=True)
        self.bias = Tensor(uniform_init(rng, (out_channels,), in_channels), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.pointwise_conv1d(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch norm over all axes but ``channel_axis``; also used on sparse feature rows."""

    def __init__(self, channels: int, channel_axis: int = 1):
        dt = get_dtype()
        self.gamma = Tensor(np.ones(channels, dtype=dt), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dt), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dt)
        self.running_var = np.ones(channels, dtype=dt)
        self.channel_axis = channel_axis

    def __call__(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, channel_axis=self.channel_axis)

"""Sparse network blocks built from submanifold convolutions."""

from __future__ import annotations

import numpy as np

from ..engine import functional as F
from ..engine.nn import BatchNorm, Module, uniform_init
from ..engine.tensor import Tensor
from .ops import submanifold_conv
from .tensor import SparseTensor4D


class ConfigError(ValueError):
    pass


def _extent4(k) -> tuple[int, int, int, int]:
    if isinstance(k, int):
        return (k, k, k, k)
    k = tuple(int(v) for v in k)
    if len(k) != 4:
        raise ConfigError(f"kernel extent must have 4 entries, got {k}")
    return k


class SubMConv(Module):
    def __init__(self, in_channels: int, out_channels: int, extent, rng: np.random.Generator, bias: bool = True):
        self.extent = _extent4(extent)
        if any(e % 2 == 0 for e in self.extent):
            raise ConfigError(f"kernel extents must be odd, got {self.extent}")
        K = int(np.prod(self.extent))
        fan_in = K * in_channels
        self.weight = Tensor(uniform_init(rng, (K, in_channels, out_channels), fan_in), requires_grad=True)
        self.bias = Tensor(uniform_init(rng, (out_channels,), fan_in), requires_grad=True) if bias else None

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[2]

    def __call__(self, st: SparseTensor4D) -> SparseTensor4D:
        return submanifold_conv(st, self.weight, self.bias, self.extent)


class ConvBNReLU(Module):
    """Submanifold conv, batch norm, ReLU.  The conv has no bias since BN would cancel it."""

    def __init__(self, in_channels: int, out_channels: int, extent, rng: np.random.Generator):
        self.conv = SubMConv(in_channels, out_channels, extent, rng, bias=False)
        self.bn = BatchNorm(out_channels)

    def __call__(self, st: SparseTensor4D) -> SparseTensor4D:
        st = self.conv(st)
        return st.replace(F.relu(self.bn(st.feats)))


class MSTCN(Module):
    """Parallel purely temporal submanifold convolutions, concatenated over channels."""

    def __init__(self, channels: int, rng: np.random.Generator, kernel_sizes=(3, 5, 7, 9), bias: bool = True):
        n = len(kernel_sizes)
        if channels % n:
            raise ConfigError(f"MS-TCN channels {channels} not divisible by {n} branches")
        self.kernel_sizes = tuple(kernel_sizes)
        self.branches = [SubMConv(channels, channels // n, (k, 1, 1, 1), rng, bias) for k in kernel_sizes]

    def __call__(self, st: SparseTensor4D) -> SparseTensor4D:
        outs = [branch(st).feats for branch in self.branches]
        return st.replace(F.concat(outs, axis=1))


class Bottleneck(Module):
    """1-extent reduce, 3-extent mix, 1-extent expand, each with BN and ReLU, plus a residual.

    The residual passes through a 1-extent channel-matching convolution
    when input and output widths differ.
    """

    def __init__(self, in_channels: int, bottleneck_channels: int, out_channels: int, rng: np.random.Generator):
        if bottleneck_channels * 2 != in_channels:
            raise ConfigError(f"bottleneck width {bottleneck_channels} must be half of input width {in_channels}")
        self.reduce = ConvBNReLU(in_channels, bottleneck_channels, 1, rng)
        self.mix = ConvBNReLU(bottleneck_channels, bottleneck_channels, 3, rng)
        self.expand = ConvBNReLU(bottleneck_channels, out_channels, 1, rng)
        self.match = SubMConv(in_channels, out_channels, 1, rng) if in_channels != out_channels else None

    def __call__(self, st: SparseTensor4D) -> SparseTensor4D:
        h = self.expand(self.mix(self.reduce(st)))
        skip = self.match(st).feats if self.match is not None else st.feats
        return st.replace(F.add(h.feats, skip))

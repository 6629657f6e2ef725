"""Frame-wise learned transform: each frame's points with their transformed copy appended."""

from __future__ import annotations

import numpy as np

from .engine import functional as F
from .engine.nn import BatchNorm, Linear, Module, PointwiseConv1d
from .engine.tensor import Tensor


class TNet(Module):
    """Predicts a per-frame C x C transform and appends the transformed points.

    ``conv_widths`` and ``fc_widths`` default to 64-128-1024 and 512-256.
    The layer producing the flattened transform starts at zero so the
    initial transform is the identity.  Layers feeding a batch norm have
    no bias of their own.
    """

    def __init__(self, channels: int, rng: np.random.Generator,
                 conv_widths=(64, 128, 1024), fc_widths=(512, 256)):
        self.channels = channels
        widths = [channels, *conv_widths]
        self.convs = [PointwiseConv1d(a, b, rng, bias=False) for a, b in zip(widths[:-1], widths[1:])]
        self.conv_bns = [BatchNorm(b, channel_axis=1) for b in widths[1:]]
        fcs = [conv_widths[-1], *fc_widths]
        self.fcs = [Linear(a, b, rng, bias=False) for a, b in zip(fcs[:-1], fcs[1:])]
        self.fc_bns = [BatchNorm(b, channel_axis=1) for b in fcs[1:]]
        self.head = Linear(fcs[-1], channels * channels, rng)
        self.head.zero_()

    def transform(self, x: Tensor) -> Tensor:
        """Transform matrices for a (B', N, C) batch of frames: (B', C, C)."""
        if x.ndim != 3 or x.shape[2] != self.channels:
            raise ValueError(f"expected (B', N, {self.channels}) input, got {x.shape}")
        if x.shape[1] == 0:
            raise ValueError("T-Net got a frame with no points")
        h = F.transpose(x, (0, 2, 1))
        for conv, bn in zip(self.convs, self.conv_bns):
            h = F.relu(bn(conv(h)))
        z = F.max_over_points(h)
        for fc, bn in zip(self.fcs, self.fc_bns):
            z = F.relu(bn(fc(z)))
        flat = self.head(z)
        T = F.reshape(flat, (x.shape[0], self.channels, self.channels))
        return F.add_identity(T)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (transform, y) with y of shape (B', N, 2C); y[..., :C] is x."""
        T = self.transform(x)
        xt = F.transpose(x, (0, 2, 1))
        moved = F.transpose(F.matmul(T, xt), (0, 2, 1))
        return T, F.concat([x, moved], axis=2)

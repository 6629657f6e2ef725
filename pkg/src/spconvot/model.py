"""The sparse spatio-temporal action classifier and its two-model ensemble."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import functional as F
from .engine.nn import BatchNorm, Linear, Module
from .engine.tensor import Tensor, get_dtype
from .sparse.layers import MSTCN, Bottleneck, ConfigError, ConvBNReLU
from .sparse.ops import global_sparse_max_pool, sparse_max_pool
from .sparse.tensor import SparseTensor4D, voxelize
from .tnet import TNet

FUSION_MODES = ("concat_zero_pad", "average")


@dataclass
class ModelConfig:
    """Architecture hyperparameters.  The defaults are the full-width network."""

    in_channels: int = 3  # raw per-point channels, xyz first
    use_parts: bool = False
    num_part_labels: int = 20  # embedding table gets one more row for background
    part_dim: int = 3
    frames: int = 32
    num_points: int = 512
    resolution: int = 64
    num_classes: int = 5
    fusion: str = "concat_zero_pad"
    aggregation: str = "mean"
    tnet_conv: tuple[int, ...] = (64, 128, 1024)
    tnet_fc: tuple[int, ...] = (512, 256)
    conv1_channels: int = 64
    conv1_extent: tuple[int, ...] = (5, 5, 5, 5)
    conv2_channels: int = 128
    conv2_extent: tuple[int, ...] = (1, 7, 7, 7)
    tcn_kernels: tuple[int, ...] = (3, 5, 7, 9)
    block1: tuple[int, int] = (64, 256)  # (bottleneck width, output width)
    block2: tuple[int, int] = (128, 1024)
    pool: tuple[int, int, int] = (3, 2, 1)  # kernel, stride, padding

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                setattr(self, f.name, tuple(v))
        self.validate()

    @property
    def channels(self) -> int:
        """C: per-point channels entering the T-Net."""
        return self.in_channels + (self.part_dim if self.use_parts else 0)

    @property
    def feature_dim(self) -> int:
        return self.block2[1]

    @property
    def head_width(self) -> int:
        return 2 * self.feature_dim if self.fusion == "concat_zero_pad" else self.feature_dim

    def validate(self) -> None:
        if self.in_channels < 3:
            raise ConfigError("need at least the three geometry channels")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.block1[0] * 2 != self.conv2_channels or self.block2[0] * 2 != self.block1[1]:
            raise ConfigError("each bottleneck width must be half of its input width")
        if min(self.frames, self.resolution, self.num_points) < 1:
            raise ConfigError("frames, resolution and num_points must be positive")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Narrow preset that trains on a single CPU core in minutes."""
        base = dict(resolution=32, tnet_conv=(32, 64, 128), tnet_fc=(64, 32), conv1_channels=16,
                    conv1_extent=(3, 3, 3, 3), conv2_channels=32, conv2_extent=(1, 3, 3, 3),
                    block1=(16, 64), block2=(32, 128))
        base.update(overrides)
        return cls(**base)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment, tuples are comma-separated."""
        kinds = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "preset":
                continue
            if key not in kinds:
                raise ConfigError(f"line {n}: unknown key {key!r}")
            default = kinds[key].default
            try:
                if isinstance(default, bool):
                    if val.lower() not in ("true", "false", "1", "0"):
                        raise ValueError(val)
                    values[key] = val.lower() in ("true", "1")
                elif isinstance(default, int):
                    values[key] = int(val)
                elif isinstance(default, tuple):
                    values[key] = tuple(int(v) for v in val.split(",") if v.strip())
                else:
                    values[key] = val
            except ValueError as exc:
                raise ConfigError(f"line {n}: bad value for {key}: {val!r}") from exc
        preset = _preset_of(text)
        return cls.desk(**values) if preset == "desk" else cls(**values)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())


def _preset_of(text: str) -> str:
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line.startswith("preset") and "=" in line:
            name = line.split("=", 1)[1].strip()
            if name not in ("full", "desk"):
                raise ConfigError(f"unknown preset {name!r}")
            return name
    return "full"


class PartEmbeddingTable(Module):
    """Learned 3-vector per body-part label; row 0 is background."""

    def __init__(self, num_labels: int, rng: np.random.Generator, dim: int = 3):
        self.weight = Tensor(rng.normal(scale=0.1, size=(num_labels + 1, dim)), requires_grad=True)

    @property
    def rows(self) -> int:
        return self.weight.shape[0]

    def __call__(self, labels) -> Tensor:
        labels = np.asarray(labels, dtype=np.int64)
        flat = F.gather_rows(self.weight, labels.reshape(-1))
        return F.reshape(flat, (*labels.shape, self.weight.shape[1]))


@dataclass
class Batch:
    """Fixed-size input for one forward pass.

    ``points`` is (P, T, N, C_in) over every person of every sequence;
    ``owner[p]`` is the sequence person p belongs to, with people of one
    sequence listed in order.
    """

    points: np.ndarray
    owner: np.ndarray
    parts: np.ndarray | None = None
    labels: np.ndarray | None = None
    num_sequences: int = field(default=0)

    def __post_init__(self):
        self.owner = np.asarray(self.owner, dtype=np.int64)
        if self.points.ndim != 4 or self.points.shape[0] != self.owner.size:
            raise ValueError(f"points {self.points.shape} do not match {self.owner.size} owners")
        if self.points.shape[2] == 0:
            raise ValueError("every person needs at least one point")
        if not self.num_sequences:
            self.num_sequences = int(self.owner.max()) + 1 if self.owner.size else 0


def fuse_people(features: Tensor, owner, num_sequences: int, mode: str) -> Tensor:
    """Per-person (P, D) features to per-sequence head input.

    ``concat_zero_pad`` gives (S, 2D) with a zero block for a lone person,
    ``average`` gives the (S, D) mean over the people of each sequence.
    """
    owner = np.asarray(owner, dtype=np.int64)
    P, D = features.shape
    counts = np.bincount(owner, minlength=num_sequences)
    if counts.max(initial=0) > 2:
        raise ConfigError("at most two people per sequence are supported")
    if (counts == 0).any():
        raise ValueError("every sequence needs at least one person")
    first = np.searchsorted(owner, np.arange(num_sequences))
    if np.any(np.diff(owner) < 0):
        raise ValueError("people must be grouped by sequence")
    second = np.where(counts == 2, first + 1, -1)
    if mode == "concat_zero_pad":
        padded = F.concat([features, Tensor(np.zeros((1, D), dtype=features.data.dtype))], axis=0)
        idx = np.column_stack([first, np.where(second < 0, P, second)]).reshape(-1)
        return F.reshape(F.gather_rows(padded, idx), (num_sequences, 2 * D))
    if mode == "average":
        other = np.where(second < 0, first, second)
        return F.mul(F.add(F.gather_rows(features, first), F.gather_rows(features, other)), 0.5)
    raise ConfigError(f"unknown fusion mode {mode!r}")


class ActionNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        C = cfg.channels
        self.parts = PartEmbeddingTable(cfg.num_part_labels, rng, cfg.part_dim) if cfg.use_parts else None
        self.tnet = TNet(C, rng, cfg.tnet_conv, cfg.tnet_fc)
        self.conv1 = ConvBNReLU(2 * C, cfg.conv1_channels, cfg.conv1_extent, rng)
        self.conv2 = ConvBNReLU(cfg.conv1_channels, cfg.conv2_channels, cfg.conv2_extent, rng)
        self.tcn = MSTCN(cfg.conv2_channels, rng, cfg.tcn_kernels, bias=False)
        self.tcn_bn = BatchNorm(cfg.conv2_channels)
        self.block1 = Bottleneck(cfg.conv2_channels, cfg.block1[0], cfg.block1[1], rng)
        self.block2 = Bottleneck(cfg.block1[1], cfg.block2[0], cfg.block2[1], rng)
        self.head = Linear(cfg.head_width, cfg.num_classes, rng)

    def _pool(self, st: SparseTensor4D) -> SparseTensor4D:
        k, s, p = self.cfg.pool
        return sparse_max_pool(st, k, s, p)

    def voxels(self, batch: Batch, trace: list | None = None) -> SparseTensor4D:
        """T-Net embedding of every frame, mapped to the (T, G, G, G) grid."""
        cfg = self.cfg
        pts = batch.points
        P, T, N, Cin = pts.shape
        if Cin != cfg.in_channels:
            raise ValueError(f"expected {cfg.in_channels} input channels, got {Cin}")
        x = Tensor(pts.reshape(P * T, N, Cin).astype(get_dtype(), copy=False))
        if self.parts is not None:
            if batch.parts is None:
                raise ValueError("config uses part labels but the batch has none")
            x = F.concat([x, self.parts(batch.parts.reshape(P * T, N))], axis=2)
        _, y = self.tnet(x)
        _note(trace, "input", (P, T, N, y.shape[2]))
        owner = np.repeat(np.arange(P), T * N)
        t_idx = np.tile(np.repeat(np.arange(T), N), P)
        G = cfg.resolution
        st = voxelize(F.reshape(y, (P * T * N, y.shape[2])), owner, t_idx, (T, G, G, G), P, cfg.aggregation)
        _note(trace, "voxel", _dense(st))
        return st

    def features(self, st: SparseTensor4D, trace: list | None = None) -> Tensor:
        """Sparse backbone from voxels to per-person (P, D) features."""
        st = self.conv1(st)
        _note(trace, "conv1", _dense(st))
        st = self._pool(st)
        _note(trace, "pool1", _dense(st))
        st = self.conv2(st)
        _note(trace, "conv2", _dense(st))
        st = self.tcn(st)
        st = st.replace(F.relu(self.tcn_bn(st.feats)))
        _note(trace, "mstcn", _dense(st))
        st = self._pool(st)
        _note(trace, "pool2", _dense(st))
        st = self.block1(st)
        _note(trace, "bottleneck1", _dense(st))
        st = self.block2(st)
        _note(trace, "bottleneck2", _dense(st))
        feats = global_sparse_max_pool(st)
        _note(trace, "global_pool", feats.shape)
        return feats

    def classify(self, feats: Tensor, batch: Batch, trace: list | None = None) -> Tensor:
        fused = fuse_people(feats, batch.owner, batch.num_sequences, self.cfg.fusion)
        logits = self.head(fused)
        _note(trace, "head", logits.shape)
        return logits

    def __call__(self, batch: Batch, trace: list | None = None) -> Tensor:
        """Logits (S, classes).  ``trace`` collects (layer, dense output shape) pairs."""
        return self.classify(self.features(self.voxels(batch, trace), trace), batch, trace)


def _note(trace: list | None, name: str, shape) -> None:
    if trace is not None:
        trace.append((name, tuple(int(v) for v in shape)))


def _dense(st: SparseTensor4D) -> tuple[int, ...]:
    return (st.batch_size, *st.resolution, st.channels)


def ensemble_predict(logits_a, logits_b, lam_a: float, lam_b: float) -> np.ndarray:
    """Class indices of ``lam_a * A + lam_b * B``.  A zero weight drops its term entirely."""
    a, b = np.asarray(logits_a), np.asarray(logits_b)
    if a.shape != b.shape:
        raise ValueError(f"logit shapes differ: {a.shape} vs {b.shape}")
    terms = [lam * x for lam, x in ((lam_a, a), (lam_b, b)) if lam != 0]
    combined = sum(terms[1:], terms[0]) if terms else np.zeros(a.shape)
    return np.argmax(combined, axis=-1)


def search_lambda(val_a, val_b, labels, step: float = 0.05) -> tuple[float, float]:
    """Convex weights maximising validation accuracy; the lowest ``lam_a`` wins ties."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty validation set")
    n = int(round(1.0 / step))
    best, best_acc = (0.0, 1.0), -1.0
    for k in range(n + 1):
        la = k / n
        acc = float(np.mean(ensemble_predict(val_a, val_b, la, 1.0 - la) == labels))
        if acc > best_acc:
            best, best_acc = (la, 1.0 - la), acc
    return best

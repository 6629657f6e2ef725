"""Sparse 4D voxel tensors and voxel mapping."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..engine.tensor import Tensor, get_dtype, make_result
from .coords import CoordIndex, pack, pack_offset

DIRECT_TABLE_LIMIT = 1 << 25


@dataclass(eq=False)
class CoordSet:
    """Immutable set of active (b, t, x, y, z) sites shared by every tensor on it.

    Caches kernel rulebooks so consecutive submanifold layers at one
    resolution share neighbour searches.
    """

    coords: np.ndarray
    resolution: tuple[int, int, int, int]
    batch_size: int
    keys: np.ndarray = field(init=False, repr=False)
    _index: CoordIndex | None = field(default=None, init=False, repr=False)
    _rulebooks: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.int64).reshape(-1, 5)
        self.coords.setflags(write=False)
        self.resolution = tuple(int(r) for r in self.resolution)
        if self.coords.size:
            lo = self.coords.min(axis=0)
            hi = self.coords.max(axis=0)
            bounds = (self.batch_size, *self.resolution)
            if lo.min() < 0 or any(h >= b for h, b in zip(hi, bounds)):
                raise ValueError(f"coordinates outside bounds {bounds}")
        self.keys = pack(self.coords)

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def index(self) -> CoordIndex:
        if self._index is None:
            self._index = CoordIndex(self.keys)
        return self._index

    def rulebook(self, extent: tuple[int, int, int, int]) -> list[tuple[int, np.ndarray, np.ndarray]]:
        """(offset number, output rows, input rows) for each kernel offset with pairs.

        Offsets are enumerated in C order over (dt, dx, dy, dz), each axis
        running from -k//2 to k//2.  Neighbours outside the resolution are
        dropped, which is the zero-padding rule.
        """
        extent = tuple(int(e) for e in extent)
        if extent in self._rulebooks:
            return self._rulebooks[extent]
        if any(e % 2 == 0 or e < 1 for e in extent):
            raise ValueError(f"kernel extents must be odd and positive, got {extent}")
        found = self.neighbors(extent)
        K = found.shape[1]
        kk, rows = np.nonzero(found.T >= 0)
        src = found[rows, kk]
        bounds = np.searchsorted(kk, np.arange(K + 1))
        book = [(k, rows[bounds[k]:bounds[k + 1]], src[bounds[k]:bounds[k + 1]])
                for k in range(K) if bounds[k + 1] > bounds[k]]
        self._rulebooks[extent] = book
        return book

    def neighbors(self, extent, use_hash: bool | None = None) -> np.ndarray:
        """(M, K) row of the neighbour at each kernel offset, -1 if inactive or off-grid.

        Small grids are resolved through a direct-address table over the
        whole (b, t, x, y, z) volume; larger ones through the hash index.
        Both are exact and produce identical results.
        """
        extent = tuple(int(e) for e in extent)
        M = len(self)
        dims = (self.batch_size, *self.resolution)
        volume = int(np.prod(dims, dtype=np.int64))
        if use_hash is None:
            use_hash = volume > DIRECT_TABLE_LIMIT
        spatial = self.coords[:, 1:]
        # per-axis validity of every shift, combined by broadcasting to (M, kt, kx, ky, kz)
        valid = np.ones((M,) + (1,) * 4, dtype=bool)
        for axis, e in enumerate(extent):
            d = np.arange(-(e // 2), e // 2 + 1)
            pos = spatial[:, axis:axis + 1] + d
            ok = (pos >= 0) & (pos < self.resolution[axis])
            shape = [M, 1, 1, 1, 1]
            shape[axis + 1] = e
            valid = valid & ok.reshape(shape)
        valid = valid.reshape(M, -1)
        if use_hash:
            deltas = np.array([pack_offset(o) for o in kernel_offsets(extent)], dtype=np.int64)
            query = self.keys[:, None] + deltas
            found = np.full(valid.shape, -1, dtype=np.int64)
            found[valid] = self.index.lookup(query[valid])
            return found
        strides = np.cumprod((1,) + dims[:0:-1])[::-1]
        lin = self.coords @ strides
        deltas = np.array([np.dot(o, strides[1:]) for o in kernel_offsets(extent)], dtype=np.int64)
        table = np.full(volume + 1, -1, dtype=np.int32 if M < 2**31 else np.int64)
        table[lin] = np.arange(M)
        # off-grid shifts point at the sentinel slot past the end
        idx = np.where(valid, lin[:, None] + deltas, volume)
        return table[idx].astype(np.int64)


def kernel_offsets(extent) -> list[tuple[int, int, int, int]]:
    ranges = [range(-(e // 2), e // 2 + 1) for e in extent]
    return list(itertools.product(*ranges))


class SparseTensor4D:
    """Features on the active sites of a :class:`CoordSet`; row i belongs to coords[i]."""

    __slots__ = ("cs", "feats")

    def __init__(self, cs: CoordSet, feats: Tensor):
        if feats.ndim != 2 or feats.shape[0] != len(cs):
            raise ValueError(f"feature rows {feats.shape} do not match {len(cs)} sites")
        self.cs = cs
        self.feats = feats

    @classmethod
    def from_arrays(cls, coords, feats, resolution, batch_size: int | None = None,
                    requires_grad: bool = False) -> "SparseTensor4D":
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 5)
        if batch_size is None:
            batch_size = int(coords[:, 0].max()) + 1 if coords.size else 1
        ft = feats if isinstance(feats, Tensor) else Tensor(feats, requires_grad=requires_grad)
        return cls(CoordSet(coords, resolution, batch_size), ft)

    @property
    def coords(self) -> np.ndarray:
        return self.cs.coords

    @property
    def resolution(self) -> tuple[int, int, int, int]:
        return self.cs.resolution

    @property
    def batch_size(self) -> int:
        return self.cs.batch_size

    @property
    def channels(self) -> int:
        return self.feats.shape[1]

    def __len__(self) -> int:
        return len(self.cs)

    def replace(self, feats: Tensor) -> "SparseTensor4D":
        return SparseTensor4D(self.cs, feats)

    def permuted(self, perm: np.ndarray) -> "SparseTensor4D":
        """Same tensor with site storage order permuted (rows follow coords)."""
        from ..engine import functional as F

        perm = np.asarray(perm)
        cs = CoordSet(self.coords[perm], self.resolution, self.batch_size)
        return SparseTensor4D(cs, F.gather_rows(self.feats, perm))

    def to_dense(self, fill: float = 0.0) -> np.ndarray:
        """Dense (B, T, X, Y, Z, C) array with ``fill`` at inactive sites."""
        out = np.full((self.batch_size, *self.resolution, self.channels), fill, dtype=self.feats.data.dtype)
        c = self.coords
        out[c[:, 0], c[:, 1], c[:, 2], c[:, 3], c[:, 4]] = self.feats.data
        return out

    def dump(self) -> str:
        """Text dump, one ``b t x y z c0 c1 ...`` line per site in coordinate order."""
        order = np.argsort(self.cs.keys, kind="stable")
        lines = []
        for r in order:
            coord = " ".join(str(int(v)) for v in self.coords[r])
            vals = " ".join(repr(float(v)) for v in self.feats.data[r])
            lines.append(f"{coord} {vals}" if vals else coord)
        return "\n".join(lines) + ("\n" if lines else "")


def parse_dump(text: str, resolution, batch_size: int | None = None) -> SparseTensor4D:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    coords = np.array([[int(v) for v in r[:5]] for r in rows], dtype=np.int64).reshape(-1, 5)
    n_ch = len(rows[0]) - 5 if rows else 0
    feats = np.array([[float(v) for v in r[5:]] for r in rows], dtype=get_dtype()).reshape(-1, n_ch)
    return SparseTensor4D.from_arrays(coords, feats, resolution, batch_size)


def voxelize(points: Tensor, batch_idx, t_idx, resolution, batch_size: int | None = None,
             aggregation: str = "mean") -> SparseTensor4D:
    """Map points with normalized xyz in their first three channels to voxels.

    Cell index is ``floor(p * G)`` per axis, clamped to ``[0, G-1]`` so a
    coordinate of exactly 1.0 lands in the last cell.  Points sharing a cell
    are aggregated per channel by ``aggregation`` (``mean`` or ``max``).
    """
    if aggregation not in ("mean", "max"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    if not isinstance(points, Tensor):
        points = Tensor(points)
    T, gx, gy, gz = (int(r) for r in resolution)
    batch_idx = np.asarray(batch_idx, dtype=np.int64).reshape(-1)
    t_idx = np.asarray(t_idx, dtype=np.int64).reshape(-1)
    P = points.shape[0]
    F = points.shape[1] if points.ndim == 2 else 0
    if batch_size is None:
        batch_size = int(batch_idx.max()) + 1 if P else 1
    if P == 0:
        cs = CoordSet(np.zeros((0, 5), dtype=np.int64), (T, gx, gy, gz), batch_size)
        return SparseTensor4D(cs, Tensor(np.zeros((0, F), dtype=points.data.dtype)))
    if F < 3:
        raise ValueError("voxelize needs xyz in the first three channels")
    xyz = points.data[:, :3]
    grid = np.array([gx, gy, gz])
    cell = np.clip(np.floor(xyz * grid).astype(np.int64), 0, grid - 1)
    t = np.clip(t_idx, 0, T - 1)
    coords = np.column_stack([batch_idx, t, cell])
    keys = pack(coords)
    uniq, inverse = np.unique(keys, return_inverse=True)
    inverse = inverse.reshape(-1)
    M = uniq.size
    # coordinates of each unique key from its first point
    first = np.full(M, P, dtype=np.int64)
    np.minimum.at(first, inverse, np.arange(P))
    cs = CoordSet(coords[first], (T, gx, gy, gz), batch_size)

    if aggregation == "mean":
        counts = np.bincount(inverse, minlength=M).astype(points.data.dtype)
        out = np.zeros((M, F), dtype=points.data.dtype)
        np.add.at(out, inverse, points.data)
        out /= counts[:, None]

        def backward(g):
            points.accumulate(g[inverse] / counts[inverse, None])
    else:
        order = np.argsort(inverse, kind="stable")
        starts = np.searchsorted(inverse[order], np.arange(M))
        vals = points.data[order]
        out, win = segment_max(vals, starts)
        src = order[win]

        def backward(g):
            points.accumulate(scatter_rows(src, g, P))

    return SparseTensor4D(cs, make_result(out, [points], backward))


def segment_max(vals: np.ndarray, starts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment, per-channel max of ``vals`` and the row of its first occurrence.

    Segments are the contiguous row runs beginning at ``starts``.  Short
    segments are reduced slot by slot, long ones with ``reduceat``.
    """
    n, C = vals.shape
    lengths = np.diff(np.append(starts, n))
    longest = int(lengths.max(initial=0))
    if longest > 128:
        out = np.maximum.reduceat(vals, starts, axis=0)
        seg = np.repeat(np.arange(starts.size), lengths)
        cand = np.where(vals == out[seg], np.arange(n)[:, None], n)
        return out, np.minimum.reduceat(cand, starts, axis=0)
    out = vals[starts]
    arg = np.repeat(starts[:, None], C, axis=1)
    for j in range(1, longest):
        sel = np.flatnonzero(lengths > j)
        rows = starts[sel] + j
        v = vals[rows]
        # strict comparison keeps the earlier row on ties
        better = v > out[sel]
        out[sel] = np.where(better, v, out[sel])
        arg[sel] = np.where(better, rows[:, None], arg[sel])
    return out, arg


def scatter_rows(rows: np.ndarray, g: np.ndarray, n_rows: int) -> np.ndarray:
    """(n_rows, C) array with ``g[i, c]`` added at ``[rows[i, c], c]``."""
    C = g.shape[1]
    flat = (rows * C + np.arange(C)).reshape(-1)
    return np.bincount(flat, weights=g.reshape(-1), minlength=n_rows * C).reshape(n_rows, C).astype(g.dtype)

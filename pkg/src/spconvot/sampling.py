"""Point-set reduction and cleanup: farthest point sampling, z-order windows,
DBSCAN, distance pruning and instance-mask denoising."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import nearest_rank_percentile

ZORDER_BITS = 21


def ifps(points: np.ndarray, m: int, start: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the lowest index."""
    pts = np.asarray(points, dtype=np.float64)
    M = pts.shape[0]
    if not 1 <= m <= M:
        raise ValueError(f"cannot sample {m} of {M} points")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    dist = np.sum((pts - pts[start]) ** 2, axis=1)
    dist[start] = -1.0
    for i in range(1, m):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1))
        dist[chosen[: i + 1]] = -1.0
    return chosen


def ifps_batched(points: np.ndarray, m: int) -> np.ndarray:
    """:func:`ifps` with start 0 run on a (B, M, 3) stack at once; returns (B, m)."""
    pts = np.asarray(points, dtype=np.float64)
    B, M, _ = pts.shape
    if not 1 <= m <= M:
        raise ValueError(f"cannot sample {m} of {M} points")
    rows = np.arange(B)
    chosen = np.zeros((B, m), dtype=np.int64)
    x, y, z = (np.ascontiguousarray(pts[:, :, k]) for k in range(3))
    dist = (x - x[:, :1]) ** 2 + (y - y[:, :1]) ** 2 + (z - z[:, :1]) ** 2
    dist[:, 0] = -1.0  # chosen points stay at -1 under the running minimum
    for i in range(1, m):
        nxt = dist.argmax(axis=1)
        chosen[:, i] = nxt
        d = (x - x[rows, nxt][:, None]) ** 2
        d += (y - y[rows, nxt][:, None]) ** 2
        d += (z - z[rows, nxt][:, None]) ** 2
        np.minimum(dist, d, out=dist)
        dist[rows, nxt] = -1.0
    return chosen


def _spread_bits(v: np.ndarray) -> np.ndarray:
    """Insert two zero bits between each of the low 21 bits."""
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def interleave(q: np.ndarray) -> np.ndarray:
    """Morton key of integer (x, y, z) triples, x in the least significant slot."""
    q = np.asarray(q)
    return _spread_bits(q[:, 0]) | (_spread_bits(q[:, 1]) << np.uint64(1)) | (_spread_bits(q[:, 2]) << np.uint64(2))


def quantize(points: np.ndarray, bits: int = ZORDER_BITS) -> np.ndarray:
    """Integer grid coordinates within the cloud's bounding box."""
    pts = np.asarray(points, dtype=np.float64)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    top = (1 << bits) - 1
    return np.clip(np.floor((pts - lo) / span * top), 0, top).astype(np.int64)


def zorder_keys(points: np.ndarray) -> np.ndarray:
    return interleave(quantize(points))


def zorder_window_sample(points: np.ndarray, m: int, windows: int) -> np.ndarray:
    """Sort by z-order key, split into contiguous windows and sample each with IFPS.

    Every window gets ``m // windows`` samples, the earliest windows one
    extra until the remainder is used up.
    """
    pts = np.asarray(points, dtype=np.float64)
    M = pts.shape[0]
    if windows < 1 or not 1 <= m <= M:
        raise ValueError(f"invalid request: {m} of {M} points in {windows} windows")
    order = np.argsort(zorder_keys(pts), kind="stable")
    base, extra = divmod(m, windows)
    picked = []
    for w, idx in enumerate(np.array_split(order, windows)):
        share = base + (w < extra)
        if share:
            picked.append(idx[ifps(pts[idx], share, 0)])
    return np.concatenate(picked)


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering; noise is -1.

    Neighbourhoods are closed balls that include the point itself.  Cluster
    ids follow the lowest-index core point of each cluster, and a border
    point joins the lowest-id cluster among its core neighbours, which is
    what the classic sequential expansion produces.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be positive and min_pts at least 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = cKDTree(pts).query_pairs(eps, output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    degree = np.bincount(np.concatenate([i, j]), minlength=n) + 1
    core = degree >= min_pts
    cc = core[i] & core[j]
    graph = coo_matrix((np.ones(cc.sum()), (i[cc], j[cc])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    labels = np.full(n, -1, dtype=np.int64)
    core_idx = np.flatnonzero(core)
    # number clusters by first appearance in index order
    _, first = np.unique(comp[core_idx], return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=np.int64)
    remap[order] = np.arange(order.size)
    comp_ids = np.unique(comp[core_idx])
    lookup = dict(zip(comp_ids.tolist(), remap.tolist()))
    labels[core_idx] = [lookup[c] for c in comp[core_idx].tolist()]
    # border points: lowest cluster id among core neighbours
    border = np.full(n, np.iinfo(np.int64).max)
    for a, b in ((i, j), (j, i)):
        sel = core[b] & ~core[a]
        np.minimum.at(border, a[sel], labels[b[sel]])
    is_border = ~core & (border != np.iinfo(np.int64).max)
    labels[is_border] = border[is_border]
    return labels


def keep_main_cluster(points: np.ndarray, labels: np.ndarray, centroid) -> np.ndarray:
    """Boolean mask of the cluster containing, or nearest to, ``centroid``."""
    pts = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    clustered = labels >= 0
    if not clustered.any():
        return np.zeros(labels.shape, dtype=bool)
    d = np.linalg.norm(pts - np.asarray(centroid, dtype=np.float64), axis=1)
    d[~clustered] = np.inf
    return labels == labels[int(np.argmin(d))]


def prune_metric(points: np.ndarray, centroid, limit: float = 1.5) -> np.ndarray:
    """Indices of points within ``limit`` (metres) of ``centroid``."""
    d = np.linalg.norm(np.asarray(points, dtype=np.float64) - np.asarray(centroid, dtype=np.float64), axis=1)
    return np.flatnonzero(d <= limit)


def prune_percentile(points: np.ndarray, centroid, lo: float = 5, hi: float = 90) -> np.ndarray:
    """Indices of points whose centroid distance lies within the nearest-rank [lo, hi] percentiles."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] == 0:
        raise ValueError("cannot prune an empty point set")
    d = np.linalg.norm(pts - np.asarray(centroid, dtype=np.float64), axis=1)
    a, b = nearest_rank_percentile(d, lo), nearest_rank_percentile(d, hi)
    return np.flatnonzero((d >= a) & (d <= b))


def convex_hull(pts: np.ndarray) -> np.ndarray:
    """Monotone-chain hull of integer 2-D points, counter-clockwise, no repeated start."""
    p = np.unique(np.asarray(pts, dtype=np.int64), axis=0)
    if len(p) <= 2:
        return p

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for q in p:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    for q in p[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    return np.array(lower[:-1] + upper[:-1])


def fill_convex_hull(mask: np.ndarray) -> np.ndarray:
    """Every pixel whose centre lies in the convex hull of the set pixels' centres."""
    mask = np.asarray(mask).astype(bool)
    out = np.zeros_like(mask)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return out
    hull = convex_hull(np.column_stack([ys, xs]))
    y0, y1, x0, x1 = ys.min(), ys.max(), xs.min(), xs.max()
    gy, gx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    if len(hull) <= 2:
        # segment or single point: pixels on the segment
        a, b = hull[0], hull[-1]
        cr = (b[0] - a[0]) * (gx - a[1]) - (b[1] - a[1]) * (gy - a[0])
        inside = cr == 0
    else:
        inside = np.ones(gy.shape, dtype=bool)
        for k in range(len(hull)):
            a, b = hull[k], hull[(k + 1) % len(hull)]
            inside &= (b[0] - a[0]) * (gx - a[1]) - (b[1] - a[1]) * (gy - a[0]) >= 0
    out[y0:y1 + 1, x0:x1 + 1] = inside
    return out


def denoise_mask(mask: np.ndarray, min_area: int = 64) -> np.ndarray:
    """Drop 8-connected components smaller than ``min_area`` and fill the convex hull of the rest."""
    mask = np.asarray(mask).astype(bool)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.reshape(-1), minlength=n + 1)
    keep = sizes >= min_area
    keep[0] = False
    return fill_convex_hull(keep[labels])

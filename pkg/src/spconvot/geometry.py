"""Camera-space geometry: projection, depth conversion, normals, normalization, augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .data.sequence import GEOMETRY, NORMALS, PersonSequence

FALLBACK_NORMAL = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    cx: float
    cy: float

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")


@dataclass
class PointFrame:
    points: np.ndarray  # (M, 3)
    features: np.ndarray  # (M, F)
    pixels: np.ndarray | None = None  # (M, 2) source (x, y) pixel of each point

    def __post_init__(self):
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.features))):
            raise ValueError("point frame contains non-finite values")

    def __len__(self) -> int:
        return self.points.shape[0]


def project_instance(depth: np.ndarray, mask: np.ndarray, cam: CameraIntrinsics,
                     feature_maps: np.ndarray | None = None) -> PointFrame:
    """Back-project the masked pixels with valid depth to camera space.

    ``feature_maps`` is an optional (H, W, F) stack sampled at the same
    pixels (IR intensity, colour, part labels, ...).
    """
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if depth.shape != mask.shape:
        raise ValueError(f"depth {depth.shape} and mask {mask.shape} differ in size")
    valid = mask & np.isfinite(depth) & (depth > 0)
    ys, xs = np.nonzero(valid)
    z = depth[ys, xs]
    X = (xs - cam.cx) * z / cam.f
    Y = (ys - cam.cy) * z / cam.f
    pts = np.column_stack([X, Y, z])
    if feature_maps is None:
        feats = np.zeros((pts.shape[0], 0))
    else:
        fm = np.asarray(feature_maps, dtype=np.float64)
        fm = fm[..., None] if fm.ndim == 2 else fm
        feats = fm[ys, xs]
    return PointFrame(pts, feats, np.column_stack([xs, ys]).astype(np.float64))


def back_project(points: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Pixel (x, y) of camera-space points: x = X f / Z + cx."""
    p = np.asarray(points, dtype=np.float64)
    return np.column_stack([p[:, 0] * cam.f / p[:, 2] + cam.cx, p[:, 1] * cam.f / p[:, 2] + cam.cy])


def disparity_to_depth(disp: np.ndarray, scale: float = 1.0, eps: float = 1e-6) -> np.ndarray:
    if scale <= 0 or eps <= 0:
        raise ValueError("scale and eps must be positive")
    return scale / (eps + np.asarray(disp, dtype=np.float64))


def estimate_normals(points: np.ndarray, k: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Plane-fit normals from the k nearest neighbours of every point.

    Returns (normals, degenerate): unit normals oriented towards the sensor
    at the origin, and a flag for neighbourhoods of rank < 2 whose normal
    fell back to (0, 0, -1).
    """
    pts = np.asarray(points, dtype=np.float64)
    M = pts.shape[0]
    if k < 3 or M < k:
        raise ValueError(f"need M >= k >= 3, got M={M}, k={k}")
    _, nn = cKDTree(pts).query(pts, k=k)
    nb = pts[nn]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = evals[:, 1] <= 1e-10 * scale
    degenerate |= evals[:, 2] <= 1e-20
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    flip = np.einsum("mi,mi->m", normals, -pts) < 0
    normals[flip] *= -1
    normals[degenerate] = FALLBACK_NORMAL
    return normals, degenerate


def nearest_rank_percentile(values: np.ndarray, pct: float) -> float:
    """Smallest value with at least ``pct`` percent of the data at or below it."""
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if v.size == 0:
        raise ValueError("percentile of empty data")
    rank = int(np.ceil(pct / 100.0 * v.size))
    return float(v[min(max(rank, 1), v.size) - 1])


def normalize_ir(image: np.ndarray, lo: float = 5, hi: float = 90) -> np.ndarray:
    """Clamp to the [lo, hi] percentiles, then min-max scale to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ValueError("empty image")
    a, b = nearest_rank_percentile(img, lo), nearest_rank_percentile(img, hi)
    if b <= a:
        return np.zeros_like(img)
    return (np.clip(img, a, b) - a) / (b - a)


def minmax_normalize_sequence(person: PersonSequence) -> PersonSequence:
    """Per-person, per-axis min-max of xyz over the whole sequence; constant axes go to 0.5."""
    allpts = np.concatenate([f[:, :3] for f in person.frames])
    if allpts.shape[0] == 0:
        raise ValueError("cannot normalize a sequence without points")
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    span = hi - lo
    flat = span <= 0
    safe = np.where(flat, 1.0, span)
    frames = []
    for f in person.frames:
        g = f.copy()
        xyz = (f[:, :3] - lo) / safe
        xyz[:, flat] = 0.5
        g[:, :3] = xyz
        frames.append(g)
    return person.with_frames(frames)


def rotation_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def augment(person: PersonSequence, rng: np.random.Generator, max_angle: float = np.pi / 4,
            jitter: float = 0.005, theta: float | None = None) -> PersonSequence:
    """One random y-axis rotation for the whole clip plus clipped Gaussian point jitter.

    Normal channels, when present, are rotated with the points.  ``jitter``
    is in the units of the coordinates.
    """
    if theta is None:
        theta = rng.uniform(-max_angle, max_angle)
    R = rotation_y(theta)
    nsl = person.channel_slice(NORMALS)
    frames = []
    for f in person.frames:
        g = f.copy()
        g[:, :3] = f[:, :3] @ R.T
        if nsl is not None:
            g[:, nsl] = f[:, nsl] @ R.T
        if jitter > 0:
            noise = np.clip(rng.normal(0.0, jitter, size=(f.shape[0], 3)), -3 * jitter, 3 * jitter)
            g[:, :3] += noise
        frames.append(g.astype(f.dtype, copy=False))
    return person.with_frames(frames)


__all__ = [
    "CameraIntrinsics",
    "GEOMETRY",
    "PointFrame",
    "augment",
    "back_project",
    "disparity_to_depth",
    "estimate_normals",
    "minmax_normalize_sequence",
    "nearest_rank_percentile",
    "normalize_ir",
    "project_instance",
    "rotation_y",
]

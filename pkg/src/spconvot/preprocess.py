"""Depth frames plus instance masks to cleaned, tracked person sequences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .data.sequence import GEOMETRY, NORMALS, PersonSequence
from .geometry import CameraIntrinsics, estimate_normals, normalize_ir, project_instance
from .sampling import dbscan, denoise_mask, ifps, keep_main_cluster, prune_metric, prune_percentile, zorder_window_sample
from .tracking import Tracker, fit_bbox


@dataclass
class PreprocessConfig:
    min_area: int = 64
    dbscan_eps: float = 0.05
    dbscan_min_pts: int = 8
    prune: str = "metric"  # metric (sensor depth) | percentile (estimated depth) | none
    prune_limit: float = 1.5
    num_points: int = 512
    windows: int = 1  # >1 switches to z-order windowed sampling
    normals: bool = False
    normal_k: int = 16
    max_people: int = 2


@dataclass
class FrameInput:
    depth: np.ndarray  # metres
    instances: np.ndarray  # 0 background, k > 0 one person
    parts: np.ndarray | None = None
    ir: np.ndarray | None = None


def mask_centroid(depth: np.ndarray, mask: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Mask pixel centroid back-projected at the median valid depth inside the mask."""
    ys, xs = np.nonzero(mask)
    z = depth[ys, xs]
    z = z[np.isfinite(z) & (z > 0)]
    if z.size == 0:
        raise ValueError("mask has no valid depth")
    zc = float(np.median(z))
    return np.array([(xs.mean() - cam.cx) * zc / cam.f, (ys.mean() - cam.cy) * zc / cam.f, zc])


def clean_person(depth, mask, cam: CameraIntrinsics, cfg: PreprocessConfig, parts=None, ir=None):
    """Points (with optional normals and IR) and part labels of one masked person, or None if too few remain."""
    maps = [m for m in (ir, parts) if m is not None]
    pf = project_instance(depth, mask, cam, np.stack(maps, axis=-1) if maps else None)
    if len(pf) < cfg.dbscan_min_pts:
        return None
    centroid = mask_centroid(depth, mask, cam)
    keep = keep_main_cluster(pf.points, dbscan(pf.points, cfg.dbscan_eps, cfg.dbscan_min_pts), centroid)
    pts, feats = pf.points[keep], pf.features[keep]
    if cfg.prune == "metric":
        idx = prune_metric(pts, centroid, cfg.prune_limit)
    elif cfg.prune == "percentile":
        idx = prune_percentile(pts, centroid) if len(pts) else np.zeros(0, dtype=np.int64)
    elif cfg.prune == "none":
        idx = np.arange(len(pts))
    else:
        raise ValueError(f"unknown pruning mode {cfg.prune!r}")
    pts, feats = pts[idx], feats[idx]
    if len(pts) < max(cfg.normal_k if cfg.normals else 1, 1):
        return None
    if len(pts) > cfg.num_points:
        sel = ifps(pts, cfg.num_points) if cfg.windows == 1 else zorder_window_sample(pts, cfg.num_points, cfg.windows)
        pts, feats = pts[sel], feats[sel]
    cols, names = [pts], list(GEOMETRY)
    if cfg.normals:
        cols.append(estimate_normals(pts, cfg.normal_k)[0])
        names += NORMALS
    if ir is not None:
        cols.append(feats[:, :1])
        names.append("ir")
    labels = feats[:, -1].astype(np.int64) if parts is not None else np.zeros(len(pts), dtype=np.int64)
    return np.hstack(cols), tuple(names), labels


def build_sequences(frames: Iterable[FrameInput], cam: CameraIntrinsics,
                    cfg: PreprocessConfig | None = None) -> list[PersonSequence]:
    """Track instances over frames and return the longest ``max_people`` tracks."""
    cfg = cfg or PreprocessConfig()
    tracker = Tracker()
    tracks: dict[int, tuple[list, list]] = {}
    names = GEOMETRY
    for frame in frames:
        ir = normalize_ir(frame.ir) if frame.ir is not None else None
        masks, dets = [], []
        for k in np.unique(frame.instances):
            if k == 0:
                continue
            m = denoise_mask(frame.instances == k, cfg.min_area)
            if m.any():
                masks.append(m)
                dets.append(fit_bbox(m))
        for m, tid in zip(masks, tracker.associate(dets)):
            if tid is None:
                continue
            person = clean_person(frame.depth, m, cam, cfg, frame.parts, ir)
            if person is None:
                continue
            pts, names, labels = person
            tracks.setdefault(tid, ([], []))
            tracks[tid][0].append(pts)
            tracks[tid][1].append(labels)
    longest = sorted(tracks, key=lambda t: (-len(tracks[t][0]), t))[: cfg.max_people]
    return [PersonSequence(tracks[t][0], names, tracks[t][1], t) for t in sorted(longest)]

"""Two-stage IoU association of per-frame person boxes.

High-confidence detections are matched first; still-unmatched tracks then
get a chance against low-confidence ones.  There is no motion model: a
track is predicted to stay at its last box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Detection:
    bbox: tuple[float, float, float, float]  # half-open (x0, y0, x1, y1)
    score: float = 1.0

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate box {self.bbox}")


@dataclass
class Track:
    id: int
    bbox: tuple[float, float, float, float]
    age: int = 0
    hits: int = 1


def fit_bbox(mask: np.ndarray, score: float | None = None) -> Detection:
    mask = np.asarray(mask).astype(bool)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("cannot fit a box to an empty mask")
    box = (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
    return Detection(box, 1.0 if score is None else float(score))


def iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _greedy(tracks: list[Track], dets: list[int], detections: list[Detection], iou_min: float):
    """Greedy matching by descending IoU; ties prefer the lower track id, then lower detection."""
    cand = []
    for t in tracks:
        for d in dets:
            v = iou(t.bbox, detections[d].bbox)
            if v >= iou_min:
                cand.append((-v, t.id, d, t))
    cand.sort(key=lambda c: c[:3])
    used_t, used_d, pairs = set(), set(), []
    for _, tid, d, t in cand:
        if tid in used_t or d in used_d:
            continue
        used_t.add(tid)
        used_d.add(d)
        pairs.append((t, d))
    return pairs


@dataclass
class Tracker:
    thresh_high: float = 0.6
    thresh_low: float = 0.1
    iou_min: float = 0.3
    max_age: int = 30
    tracks: list[Track] = field(default_factory=list)
    next_id: int = 0

    def associate(self, detections: list[Detection]) -> list[int | None]:
        """Update tracks with one frame of detections; returns the track id per detection."""
        assigned: list[int | None] = [None] * len(detections)
        high = [i for i, d in enumerate(detections) if d.score >= self.thresh_high]
        low = [i for i, d in enumerate(detections) if self.thresh_low <= d.score < self.thresh_high]
        live = sorted(self.tracks, key=lambda t: t.id)

        matched = _greedy(live, high, detections, self.iou_min)
        done = {t.id for t, _ in matched}
        rest = [t for t in live if t.id not in done]
        matched += _greedy(rest, low, detections, self.iou_min)

        for t, d in matched:
            t.bbox = detections[d].bbox
            t.age = 0
            t.hits += 1
            assigned[d] = t.id
        hit_ids = {t.id for t, _ in matched}
        for t in live:
            if t.id not in hit_ids:
                t.age += 1
        for d in high:
            if assigned[d] is None:
                track = Track(self.next_id, detections[d].bbox)
                self.next_id += 1
                self.tracks.append(track)
                assigned[d] = track.id
        self.tracks = [t for t in self.tracks if t.age <= self.max_age]
        return assigned


def associate(tracks: Tracker, detections: list[Detection]) -> list[int | None]:
    return tracks.associate(detections)

"""Synthetic five-class action clips from an articulated ellipsoid body.

Every class uses the same body model and the same randomisation of body
size, timing and noise; only the joint-angle schedule differs, so the
classes are separable by motion and not by static shape.  Points are
drawn on the full surface of each body part (no self-occlusion).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..sampling import ifps_batched
from .sequence import GEOMETRY, ActionSample, PersonSequence

CLASSES = ("raise-arm", "wave", "squat", "walk-in-place", "two-person-handshake")

# part label, (radius_a, radius_b) across the limb; length along it comes from the skeleton
PARTS = {
    "torso": 1, "head": 2,
    "r_upper_arm": 3, "r_forearm": 4, "l_upper_arm": 5, "l_forearm": 6,
    "r_thigh": 7, "r_shin": 8, "l_thigh": 9, "l_shin": 10,
}
NUM_PART_LABELS = len(PARTS)

_DOWN = np.array([0.0, -1.0, 0.0])


def _rx(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def _rz(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def _ry(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


@dataclass(frozen=True)
class Body:
    """Segment lengths and radii in metres."""

    scale: float = 1.0
    girth: float = 1.0

    @property
    def upper_arm(self):
        return 0.30 * self.scale

    @property
    def forearm(self):
        return 0.28 * self.scale

    @property
    def thigh(self):
        return 0.45 * self.scale

    @property
    def shin(self):
        return 0.45 * self.scale


@dataclass(frozen=True)
class Pose:
    """Joint angles in radians; arm entries are (right, left)."""

    arm_abd: tuple[float, float] = (0.15, 0.15)
    arm_flex: tuple[float, float] = (0.0, 0.0)
    elbow: tuple[float, float] = (0.1, 0.1)
    fore_abd: tuple[float, float] = (0.0, 0.0)
    hip_flex: tuple[float, float] = (0.0, 0.0)
    knee: tuple[float, float] = (0.0, 0.0)
    trunk_lean: float = 0.0


def _ellipsoid(centre, axis, half_len, radius):
    """(centre, 3x3 matrix mapping the unit sphere onto the ellipsoid)."""
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0, 0]) if abs(axis[0]) < 0.9 else np.array([0, 0, 1.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return centre, np.column_stack([axis * half_len, u * radius, v * radius])


def body_parts(body: Body, pose: Pose) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Ellipsoids of every part for one pose, feet resting on y = 0."""
    s, g = body.scale, body.girth
    legs = []
    for side in (0, 1):
        thigh_dir = _rx(pose.hip_flex[side]) @ _DOWN
        shin_dir = _rx(pose.hip_flex[side] - pose.knee[side]) @ _DOWN
        legs.append((thigh_dir, shin_dir))
    drop = max(-(body.thigh * t[1] + body.shin * sh[1]) for t, sh in legs)
    pelvis = np.array([0.0, drop, 0.0])
    lean = _rx(pose.trunk_lean)
    neck = pelvis + lean @ np.array([0.0, 0.55 * s, 0.0])
    parts = {
        "torso": _ellipsoid(pelvis + lean @ np.array([0, 0.28 * s, 0]), lean @ np.array([0, 1.0, 0]),
                            0.30 * s, 0.15 * s * g),
        "head": _ellipsoid(neck + lean @ np.array([0, 0.13 * s, 0]), lean @ np.array([0, 1.0, 0]),
                           0.12 * s, 0.09 * s * g),
    }
    for side, (tag, sign) in enumerate((("r", 1.0), ("l", -1.0))):
        shoulder = neck + lean @ np.array([sign * 0.19 * s, -0.04 * s, 0])
        upper = lean @ _rx(pose.arm_flex[side]) @ _rz(sign * pose.arm_abd[side]) @ _DOWN
        fore = lean @ _rx(pose.arm_flex[side] + pose.elbow[side]) @ _rz(
            sign * (pose.arm_abd[side] + pose.fore_abd[side])) @ _DOWN
        elbow = shoulder + upper * body.upper_arm
        parts[f"{tag}_upper_arm"] = _ellipsoid(shoulder + upper * body.upper_arm / 2, upper,
                                               body.upper_arm / 2, 0.045 * s * g)
        parts[f"{tag}_forearm"] = _ellipsoid(elbow + fore * body.forearm / 2, fore, body.forearm / 2, 0.04 * s * g)
        hip = pelvis + np.array([sign * 0.09 * s, 0, 0])
        thigh_dir, shin_dir = legs[side]
        knee = hip + thigh_dir * body.thigh
        parts[f"{tag}_thigh"] = _ellipsoid(hip + thigh_dir * body.thigh / 2, thigh_dir, body.thigh / 2, 0.07 * s * g)
        parts[f"{tag}_shin"] = _ellipsoid(knee + shin_dir * body.shin / 2, shin_dir, body.shin / 2, 0.05 * s * g)
    return parts


def _surface_area(m: np.ndarray) -> float:
    """Knud Thomsen's approximation."""
    a, b, c = np.linalg.norm(m, axis=0)
    p = 1.6075
    return 4 * np.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3) ** (1 / p)


def _pose_at(label: int, s: float, cycles: float, amp: float, rng_idle: np.ndarray) -> Pose:
    """Joint angles at clip phase ``s`` in [0, 1]."""
    idle = 0.05 * rng_idle
    base = dict(arm_abd=(0.15 + idle[0], 0.15 + idle[1]), arm_flex=(idle[2], idle[3]), elbow=(0.1, 0.1))
    osc = np.sin(2 * np.pi * cycles * s)
    bump = np.sin(np.pi * s)  # 0 -> 1 -> 0 over the clip
    if label == 0:  # raise-arm: right arm up sideways and back down
        return Pose(**{**base, "arm_abd": (0.15 + amp * 2.7 * bump, base["arm_abd"][1])})
    if label == 1:  # wave: right arm held up, forearm swinging sideways
        return Pose(**{**base, "arm_abd": (2.2, base["arm_abd"][1]), "elbow": (0.3, 0.1),
                       "fore_abd": (amp * 0.6 * osc, 0.0)})
    if label == 2:  # squat: hips and knees flex, arms reach forward
        depth = amp * 0.5 * (1 - np.cos(2 * np.pi * cycles * s)) / 2 * 2
        return Pose(**{**base, "hip_flex": (1.1 * depth, 1.1 * depth), "knee": (2.0 * depth, 2.0 * depth),
                       "arm_flex": (1.3 * depth, 1.3 * depth), "trunk_lean": 0.35 * depth})
    if label == 3:  # walk in place: alternating knee lifts with opposite arm swing
        right = amp * 0.9 * max(osc, 0.0)
        left = amp * 0.9 * max(-osc, 0.0)
        return Pose(**{**base, "hip_flex": (right, left), "knee": (1.3 * right, 1.3 * left),
                       "arm_flex": (0.5 * amp * osc * -1, 0.5 * amp * osc)})
    if label == 4:  # handshake: right arm extended forward, hand pumping up and down
        return Pose(**{**base, "arm_flex": (0.9 + amp * 0.2 * osc, base["arm_flex"][1]), "elbow": (0.25, 0.1)})
    raise ValueError(f"unknown class {label}")


@dataclass(frozen=True)
class SyntheticActionSpec:
    label: int
    seed: int
    num_points: int = 512
    oversample: float = 1.25
    min_frames: int = 24
    max_frames: int = 64
    noise: float = 0.005

    def __post_init__(self):
        if not 0 <= self.label < len(CLASSES):
            raise ValueError(f"class id must be in [0, {len(CLASSES)}), got {self.label}")
        if self.oversample < 1.0 or self.num_points < 1 or not 1 <= self.min_frames <= self.max_frames:
            raise ValueError("invalid synthetic spec")


def _person(spec: SyntheticActionSpec, rng: np.random.Generator, n_frames: int, cycles: float, amp: float,
            placement: tuple[np.ndarray, float], track_id: int) -> PersonSequence:
    body = Body(scale=rng.uniform(0.85, 1.15), girth=rng.uniform(0.85, 1.2))
    idle = rng.normal(size=4)
    offset, yaw = placement
    R = _ry(yaw)
    raw = int(np.ceil(spec.num_points * spec.oversample))
    names = list(PARTS)
    frames, labels = [], []
    for t in range(n_frames):
        s = t / max(n_frames - 1, 1)
        parts = body_parts(body, _pose_at(spec.label, s, cycles, amp, idle))
        areas = np.array([_surface_area(parts[n][1]) for n in names])
        counts = rng.multinomial(raw, areas / areas.sum())
        pts, lab = [], []
        for name, k in zip(names, counts):
            centre, M = parts[name]
            d = rng.normal(size=(k, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            pts.append(d @ M.T + centre)
            lab.append(np.full(k, PARTS[name], dtype=np.int64))
        p = np.concatenate(pts) @ R.T + offset
        frames.append(p + rng.normal(scale=spec.noise, size=p.shape))
        labels.append(np.concatenate(lab))
    stack = np.stack(frames)
    keep = ifps_batched(stack, spec.num_points)
    rows = np.arange(n_frames)[:, None]
    frames = list(stack[rows, keep])
    parts_out = list(np.stack(labels)[rows, keep])
    return PersonSequence(frames, GEOMETRY, parts_out, track_id)


def generate_synthetic_sequence(spec: SyntheticActionSpec) -> ActionSample:
    """One labelled clip, deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n_frames = int(rng.integers(spec.min_frames, spec.max_frames + 1))
    cycles = rng.uniform(1.0, 2.0) if spec.label in (2,) else rng.uniform(2.0, 4.0)
    amp = rng.uniform(0.75, 1.0)
    if spec.label == 4:
        gap = rng.uniform(0.45, 0.6)
        people = [
            _person(spec, rng, n_frames, cycles, amp, (np.array([-gap, 0, 0]), np.pi / 2), 0),
            _person(spec, rng, n_frames, cycles, amp, (np.array([gap, 0, 0]), -np.pi / 2), 1),
        ]
    else:
        people = [_person(spec, rng, n_frames, cycles, amp, (np.zeros(3), rng.uniform(-0.3, 0.3)), 0)]
    return ActionSample(people, spec.label, {"seed": spec.seed, "class": CLASSES[spec.label]})


def make_split(count: int, seed: int, num_points: int = 512, **kw) -> list[ActionSample]:
    """``count`` clips with classes cycling 0..4 and per-clip seeds drawn from ``seed``."""
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=count)
    return [generate_synthetic_sequence(SyntheticActionSpec(i % len(CLASSES), int(sd), num_points, **kw))
            for i, sd in enumerate(seeds)]

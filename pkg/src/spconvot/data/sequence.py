from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

GEOMETRY = ("x", "y", "z")
NORMALS = ("nx", "ny", "nz")


@dataclass
class PersonSequence:
    """One tracked person over time.

    ``frames[t]`` is an (N_t, C) float array whose first three channels
    are xyz; ``channels`` names every column.  ``parts[t]`` holds per-point
    body-part labels (0 is background) when available.
    """

    frames: list[np.ndarray]
    channels: tuple[str, ...] = GEOMETRY
    parts: list[np.ndarray] | None = None
    track_id: int = 0

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a person sequence needs at least one frame")
        for f in self.frames:
            if f.ndim != 2 or f.shape[1] != len(self.channels):
                raise ValueError(f"frame shape {f.shape} does not match channels {self.channels}")
        if self.parts is not None and len(self.parts) != len(self.frames):
            raise ValueError("parts must have one entry per frame")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    def channel_slice(self, names: tuple[str, ...]) -> slice | None:
        if not set(names) <= set(self.channels):
            return None
        i = self.channels.index(names[0])
        return slice(i, i + len(names))

    def with_frames(self, frames: list[np.ndarray], parts: list[np.ndarray] | None = None) -> "PersonSequence":
        return replace(self, frames=frames, parts=self.parts if parts is None else parts)

    def select(self, frame_idx) -> "PersonSequence":
        frames = [self.frames[i] for i in frame_idx]
        parts = None if self.parts is None else [self.parts[i] for i in frame_idx]
        return replace(self, frames=frames, parts=parts)


@dataclass
class ActionSample:
    """A labelled clip holding one or two people."""

    people: list[PersonSequence]
    label: int
    meta: dict = field(default_factory=dict)

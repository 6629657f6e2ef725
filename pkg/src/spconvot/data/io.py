"""Binary sequence files, depth rasters and on-disk datasets.

HPCS layout (little-endian)::

    "HPCS" u32 version u32 persons
    per person:  u32 frames
      per frame: u32 points u32 C, points*C f32 (row-major), points i16 part labels
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .sequence import GEOMETRY, NORMALS, ActionSample, PersonSequence

HPCS_MAGIC = b"HPCS"
HPCS_VERSION = 1
DMAP_MAGIC = b"DMAP"

_CHANNEL_SETS = {
    3: GEOMETRY,
    4: GEOMETRY + ("ir",),
    6: GEOMETRY + NORMALS,
    7: GEOMETRY + NORMALS + ("ir",),
    9: GEOMETRY + NORMALS + ("r", "g", "b"),
}


class FormatError(ValueError):
    pass


def channel_names(c: int) -> tuple[str, ...]:
    return _CHANNEL_SETS.get(c, GEOMETRY + tuple(f"c{i}" for i in range(3, c)))


def write_hpcs(path, people: list[PersonSequence]) -> None:
    chunks = [HPCS_MAGIC, struct.pack("<II", HPCS_VERSION, len(people))]
    for person in people:
        chunks.append(struct.pack("<I", len(person)))
        for t, frame in enumerate(person.frames):
            n, c = frame.shape
            parts = person.parts[t] if person.parts is not None else np.zeros(n)
            if np.any((parts < -2**15) | (parts >= 2**15)):
                raise FormatError("part labels do not fit in 16 bits")
            chunks.append(struct.pack("<II", n, c))
            chunks.append(np.ascontiguousarray(frame, dtype="<f4").tobytes())
            chunks.append(np.asarray(parts, dtype="<i2").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_hpcs(path) -> list[PersonSequence]:
    buf = memoryview(Path(path).read_bytes())
    if bytes(buf[:4]) != HPCS_MAGIC:
        raise FormatError(f"{path}: not an HPCS file")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise FormatError(f"{path}: truncated")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    def take_array(dtype, count):
        nonlocal pos
        size = np.dtype(dtype).itemsize * count
        if pos + size > len(buf):
            raise FormatError(f"{path}: truncated")
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
        pos += size
        return arr

    version, n_people = take("<II")
    if version != HPCS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    people = []
    for pid in range(n_people):
        (n_frames,) = take("<I")
        frames, parts = [], []
        channels = None
        for _ in range(n_frames):
            n, c = take("<II")
            if channels is not None and c != len(channels):
                raise FormatError(f"{path}: channel count changes within a person")
            channels = channel_names(c)
            frames.append(take_array("<f4", n * c).reshape(n, c).astype(np.float64))
            parts.append(take_array("<i2", n).astype(np.int64))
        if not frames:
            raise FormatError(f"{path}: person {pid} has no frames")
        people.append(PersonSequence(frames, channels, parts, pid))
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return people


def write_dmap(path, values: np.ndarray) -> None:
    h, w = values.shape
    Path(path).write_bytes(DMAP_MAGIC + struct.pack("<II", w, h) + np.ascontiguousarray(values, "<f4").tobytes())


def read_dmap(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != DMAP_MAGIC:
        raise FormatError(f"{path}: not a DMAP raster")
    w, h = struct.unpack_from("<II", raw, 4)
    if len(raw) != 12 + 4 * w * h:
        raise FormatError(f"{path}: expected {w}x{h} values")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w).astype(np.float64)


def read_depth(path) -> np.ndarray:
    """Depth in metres from a 16-bit millimetre PNG or a DMAP raster (already metric)."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        img = np.asarray(Image.open(path))
        if img.ndim != 2:
            raise FormatError(f"{path}: depth PNG must be single-channel")
        return img.astype(np.float64) / 1000.0
    return read_dmap(path)


def write_depth_png(path, depth_m: np.ndarray) -> None:
    mm = np.clip(np.round(np.asarray(depth_m) * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)


def read_label_image(path) -> np.ndarray:
    return np.asarray(Image.open(path)).astype(np.int64)


def write_dataset(root, splits: dict[str, list[ActionSample]]) -> None:
    """``root/<split>/<index>.hpcs`` plus ``root/<split>/labels.csv``."""
    root = Path(root)
    for name, samples in splits.items():
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "labels.csv", "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["file", "label"])
            for i, s in enumerate(samples):
                fname = f"{i:05d}.hpcs"
                write_hpcs(d / fname, s.people)
                out.writerow([fname, s.label])


def read_split(root, name: str) -> list[ActionSample]:
    d = Path(root) / name
    with open(d / "labels.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [ActionSample(read_hpcs(d / r["file"]), int(r["label"]), {"file": r["file"]}) for r in rows]

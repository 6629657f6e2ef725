"""Packed 4D coordinates and an exact open-addressing hash index over them."""

from __future__ import annotations

import numpy as np

# bit widths of (batch, t, x, y, z); 15 + 4 * 12 = 63 bits
FIELD_BITS = (15, 12, 12, 12, 12)
FIELD_LIMITS = tuple(1 << b for b in FIELD_BITS)
_SHIFTS = tuple(int(sum(FIELD_BITS[i + 1:])) for i in range(5))
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_CHUNK = 1 << 22


def pack(coords: np.ndarray) -> np.ndarray:
    """Pack an (M, 5) array of (b, t, x, y, z) into int64 keys.

    Packing is order preserving: comparing keys compares coordinates
    lexicographically.
    """
    coords = np.asarray(coords, dtype=np.int64)
    if coords.size and (coords.min() < 0 or np.any(coords.max(axis=0) >= FIELD_LIMITS)):
        raise ValueError("coordinate outside packable range")
    key = np.zeros(coords.shape[0], dtype=np.int64)
    for axis in range(5):
        key |= coords[:, axis] << _SHIFTS[axis]
    return key


def pack_offset(offset) -> int:
    """Key delta of a (dt, dx, dy, dz) shift; valid only when no field wraps."""
    dt, dx, dy, dz = (int(v) for v in offset)
    return (dt << _SHIFTS[1]) + (dx << _SHIFTS[2]) + (dy << _SHIFTS[3]) + (dz << _SHIFTS[4])


def unpack(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty((keys.size, 5), dtype=np.int64)
    for axis in range(5):
        out[:, axis] = (keys >> _SHIFTS[axis]) & (FIELD_LIMITS[axis] - 1)
    return out


class CoordIndex:
    """Exact map from packed coordinate keys to row numbers.

    Linear probing over a power-of-two table kept at most half full.  Insert
    and lookup are vectorized: every pending key advances one probe per pass.
    """

    def __init__(self, keys: np.ndarray):
        keys = np.ascontiguousarray(keys, dtype=np.int64)
        self.keys = keys
        bits = max(4, int(np.ceil(np.log2(max(2 * keys.size, 1)))) + 1)
        self._bits = bits
        self._mask = (1 << bits) - 1
        self.table = np.full(1 << bits, -1, dtype=np.int64)
        self._insert(np.arange(keys.size, dtype=np.int64))

    def __len__(self) -> int:
        return self.keys.size

    def _hash(self, keys: np.ndarray) -> np.ndarray:
        h = keys.astype(np.uint64) * _GOLDEN
        return (h >> np.uint64(64 - self._bits)).astype(np.int64)

    def _insert(self, rows: np.ndarray) -> None:
        slot = self._hash(self.keys[rows])
        pending = rows
        while pending.size:
            occupant = self.table[slot]
            empty = occupant < 0
            if np.any(~empty):
                same = np.zeros_like(empty)
                same[~empty] = self.keys[occupant[~empty]] == self.keys[pending[~empty]]
                if np.any(same):
                    dup = self.keys[pending[same][0]]
                    raise ValueError(f"duplicate coordinate key {int(dup)}")
            # one winner per contested empty slot: the lowest pending row
            cand = np.flatnonzero(empty)
            _, first = np.unique(slot[cand], return_index=True)
            win = cand[first]
            self.table[slot[win]] = pending[win]
            keep = np.ones(pending.size, dtype=bool)
            keep[win] = False
            advance = ~empty
            slot = np.where(advance, (slot + 1) & self._mask, slot)
            pending, slot = pending[keep], slot[keep]

    def lookup(self, queries: np.ndarray) -> np.ndarray:
        """Row of each query key, or -1 when absent."""
        queries = np.asarray(queries, dtype=np.int64).reshape(-1)
        out = np.full(queries.size, -1, dtype=np.int64)
        for start in range(0, queries.size, _CHUNK):
            stop = min(start + _CHUNK, queries.size)
            q = queries[start:stop]
            res = out[start:stop]
            todo = np.arange(q.size)
            slot = self._hash(q)
            while todo.size:
                occ = self.table[slot]
                hit = occ >= 0
                match = np.zeros(todo.size, dtype=bool)
                match[hit] = self.keys[occ[hit]] == q[todo[hit]]
                res[todo[match]] = occ[match]
                cont = hit & ~match
                todo = todo[cont]
                slot = (slot[cont] + 1) & self._mask
        return out

"""Open-addressing point tables shared by both sampling backends.

A PointTable maps lattice points to small nonnegative integer payloads
(default: the point's row index).  Probing code exists twice, here for the
pure-Python backend and in the Cython kernels; the hash below is the contract
both implement.  Payload -1 marks an empty slot.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def point_hash(coords) -> int:
    h = 0x9E3779B97F4A7C15
    for c in coords:
        h = _splitmix64(h ^ (int(c) & MASK64))
    return h


class PointTable:
    """Immutable hash set of points with int payloads and a bounding box."""

    __slots__ = ("d", "n", "nslots", "mask", "coords", "vals", "lo", "hi")

    def __init__(self, points, payloads=None):
        pts = np.asarray(points, dtype=np.int64)
        if pts.ndim != 2:
            raise ValueError("points must be an (n, d) array")
        n, d = pts.shape
        if payloads is None:
            payloads = np.arange(n, dtype=np.int32)
        else:
            payloads = np.asarray(payloads, dtype=np.int32)
            if np.any(payloads < 0):
                raise ValueError("payloads must be nonnegative")
        nslots = 8
        while nslots < 4 * max(n, 1):
            nslots *= 2
        self.d = d
        self.n = n
        self.nslots = nslots
        self.mask = nslots - 1
        self.coords = np.zeros((nslots, d), dtype=np.int64)
        self.vals = np.full(nslots, -1, dtype=np.int32)
        if n:
            self.lo = pts.min(axis=0).copy()
            self.hi = pts.max(axis=0).copy()
        else:
            self.lo = np.ones(d, dtype=np.int64)
            self.hi = -np.ones(d, dtype=np.int64)
        for row, val in zip(pts, payloads):
            i = point_hash(row) & self.mask
            while self.vals[i] >= 0:
                if np.array_equal(self.coords[i], row):
                    break  # duplicate point: last payload wins
                i = (i + 1) & self.mask
            self.coords[i] = row
            self.vals[i] = val
        # arrays are treated as immutable from here on (kernels take
        # writable-buffer views of them, so we do not flag them read-only)

    def lookup(self, pos) -> int:
        """Payload for pos, or -1.  Pure-Python probe (fallback backend)."""
        for j in range(self.d):
            if pos[j] < self.lo[j] or pos[j] > self.hi[j]:
                return -1
        i = point_hash(pos) & self.mask
        while True:
            v = self.vals[i]
            if v < 0:
                return -1
            row = self.coords[i]
            match = True
            for j in range(self.d):
                if row[j] != pos[j]:
                    match = False
                    break
            if match:
                return int(v)
            i = (i + 1) & self.mask


def empty_table(d: int) -> PointTable:
    return PointTable(np.zeros((0, d), dtype=np.int64))

"""Integer-lattice geometry: points, regions, balls, boundaries, distances.

Points are length-``d`` integer tuples (numpy rows internally).  A Region is
an immutable, deduplicated, lexicographically sorted finite set of points; the
sorted order is the canonical iteration order, so every run is reproducible.

The module also owns the small text grammar used to specify sets on the CLI::

    spec := 'ball:R' | 'box:L' | 'segment:L' | 'points:@file'
          | 'union(spec;spec;...)' | 'shift(spec;x1,...,xd)'
"""

from __future__ import annotations

import numpy as np


class LatticeError(ValueError):
    pass


class RegionSpecError(LatticeError):
    """Grammar error; carries the byte offset of the failure."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def as_point(p, d=None):
    a = np.asarray(p, dtype=np.int64)
    if a.ndim != 1:
        raise LatticeError(f"point must be 1-D, got shape {a.shape}")
    if d is not None and a.shape[0] != d:
        raise LatticeError(f"point has dimension {a.shape[0]}, expected {d}")
    return a


class Region:
    """Finite ordered set of lattice points (deduplicated, lex-sorted)."""

    __slots__ = ("coords", "d", "_index", "_hash")

    def __init__(self, coords, d=None):
        a = np.asarray(coords, dtype=np.int64)
        if a.size == 0:
            if d is None:
                raise LatticeError("empty region needs an explicit dimension")
            a = a.reshape(0, d)
        if a.ndim != 2:
            raise LatticeError("region coordinates must be an (n, d) array")
        if d is not None and a.shape[1] != d:
            raise LatticeError(f"region has dimension {a.shape[1]}, expected {d}")
        a = np.unique(a, axis=0)  # also lex-sorts rows
        a.setflags(write=False)
        self.coords = a
        self.d = a.shape[1]
        self._index = None
        self._hash = None

    @property
    def index(self):
        if self._index is None:
            self._index = {tuple(int(v) for v in row): i for i, row in enumerate(self.coords)}
        return self._index

    def __len__(self):
        return self.coords.shape[0]

    def __iter__(self):
        for row in self.coords:
            yield tuple(int(v) for v in row)

    def __contains__(self, p):
        return tuple(int(v) for v in np.asarray(p)) in self.index

    def __eq__(self, other):
        return isinstance(other, Region) and self.d == other.d and np.array_equal(self.coords, other.coords)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.d, self.coords.tobytes()))
        return self._hash

    def __repr__(self):
        return f"Region(d={self.d}, n={len(self)})"

    def union(self, other):
        if other.d != self.d:
            raise LatticeError("dimension mismatch in union")
        return Region(np.vstack([self.coords, other.coords]))

    def difference(self, other):
        keep = [i for i, p in enumerate(self) if p not in other]
        return Region(self.coords[keep], d=self.d)

    def intersection(self, other):
        keep = [i for i, p in enumerate(self) if p in other]
        return Region(self.coords[keep], d=self.d)

    def shifted(self, v):
        v = as_point(v, self.d)
        return Region(self.coords + v[None, :])

    def issubset(self, other):
        return all(p in other for p in self)


def ball(center, r, d=None):
    """Closed Euclidean ball { y : ||y - center|| <= r } intersected with Z^d."""
    center = as_point(center, d)
    if r < 0:
        raise LatticeError("ball radius must be nonnegative")
    d = center.shape[0]
    k = int(np.floor(r))
    r2 = float(r) * float(r)
    axes = np.arange(-k, k + 1, dtype=np.int64)
    # build by accumulating coordinates while pruning on the partial norm
    pts = np.zeros((1, 0), dtype=np.int64)
    norm2 = np.zeros(1)
    for _ in range(d):
        n = pts.shape[0]
        newpts = np.repeat(pts, axes.size, axis=0)
        col = np.tile(axes, n)
        nn = np.repeat(norm2, axes.size) + col.astype(float) ** 2
        keep = nn <= r2 + 1e-9
        pts = np.hstack([newpts[keep], col[keep, None]])
        norm2 = nn[keep]
    return Region(pts + center[None, :])


def box(half_width, d, center=None):
    """Cube [-L, L]^d, optionally shifted."""
    if half_width < 0:
        raise LatticeError("box half-width must be nonnegative")
    axes = np.arange(-half_width, half_width + 1, dtype=np.int64)
    grids = np.meshgrid(*([axes] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    reg = Region(pts)
    return reg if center is None else reg.shifted(center)


def segment(length, d):
    """Points (k, 0, ..., 0) for 0 <= k < length."""
    if length < 1:
        raise LatticeError("segment length must be >= 1")
    pts = np.zeros((length, d), dtype=np.int64)
    pts[:, 0] = np.arange(length)
    return Region(pts)


def boundary(region: Region) -> Region:
    """Points of A with at least one nearest neighbour outside A."""
    keep = []
    idx = region.index
    for i, p in enumerate(region):
        onb = False
        for j in range(region.d):
            for s in (-1, 1):
                q = list(p)
                q[j] += s
                if tuple(q) not in idx:
                    onb = True
                    break
            if onb:
                break
        if onb:
            keep.append(i)
    return Region(region.coords[keep], d=region.d)


def interior_mask(region: Region):
    """Boolean mask of points whose 2d neighbours all lie in the region."""
    idx = region.index
    mask = np.zeros(len(region), dtype=bool)
    for i, p in enumerate(region):
        inside = True
        for j in range(region.d):
            if (*p[:j], p[j] + 1, *p[j + 1:]) not in idx or (*p[:j], p[j] - 1, *p[j + 1:]) not in idx:
                inside = False
                break
        mask[i] = inside
    return mask


def dist_to_set(x, K: Region) -> float:
    if len(K) == 0:
        raise LatticeError("distance to an empty region is undefined")
    x = as_point(x, K.d)
    diffs = K.coords - x[None, :]
    return float(np.sqrt((diffs.astype(float) ** 2).sum(axis=1).min()))


def diam(K: Region) -> float:
    if len(K) == 0:
        raise LatticeError("diameter of an empty region is undefined")
    c = K.coords.astype(float)
    # exact pairwise max; suite sets are small enough for the quadratic scan
    best = 0.0
    for i in range(c.shape[0]):
        d2 = ((c[i + 1:] - c[i]) ** 2).sum(axis=1)
        if d2.size:
            best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def max_norm(K: Region) -> float:
    if len(K) == 0:
        return 0.0
    return float(np.sqrt((K.coords.astype(float) ** 2).sum(axis=1).max()))


def read_points_csv(path, d):
    """One point per line, d comma-separated integers; '#' starts a comment."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d:
                raise LatticeError(f"{path}:{lineno}: expected {d} coordinates, got {len(parts)}")
            rows.append([int(p) for p in parts])
    return Region(rows, d=d)


def write_points_csv(region: Region, path):
    with open(path, "w", encoding="utf-8") as fh:
        for p in region:
            fh.write(",".join(str(v) for v in p) + "\n")


# --------------------------------------------------------------------------
# region spec grammar


class _Parser:
    def __init__(self, text, d):
        self.text = text
        self.d = d
        self.pos = 0

    def error(self, msg):
        raise RegionSpecError(msg, self.pos)

    def peek(self):
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def parse(self):
        node = self.parse_expr()
        if self.pos != len(self.text):
            self.error("trailing input")
        return node

    def parse_expr(self):
        for name in ("union", "shift", "ball", "box", "segment", "points"):
            if self.text.startswith(name, self.pos):
                self.pos += len(name)
                return getattr(self, "parse_" + name)()
        self.error("expected a region form")

    def _number(self):
        start = self.pos
        while self.peek() and self.peek() in "+-0123456789.":
            self.pos += 1
        tok = self.text[start:self.pos]
        if not tok:
            self.error("expected a number")
        try:
            return float(tok) if "." in tok else int(tok)
        except ValueError:
            self.pos = start
            self.error(f"bad number {tok!r}")

    def parse_ball(self):
        self.expect(":")
        return ("ball", self._number())

    def parse_box(self):
        self.expect(":")
        return ("box", self._number())

    def parse_segment(self):
        self.expect(":")
        return ("segment", self._number())

    def parse_points(self):
        self.expect(":")
        self.expect("@")
        start = self.pos
        while self.peek() not in (";", ")", ""):
            self.pos += 1
        return ("points", self.text[start:self.pos])

    def parse_union(self):
        self.expect("(")
        parts = [self.parse_expr()]
        while self.peek() == ";":
            self.pos += 1
            parts.append(self.parse_expr())
        self.expect(")")
        return ("union", parts)

    def parse_shift(self):
        self.expect("(")
        inner = self.parse_expr()
        self.expect(";")
        vec = [self._number()]
        while self.peek() == ",":
            self.pos += 1
            vec.append(self._number())
        self.expect(")")
        if len(vec) != self.d:
            self.error(f"shift vector has {len(vec)} coordinates, expected {self.d}")
        return ("shift", inner, vec)


def parse_region_expr(spec: str, d: int):
    """Parse a spec string to its expression tree without evaluating it."""
    return _Parser(spec.strip(), d).parse()


def eval_region_expr(node, d: int) -> Region:
    kind = node[0]
    if kind == "ball":
        return ball([0] * d, node[1])
    if kind == "box":
        return box(int(node[1]), d)
    if kind == "segment":
        return segment(int(node[1]), d)
    if kind == "points":
        return read_points_csv(node[1], d)
    if kind == "union":
        reg = eval_region_expr(node[1][0], d)
        for sub in node[1][1:]:
            reg = reg.union(eval_region_expr(sub, d))
        return reg
    if kind == "shift":
        return eval_region_expr(node[1], d).shifted([int(v) for v in node[2]])
    raise LatticeError(f"unknown node {kind!r}")


def parse_region(spec: str, d: int) -> Region:
    return eval_region_expr(parse_region_expr(spec, d), d)


def print_region_expr(node) -> str:
    """Canonical printer; parse(print(e)) reproduces the same Region."""
    kind = node[0]
    if kind in ("ball", "box", "segment"):
        v = node[1]
        return f"{kind}:{v:g}" if isinstance(v, float) else f"{kind}:{v}"
    if kind == "points":
        return f"points:@{node[1]}"
    if kind == "union":
        return "union(" + ";".join(print_region_expr(s) for s in node[1]) + ")"
    if kind == "shift":
        vec = ",".join(str(int(v)) for v in node[2])
        return f"shift({print_region_expr(node[1])};{vec})"
    raise LatticeError(f"unknown node {kind!r}")

"""Arena-encoded tree samplers and tree-level queries.

Four samplers: the critical tree, the adjoint tree (root offspring from the
tail-sum law), the truncated past tree (spine + adjoint trees, all lineages
killed on first exit of B(0, r_trunc)), and the truncated invariant tree
(root + spine with (k_p, k_f) splits).  They consume randomness in exactly
the same order as the streaming kernels, so an arena sample and a kernel run
with the same stream agree node for node; the heavy estimators stream instead
of storing arenas.

Labels realise the bi-infinite contour order of the invariant tree: future
vertices get 0, 1, 2, ... along (root, root's future subtrees, then future
subtrees by spine index, preorder); the past block of spine vertex n is
[v_n, preorder(past subtrees of v_n)] occupying the next most-negative
labels, v_n deepest.  The shift reroots at the vertex whose shifted label is
zero, which is what makes the shift-invariance tests meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import Region
from .offspring import OffspringDistribution

PART_ROOT = 0          # critical/adjoint root
PART_SPINE = 1
PART_PAST = 2
PART_FUTURE = 3

PART_NAMES = {PART_ROOT: "root", PART_SPINE: "spine", PART_PAST: "past",
              PART_FUTURE: "future"}


class InsufficientTruncation(RuntimeError):
    """The requested shift needs vertices outside the sampled window."""


@dataclass
class SampleBudget:
    max_nodes: int = 10_000_000
    r_trunc: float = 0.0

    def __post_init__(self):
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")


@dataclass
class BrwTree:
    d: int
    kind: str
    parent: np.ndarray
    position: np.ndarray
    part: np.ndarray
    spine_index: np.ndarray
    labels: np.ndarray
    spine_positions: np.ndarray
    truncated: bool = False
    trunc_reason: str = ""
    root: int = 0
    _pos_index: dict = field(default=None, repr=False)

    def __len__(self):
        return self.parent.shape[0]

    # -- views ---------------------------------------------------------------

    def view_nodes(self, view="all"):
        """Node indices of a view, in canonical (label) order.

        all: every node; past: negative labels ascending (from the horizon);
        future: nonnegative labels ascending.  Critical trees have only the
        future view (= preorder).
        """
        lab = self.labels
        if view == "all":
            return np.argsort(lab, kind="stable")
        if view == "future":
            ids = np.nonzero(lab >= 0)[0]
        elif view == "past":
            ids = np.nonzero(lab < 0)[0]
        else:
            raise ValueError(f"unknown view {view!r}")
        return ids[np.argsort(lab[ids], kind="stable")]

    def positions(self, view="all"):
        return self.position[self.view_nodes(view)]

    # -- queries --------------------------------------------------------------

    def local_time(self, A, view="all") -> int:
        if isinstance(A, Region):
            idx = A.index
        else:
            idx = {tuple(int(v) for v in p): 0 for p in np.atleast_2d(A)}
        return sum(1 for p in self.positions(view)
                   if tuple(int(v) for v in p) in idx)

    def range_region(self, view="all") -> Region:
        return Region(self.positions(view), d=self.d)

    def hits(self, A, view="all") -> bool:
        return self.local_time(A, view) > 0

    def first_hit(self, A, view="future"):
        """First entry to A in canonical order: (point, node id) or None."""
        if isinstance(A, Region):
            idx = A.index
        else:
            idx = {tuple(int(v) for v in p): 0 for p in np.atleast_2d(A)}
        for i in self.view_nodes(view):
            p = tuple(int(v) for v in self.position[i])
            if p in idx:
                return p, int(i)
        return None

    def dump_csv(self, path):
        """Debug dump: index,parent,part,label,x1,...,xd per node."""
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(len(self)):
                coords = ",".join(str(int(v)) for v in self.position[i])
                fh.write(f"{i},{int(self.parent[i])},{PART_NAMES[int(self.part[i])]},"
                         f"{int(self.labels[i])},{coords}\n")


def dfs_labels(tree: BrwTree):
    return tree.labels.copy()


# --------------------------------------------------------------------------
# arena construction helpers (protocol identical to the kernels)


class _Arena:
    def __init__(self, d, max_nodes):
        self.d = d
        self.max_nodes = max_nodes
        self.parent = []
        self.position = []
        self.part = []
        self.spine_index = []
        self.block = []       # (view_rank, spine_n, seq) used for labels
        self.exhausted = False

    def add(self, parent, pos, part, spine_n):
        if len(self.parent) >= self.max_nodes:
            self.exhausted = True
            raise _Stop()
        self.parent.append(parent)
        self.position.append(tuple(pos))
        self.part.append(part)
        self.spine_index.append(spine_n)
        return len(self.parent) - 1


class _Stop(Exception):
    pass


def _step(rng, pos, d):
    u = rng.random()
    j = int(u * 2 * d)
    pos[j >> 1] += 1 if (j & 1) == 0 else -1


def _count(rng, cdf):
    u = rng.random()
    k = 0
    last = cdf.size - 1
    while k < last and u >= cdf[k]:
        k += 1
    return k


def _norm2(pos):
    return sum(int(c) * int(c) for c in pos)


def _grow_subtree(rng, arena, mu_cdf, root_cdf, r2_kill, root_pos, root_parent,
                  root_part, child_part, spine_n):
    """Mirror of the kernels' subtree walk, recording nodes."""
    d = arena.d
    ridx = arena.add(root_parent, root_pos, root_part, spine_n)
    if r2_kill >= 0 and _norm2(root_pos) > r2_kill:
        return ridx
    stack = [(list(root_pos), ridx, _count(rng, root_cdf))]
    while stack:
        pos, idx, pending = stack[-1]
        if pending == 0:
            stack.pop()
            continue
        stack[-1] = (pos, idx, pending - 1)
        child = list(pos)
        _step(rng, child, d)
        cidx = arena.add(idx, child, child_part, spine_n)
        if r2_kill >= 0 and _norm2(child) > r2_kill:
            continue
        stack.append((child, cidx, _count(rng, mu_cdf)))
    return ridx


def _finish(arena, kind, spine_positions, truncated, reason, labels):
    n = len(arena.parent)
    return BrwTree(
        d=arena.d, kind=kind,
        parent=np.asarray(arena.parent, dtype=np.int64),
        position=np.asarray(arena.position, dtype=np.int64).reshape(n, arena.d),
        part=np.asarray(arena.part, dtype=np.int8),
        spine_index=np.asarray(arena.spine_index, dtype=np.int32),
        labels=np.asarray(labels, dtype=np.int64),
        spine_positions=np.asarray(spine_positions, dtype=np.int64).reshape(-1, arena.d),
        truncated=truncated, trunc_reason=reason)


def sample_critical(x, mu: OffspringDistribution, budget: SampleBudget, rng,
                    root_adjoint=False) -> BrwTree:
    """Critical (or adjoint-rooted) tree; preorder labels 0..n-1."""
    d = len(x)
    arena = _Arena(d, budget.max_nodes)
    r2 = budget.r_trunc ** 2 if budget.r_trunc > 0 else -1.0
    root_cdf = mu.adj_cdf if root_adjoint else mu.cdf
    truncated, reason = False, ""
    try:
        _grow_subtree(rng, arena, mu.cdf, root_cdf, r2, list(x), -1,
                      PART_ROOT, PART_ROOT, -1)
    except _Stop:
        truncated, reason = True, "node_budget"
    labels = np.arange(len(arena.parent))
    kind = "adjoint" if root_adjoint else "critical"
    return _finish(arena, kind, np.asarray(x, dtype=np.int64).reshape(1, d),
                   truncated, reason, labels)


def sample_adjoint(x, mu, budget, rng) -> BrwTree:
    return sample_critical(x, mu, budget, rng, root_adjoint=True)


def sample_past(x, mu: OffspringDistribution, budget: SampleBudget, rng) -> BrwTree:
    """Truncated past tree: the root site x is excluded; spine vertices are
    the adjoint-tree roots and belong to the past."""
    if budget.r_trunc <= 0:
        raise ValueError("sample_past requires a positive truncation radius")
    d = len(x)
    arena = _Arena(d, budget.max_nodes)
    r2 = budget.r_trunc ** 2
    pos = list(x)
    spine_positions = [tuple(pos)]
    truncated, reason = True, "r_trunc"
    prev_spine_idx = -1
    n = 0
    try:
        while True:
            n += 1
            _step(rng, pos, d)
            spine_positions.append(tuple(pos))
            prev_spine_idx = _grow_subtree(rng, arena, mu.cdf, mu.adj_cdf, r2,
                                           list(pos), prev_spine_idx,
                                           PART_SPINE, PART_PAST, n)
            if _norm2(pos) > r2:
                break
    except _Stop:
        reason = "node_budget"
    labels = _past_labels(arena)
    return _finish(arena, "past", spine_positions, truncated, reason, labels)


def _past_labels(arena):
    """Contour labels for a pure-past sample: blocks by spine index,
    [v_n, preorder(subtrees)] with v_n deepest, nearest block closest to -1."""
    n = len(arena.parent)
    labels = np.zeros(n, dtype=np.int64)
    spine_n = np.asarray(arena.spine_index)
    order = np.arange(n)
    used = 0
    for s in sorted(set(spine_n.tolist())):
        block = order[spine_n == s]  # creation order = [v_s, preorder subtrees]
        size = block.size
        labels[block[0]] = -(used + size)
        for i, idx in enumerate(block[1:], start=1):
            labels[idx] = -(used + size - i)
        used += size
    return labels


def sample_full(x, mu: OffspringDistribution, budget: SampleBudget, rng) -> BrwTree:
    """Truncated invariant tree; the root is in the future, the spine in the
    past; spine vertex n >= 1 hangs k_p past and k_f future normal subtrees
    with P(k_p = i, k_f = j) = mu(i + j + 1)."""
    if budget.r_trunc <= 0:
        raise ValueError("sample_full requires a positive truncation radius")
    d = len(x)
    arena = _Arena(d, budget.max_nodes)
    r2 = budget.r_trunc ** 2
    pos = list(x)
    spine_positions = [tuple(pos)]
    truncated, reason = True, "r_trunc"
    try:
        ridx = arena.add(-1, pos, PART_SPINE, 0)
        if _norm2(pos) <= r2:
            kr = _count(rng, mu.cdf)
            for _ in range(kr):
                child = list(pos)
                _step(rng, child, d)
                _grow_subtree(rng, arena, mu.cdf, mu.cdf, r2, child, ridx,
                              PART_FUTURE, PART_FUTURE, 0)
        nspine = 0
        prev = ridx
        while True:
            nspine += 1
            _step(rng, pos, d)
            spine_positions.append(tuple(pos))
            vidx = arena.add(prev, pos, PART_SPINE, nspine)
            prev = vidx
            if _norm2(pos) <= r2:
                kp, kf = _draw_split(rng, mu)
                for _ in range(kp):
                    child = list(pos)
                    _step(rng, child, d)
                    _grow_subtree(rng, arena, mu.cdf, mu.cdf, r2, child, vidx,
                                  PART_PAST, PART_PAST, nspine)
                for _ in range(kf):
                    child = list(pos)
                    _step(rng, child, d)
                    _grow_subtree(rng, arena, mu.cdf, mu.cdf, r2, child, vidx,
                                  PART_FUTURE, PART_FUTURE, nspine)
            if _norm2(pos) > r2:
                break
    except _Stop:
        reason = "node_budget"
    labels = _full_labels(arena)
    return _finish(arena, "full", spine_positions, truncated, reason, labels)


def _full_labels(arena):
    """Contour labels from (part, spine index, creation order)."""
    n = len(arena.parent)
    part = np.asarray(arena.part)
    spine_n = np.asarray(arena.spine_index)
    labels = np.zeros(n, dtype=np.int64)
    order = np.arange(n)
    future = order[(part == PART_FUTURE) | ((part == PART_SPINE) & (spine_n == 0))]
    future = future[np.lexsort((future, spine_n[future]))]
    labels[future] = np.arange(future.size)
    used = 0
    past_ns = sorted(set(spine_n[(part == PART_PAST) | ((part == PART_SPINE) & (spine_n > 0))].tolist()))
    for sidx in past_ns:
        block = order[((part == PART_PAST) | (part == PART_SPINE)) & (spine_n == sidx)]
        size = block.size
        labels[block[0]] = -(used + size)
        for i, idx in enumerate(block[1:], start=1):
            labels[idx] = -(used + size - i)
        used += size
    return labels


def _draw_split(rng, mu):
    u = rng.random()
    k = 0
    last = mu.split_cdf.size - 1
    while k < last and u >= mu.split_cdf[k]:
        k += 1
    return int(mu.split_kp[k]), int(mu.split_kf[k])


# --------------------------------------------------------------------------
# shift transformation

def shift(tree: BrwTree, k: int) -> BrwTree:
    """theta^k for k = +1 or -1: relabel, reroot at the new label-0 vertex,
    rebuild parents and spine tags.  shift(shift(t, +1), -1) is the identity
    node for node."""
    if tree.kind != "full":
        raise InsufficientTruncation("shift is defined on invariant-tree samples")
    if k not in (1, -1):
        raise ValueError("k must be +1 or -1")
    new_labels = tree.labels + k
    root_cand = np.nonzero(new_labels == 0)[0]
    if root_cand.size != 1:
        raise InsufficientTruncation(
            f"no vertex takes label 0 under shift {k:+d} in this truncation")
    new_root = int(root_cand[0])

    n = len(tree)
    adj = [[] for _ in range(n)]
    for i in range(n):
        p = int(tree.parent[i])
        if p >= 0:
            adj[i].append(p)
            adj[p].append(i)

    # reroot: parents via BFS from the new root
    new_parent = np.full(n, -1, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    seen[new_root] = True
    queue = [new_root]
    while queue:
        v = queue.pop(0)
        for w in adj[v]:
            if not seen[w]:
                seen[w] = True
                new_parent[w] = v
                queue.append(w)

    # new spine: path from the new root to the old horizon end
    old_spine = np.nonzero(tree.part == PART_SPINE)[0]
    horizon = int(old_spine[np.argmax(tree.spine_index[old_spine])])
    path = [horizon]
    while path[-1] != new_root:
        path.append(int(new_parent[path[-1]]))
    path.reverse()  # new_root .. horizon
    new_part = np.where(new_labels < 0, PART_PAST, PART_FUTURE).astype(np.int8)
    new_spine_index = np.full(n, -1, dtype=np.int32)
    for s, v in enumerate(path):
        new_part[v] = PART_SPINE
        new_spine_index[v] = s
    spine_positions = tree.position[path]

    return BrwTree(d=tree.d, kind="full", parent=new_parent,
                   position=tree.position.copy(), part=new_part,
                   spine_index=new_spine_index, labels=new_labels,
                   spine_positions=spine_positions,
                   truncated=tree.truncated, trunc_reason=tree.trunc_reason,
                   root=new_root)

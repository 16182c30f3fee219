"""Pure-Python sampling kernels (fallback backend).

This module is the executable specification of the draw protocol; the Cython
module `brwcap._kernels` mirrors it operation for operation, so both backends
produce bit-identical results for the same (task key, replicate) streams.

Protocol (per replicate, Philox4x64-10 keyed by ``[task_key, replicate]``,
doubles are ``(next_uint64 >> 11) * 2^-53``):

* step:       u -> j = int(u*2d); axis j>>1; sign +1 if j even else -1
* count:      u -> smallest k with u < cdf[k] (capped at the last index)
* split:      u -> index into the flattened (k_p, k_f) tables
* a node draws its offspring count at its visit, and only if it lies inside
  the truncation ball (outside nodes are leaves and draw nothing)
* spine loop: step, visit, subtrees, then stop once the vertex is outside
  the ball (the exit vertex is still processed)

Trees are explored depth-first, children in sampled order, each child's
subtree fully explored before the next sibling (preorder = the paper's
lexicographic order).
"""

from __future__ import annotations

import numpy as np

from ._tables import PointTable

BACKEND = "python"

_CLONE_SALT = 0xB5297A4D3F84D5A9


def _rng(k0: int, rep: int):
    return np.random.Generator(np.random.Philox(key=np.array([k0, rep], dtype=np.uint64)))


def _step(rng, pos, d):
    u = rng.random()
    j = int(u * 2 * d)
    axis = j >> 1
    pos[axis] += 1 if (j & 1) == 0 else -1
    return axis


def _count(rng, cdf) -> int:
    u = rng.random()
    k = 0
    last = cdf.size - 1
    while k < last and u >= cdf[k]:
        k += 1
    return k


def _norm2(pos) -> int:
    return int(sum(int(c) * int(c) for c in pos))


class _Budget(Exception):
    pass


class _TreeWalk:
    """DFS over one subtree; calls ``visit`` on every node including the root.

    ``visit(pos) -> True`` requests an early stop (propagated as ``hit``).
    """

    def __init__(self, rng, d, mu_cdf, r2_kill, budget):
        self.rng = rng
        self.d = d
        self.mu_cdf = mu_cdf
        self.r2_kill = r2_kill
        self.budget = budget  # one-element list: remaining node budget

    def _charge(self):
        self.budget[0] -= 1
        if self.budget[0] < 0:
            raise _Budget()

    def run(self, root_pos, root_cdf, visit) -> bool:
        d = self.d
        pos = list(root_pos)
        self._charge()
        if visit(pos):
            return True
        n2 = _norm2(pos)
        if self.r2_kill >= 0 and n2 > self.r2_kill:
            return False
        stack = [(pos, _count(self.rng, root_cdf))]
        while stack:
            parent, pending = stack[-1]
            if pending == 0:
                stack.pop()
                continue
            stack[-1] = (parent, pending - 1)
            child = list(parent)
            _step(self.rng, child, d)
            self._charge()
            if visit(child):
                return True
            if self.r2_kill >= 0 and _norm2(child) > self.r2_kill:
                continue
            stack.append((child, _count(self.rng, self.mu_cdf)))
        return False


def _probe(table: PointTable, pos) -> int:
    return table.lookup(pos)


# --------------------------------------------------------------------------
# simple random walk visits (Green's function MC oracle)

def srw_visits(k0, rep0, nreps, d, horizon, table: PointTable):
    nt = table.n
    sums = np.zeros(nt, dtype=np.int64)
    sumsq = np.zeros(nt, dtype=np.float64)
    for r in range(rep0, rep0 + nreps):
        rng = _rng(k0, r)
        pos = [0] * d
        counts = np.zeros(nt, dtype=np.int64)
        v = _probe(table, pos)
        if v >= 0:
            counts[v] += 1
        for _ in range(horizon):
            _step(rng, pos, d)
            v = _probe(table, pos)
            if v >= 0:
                counts[v] += 1
        sums += counts
        sumsq += counts.astype(np.float64) ** 2
    return sums, sumsq


# --------------------------------------------------------------------------
# single-tree kernels (critical / adjoint root law)

def tree_avoid(k0, rep0, nreps, d, x0, root_adjoint, mu_cdf, adj_cdf,
               set_table: PointTable, r2_kill, max_nodes):
    root_cdf = adj_cdf if root_adjoint else mu_cdf
    n_avoid = n_hit = n_abort = 0
    for r in range(rep0, rep0 + nreps):
        rng = _rng(k0, r)
        budget = [max_nodes]
        walk = _TreeWalk(rng, d, mu_cdf, r2_kill, budget)
        try:
            hit = walk.run(x0, root_cdf, lambda p: _probe(set_table, p) >= 0)
        except _Budget:
            n_abort += 1
            continue
        if hit:
            n_hit += 1
        else:
            n_avoid += 1
    return n_avoid, n_hit, n_abort


def tree_visits(k0, rep0, nreps, d, x0, root_adjoint, mu_cdf, adj_cdf,
                table: PointTable, r2_kill, max_nodes):
    root_cdf = adj_cdf if root_adjoint else mu_cdf
    nt = table.n
    sums = np.zeros(nt, dtype=np.int64)
    sumsq = np.zeros(nt, dtype=np.float64)
    n_abort = 0
    for r in range(rep0, rep0 + nreps):
        rng = _rng(k0, r)
        counts = np.zeros(nt, dtype=np.int64)

        def visit(p):
            v = _probe(table, p)
            if v >= 0:
                counts[v] += 1
            return False

        walk = _TreeWalk(rng, d, mu_cdf, r2_kill, [max_nodes])
        try:
            walk.run(x0, root_cdf, visit)
        except _Budget:
            n_abort += 1
            continue
        sums += counts
        sumsq += counts.astype(np.float64) ** 2
    return sums, sumsq, n_abort


def tree_first_entry(k0, rep0, nreps, d, x0, mu_cdf, set_table: PointTable,
                     gamma, max_nodes):
    """Critical tree from x0; compare the first-entry root path with gamma.

    gamma is an (L+1, d) array with gamma[0] = x0.  Returns counts of
    (entry found, entry path == gamma, aborts).
    """
    gamma = np.asarray(gamma, dtype=np.int64)
    n_hit = n_match = n_abort = 0
    for r in range(rep0, rep0 + nreps):
        rng = _rng(k0, r)
        budget = [max_nodes]
        pos = list(x0)
        path = [tuple(pos)]  # current root path, parallel to the DFS stack

        def charge():
            budget[0] -= 1
            if budget[0] < 0:
                raise _Budget()

        found = None
        try:
            charge()
            if _probe(set_table, pos) >= 0:
                found = [tuple(pos)]
            else:
                stack = [(pos, _count(rng, mu_cdf))]
                while stack and found is None:
                    parent, pending = stack[-1]
                    if pending == 0:
                        stack.pop()
                        path.pop()
                        continue
                    stack[-1] = (parent, pending - 1)
                    child = list(parent)
                    _step(rng, child, d)
                    charge()
                    if _probe(set_table, child) >= 0:
                        found = path + [tuple(child)]
                        break
                    stack.append((child, _count(rng, mu_cdf)))
                    path.append(tuple(child))
        except _Budget:
            n_abort += 1
            continue
        if found is not None:
            n_hit += 1
            if len(found) == gamma.shape[0] and all(
                    tuple(gamma[i]) == found[i] for i in range(len(found))):
                n_match += 1
    return n_hit, n_match, n_abort


def tree_height_tail(k0, rep0, nreps, mu_cdf, hgate, max_nodes):
    """P(critical tree height >= hgate); spatial draws skipped entirely."""
    n_reach = n_abort = 0
    for r in range(rep0, rep0 + nreps):
        rng = _rng(k0, r)
        nodes = 1
        if hgate <= 0:
            n_reach += 1
            continue
        stack = [_count(rng, mu_cdf)]
        reached = False
        while stack:
            if stack[-1] == 0:
                stack.pop()
                continue
            stack[-1] -= 1
            nodes += 1
            if nodes > max_nodes:
                n_abort += 1
                reached = None
                break
            depth = len(stack)  # child depth
            if depth >= hgate:
                reached = True
                break
            stack.append(_count(rng, mu_cdf))
        if reached:
            n_reach += 1
    return n_reach, n_abort


# --------------------------------------------------------------------------
# past tree (spine + adjoint trees), lineages killed outside B(0, sqrt(r2))

def _past_loop(rng, d, x0, mu_cdf, adj_cdf, r2_trunc, budget, visit):
    """Shared spine loop; returns True if visit() requested a stop."""
    walk = _TreeWalk(rng, d, mu_cdf, r2_trunc, budget)
    pos = list(x0)
    while True:
        _step(rng, pos, d)
        if walk.run(pos, adj_cdf, visit):
            return True
        if _norm2(pos) > r2_trunc:
            return False


def past_avoid(k0, rep0, nreps, d, x0, mu_cdf, adj_cdf, set_table: PointTable,
               r2_trunc, max_nodes):
    n_avoid = n_hit = n_abort = 0
    for r in range(rep0, rep0 + nreps):
        rng = _rng(k0, r)
        try:
            hit = _past_loop(rng, d, x0, mu_cdf, adj_cdf, r2_trunc, [max_nodes],
                             lambda p: _probe(set_table, p) >= 0)
        except _Budget:
            n_abort += 1
            continue
        if hit:
            n_hit += 1
        else:
            n_avoid += 1
    return n_avoid, n_hit, n_abort


def past_visits(k0, rep0, nreps, d, x0, mu_cdf, adj_cdf, table: PointTable,
                r2_trunc, max_nodes):
    nt = table.n
    sums = np.zeros(nt, dtype=np.int64)
    sumsq = np.zeros(nt, dtype=np.float64)
    n_abort = 0
    for r in range(rep0, rep0 + nreps):
        rng = _rng(k0, r)
        counts = np.zeros(nt, dtype=np.int64)

        def visit(p):
            v = _probe(table, p)
            if v >= 0:
                counts[v] += 1
            return False

        try:
            _past_loop(rng, d, x0, mu_cdf, adj_cdf, r2_trunc, [max_nodes], visit)
        except _Budget:
            n_abort += 1
            continue
        sums += counts
        sumsq += counts.astype(np.float64) ** 2
    return sums, sumsq, n_abort


# --------------------------------------------------------------------------
# full invariant tree: root (future) + spine (past) + hanging subtrees

def _split(rng, split_cdf, split_kp, split_kf):
    u = rng.random()
    k = 0
    last = split_cdf.size - 1
    while k < last and u >= split_cdf[k]:
        k += 1
    return int(split_kp[k]), int(split_kf[k])


def _full_loop(rng, d, x0, mu_cdf, split_cdf, split_kp, split_kf, r2_trunc,
               budget, visit_past, visit_future, critical_only=False,
               skip_future=None):
    """Single pass over the truncated invariant tree.

    visit_* return True to stop the whole replicate.  ``skip_future`` is an
    optional callable; when it returns True, pending future subtrees are not
    grown (their draws are skipped too; both backends implement this).
    """
    walk = _TreeWalk(rng, d, mu_cdf, r2_trunc, budget)

    def subtrees(parent, count, visit):
        for _ in range(count):
            child = list(parent)
            _step(rng, child, d)
            if walk.run(child, mu_cdf, visit):
                return True
        return False

    # the root and its normal children belong to the future
    pos = list(x0)
    walk._charge()
    if visit_future(pos):
        return True
    if _norm2(pos) <= r2_trunc:
        kr = _count(rng, mu_cdf)
        if not (skip_future and skip_future()):
            if subtrees(pos, kr, visit_future):
                return True
    if critical_only:
        return False
    while True:
        _step(rng, pos, d)
        walk._charge()
        if visit_past(pos):
            return True
        if _norm2(pos) <= r2_trunc:
            kp, kf = _split(rng, split_cdf, split_kp, split_kf)
            if subtrees(pos, kp, visit_past):
                return True
            if not (skip_future and skip_future()):
                if subtrees(pos, kf, visit_future):
                    return True
        if _norm2(pos) > r2_trunc:
            return False


def full_lastpassage(k0, rep0, nreps, d, x0, mu_cdf, split_cdf, split_kp,
                     split_kf, past_table: PointTable, future_table: PointTable,
                     r2_trunc, max_nodes):
    """Joint event: past avoids (K u B) and the future first hits K in K'.

    future_table maps K with payload 1 on K' and 0 elsewhere.
    Returns (n_event, n_past_avoid, n_abort).
    """
    n_event = n_past_avoid = n_abort = 0
    for r in range(rep0, rep0 + nreps):
        rng = _rng(k0, r)
        state = {"entry": -1}

        def visit_past(p):
            return _probe(past_table, p) >= 0  # any past hit kills the event

        def visit_future(p):
            if state["entry"] < 0:
                v = _probe(future_table, p)
                if v >= 0:
                    state["entry"] = v
            return False

        try:
            past_hit = _full_loop(rng, d, x0, mu_cdf, split_cdf, split_kp,
                                  split_kf, r2_trunc, [max_nodes],
                                  visit_past, visit_future,
                                  skip_future=lambda: state["entry"] >= 0)
        except _Budget:
            n_abort += 1
            continue
        if not past_hit:
            n_past_avoid += 1
            if state["entry"] == 1:
                n_event += 1
    return n_event, n_past_avoid, n_abort


def full_phi_sum(k0, rep0, nreps, d, x0, mu_cdf, split_cdf, split_kp, split_kf,
                 phi_table: PointTable, phi_vals, r2_trunc, max_nodes,
                 critical_only):
    """Per-replicate sums of phi over all tree positions (with multiplicity)."""
    phi_vals = np.asarray(phi_vals, dtype=np.float64)
    sums = np.zeros(nreps, dtype=np.float64)
    aborted = np.zeros(nreps, dtype=bool)
    for i, r in enumerate(range(rep0, rep0 + nreps)):
        rng = _rng(k0, r)
        acc = [0.0]

        def visit(p):
            v = _probe(phi_table, p)
            if v >= 0:
                acc[0] += phi_vals[v]
            return False

        try:
            _full_loop(rng, d, x0, mu_cdf, split_cdf, split_kp, split_kf,
                       r2_trunc, [max_nodes], visit, visit,
                       critical_only=critical_only)
        except _Budget:
            aborted[i] = True
        sums[i] = acc[0]
    return sums, aborted


def full_localtime(k0, rep0, nreps, d, x0, mu_cdf, split_cdf, split_kp,
                   split_kf, set_table: PointTable, n_sets, r2_trunc,
                   max_nodes):
    """Per-replicate local times of each target set (payload = set index)."""
    counts = np.zeros((nreps, n_sets), dtype=np.int64)
    aborted = np.zeros(nreps, dtype=bool)
    for i, r in enumerate(range(rep0, rep0 + nreps)):
        rng = _rng(k0, r)
        row = counts[i]

        def visit(p):
            v = _probe(set_table, p)
            if v >= 0:
                row[v] += 1
            return False

        try:
            _full_loop(rng, d, x0, mu_cdf, split_cdf, split_kp, split_kf,
                       r2_trunc, [max_nodes], visit, visit)
        except _Budget:
            aborted[i] = True
    return counts, aborted


# --------------------------------------------------------------------------
# resumable grower for rare-event splitting on local times

_ST_LEVEL, _ST_DONE, _ST_ABORT = 0, 1, 2


class LocaltimeGrower:
    """Grows one truncated invariant tree, pausing at local-time levels.

    Same protocol as full_localtime.  ``clone`` hands continuations fresh
    Philox keys, so a split replicate is a deterministic function of its
    (key0, key1) lineage.
    """

    def __init__(self, d, x0, mu_cdf, split_cdf, split_kp, split_kf,
                 set_table, n_sets, r2_trunc, max_nodes, key0, key1):
        self.d = d
        self.mu_cdf = mu_cdf
        self.split_cdf = split_cdf
        self.split_kp = split_kp
        self.split_kf = split_kf
        self.set_table = set_table
        self.r2_trunc = r2_trunc
        self.key0 = key0
        self.key1 = key1
        self.rng = np.random.Generator(
            np.random.Philox(key=np.array([key0, key1], dtype=np.uint64)))
        self.counts = np.zeros(n_sets, dtype=np.int64)
        self.budget = max_nodes
        self.spine = list(x0)
        self.stack = []          # [(pos, pending), ...] of the current subtree
        self.trees_rem = 0       # subtrees not yet started at the current slot
        self.slot_pos = None
        self.root_done = False
        self.spine_exited = False
        self.finished = False
        self.aborted = False

    def min_count(self):
        return int(self.counts.min())

    def clone(self, new_key1):
        g = LocaltimeGrower.__new__(LocaltimeGrower)
        for name in ("d", "mu_cdf", "split_cdf", "split_kp", "split_kf",
                     "set_table", "r2_trunc"):
            setattr(g, name, getattr(self, name))
        g.key0 = self.key0 ^ _CLONE_SALT
        g.key1 = new_key1
        g.rng = np.random.Generator(
            np.random.Philox(key=np.array([g.key0, g.key1], dtype=np.uint64)))
        g.counts = self.counts.copy()
        g.budget = self.budget
        g.spine = list(self.spine)
        g.stack = [(list(p), n) for p, n in self.stack]
        g.trees_rem = self.trees_rem
        g.slot_pos = None if self.slot_pos is None else list(self.slot_pos)
        g.root_done = self.root_done
        g.spine_exited = self.spine_exited
        g.finished = self.finished
        g.aborted = self.aborted
        return g

    def _visit(self, pos):
        self.budget -= 1
        if self.budget < 0:
            raise _Budget()
        v = _probe(self.set_table, pos)
        if v >= 0:
            self.counts[v] += 1
            return True
        return False

    def _inside(self, pos):
        return _norm2(pos) <= self.r2_trunc

    def grow_until(self, level):
        """Grow until min count >= level (level < 0: to exhaustion)."""
        try:
            return self._grow(level)
        except _Budget:
            self.aborted = True
            self.finished = True
            return _ST_ABORT

    def _grow(self, level):
        def reached():
            return level >= 0 and self.counts.min() >= level

        if self.finished:
            return _ST_DONE
        if not self.root_done:
            self.root_done = True
            self.slot_pos = list(self.spine)
            bumped = self._visit(self.slot_pos)
            self.trees_rem = _count(self.rng, self.mu_cdf) if self._inside(self.slot_pos) else 0
            if bumped and reached():
                return _ST_LEVEL
        while True:
            # finish the subtree in progress
            while self.stack:
                parent, pending = self.stack[-1]
                if pending == 0:
                    self.stack.pop()
                    continue
                self.stack[-1] = (parent, pending - 1)
                child = list(parent)
                _step(self.rng, child, self.d)
                bumped = self._visit(child)
                if self._inside(child):
                    self.stack.append((child, _count(self.rng, self.mu_cdf)))
                if bumped and reached():
                    return _ST_LEVEL
            # start the next subtree at the current slot
            if self.trees_rem > 0:
                self.trees_rem -= 1
                child = list(self.slot_pos)
                _step(self.rng, child, self.d)
                bumped = self._visit(child)
                if self._inside(child):
                    self.stack.append((child, _count(self.rng, self.mu_cdf)))
                if bumped and reached():
                    return _ST_LEVEL
                continue
            # advance the spine
            if self.spine_exited:
                self.finished = True
                return _ST_DONE
            _step(self.rng, self.spine, self.d)
            self.slot_pos = list(self.spine)
            bumped = self._visit(self.slot_pos)
            if self._inside(self.slot_pos):
                kp, kf = _split(self.rng, self.split_cdf, self.split_kp, self.split_kf)
                self.trees_rem = kp + kf
            else:
                self.trees_rem = 0
                self.spine_exited = True
            if bumped and reached():
                return _ST_LEVEL

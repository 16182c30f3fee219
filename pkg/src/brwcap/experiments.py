"""Statistical experiments: exponential moments, local-time tails, subset
selection, and scaling laws.

Every experiment is a pure function of (config, master seed): replicates use
per-replicate Philox streams and fixed-order reductions, so reruns produce
identical bytes regardless of worker count.  Deep local-time tails switch to
fixed-factor splitting: a partially grown tree is cloned when its running
minimum ball count crosses a level, clones get fresh keyed streams, and leaf
weights make the estimator unbiased for every threshold simultaneously.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import capacity, lattice, streams
from ._tables import PointTable
from .backend import kernels
from .lattice import Region


class ExperimentError(ValueError):
    pass


@dataclass
class PotentialFn:
    support: Region
    values: np.ndarray
    measured_sup_Gphi: float
    sup_argmax: tuple
    outside_bound: float


def make_potential(support: Region, values, table, search_radius=None) -> PotentialFn:
    values = np.asarray(values, dtype=np.float64)
    if np.any(values < 0):
        raise ExperimentError("potential values must be nonnegative")
    if search_radius is None:
        search_radius = int(lattice.max_norm(support)) + 4
    sup, arg, outside = table.sup_norm_G(support.coords, values, search_radius)
    return PotentialFn(support=support, values=values,
                       measured_sup_Gphi=float(max(sup, outside)),
                       sup_argmax=tuple(int(v) for v in arg),
                       outside_bound=float(outside))


def _phi_task(k0, rep0, nreps, d, x0, mu, table, vals, r2, mx, crit):
    return kernels.full_phi_sum(k0, rep0, nreps, d, x0, mu.cdf, mu.split_cdf,
                                mu.split_kp, mu.split_kf, table, vals, r2, mx,
                                crit)


def exp_functional_mc(phi: PotentialFn, mu, kind, n, seed, r_trunc,
                      kappa0=1.0, workers=None, max_nodes=50_000_000):
    """MC estimate of E[exp(sum phi over the tree)], with its stderr.

    kind is "full" (invariant tree) or "critical".  Requires the measured
    sup norm of G phi to be at most kappa0 (the theorem hypothesis).
    """
    if phi.measured_sup_Gphi > kappa0:
        raise ExperimentError(
            f"sup|G phi| = {phi.measured_sup_Gphi:g} exceeds kappa0 = {kappa0:g}")
    if kind not in ("full", "critical"):
        raise ExperimentError(f"unknown kind {kind!r}")
    d = phi.support.d
    table = PointTable(phi.support.coords)
    k0 = streams.task_key(seed, f"expmom-{kind}")
    parts = streams.run_chunked(_phi_task, k0, n,
                                extra=(d, [0] * d, mu, table, phi.values,
                                       r_trunc * r_trunc, max_nodes,
                                       kind == "critical"),
                                workers=workers)
    sums = np.concatenate([p[0] for p in parts])
    aborted = np.concatenate([p[1] for p in parts])
    ok = ~aborted
    if ok.sum() == 0:
        raise ExperimentError("all replicates hit the node budget")
    s = sums[ok]
    m = int(ok.sum())
    if s.max() > 300.0:  # accumulate in log space
        from scipy.special import logsumexp
        log_mean = float(logsumexp(s) - math.log(m))
        log_sq = float(logsumexp(2.0 * s) - math.log(m))
        est = math.exp(log_mean)
        var = math.exp(log_sq) - est * est
        se = math.sqrt(max(var, 0.0) / m)
        return est, se
    vals = np.exp(s)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(m))
    return est, se


def build_ball_potential(centers: Region, r, mu, table, n, seed, c1_cal=None,
                         r_trunc=None, workers=None):
    """The ball potential: constant on each ball, proportional to the
    equilibrium mass its boundary carries, scaled so sup |G phi| <= 1.

    Returns (PotentialFn, per-ball constants, scale C1 used).
    """
    cpts = centers.coords
    for i in range(cpts.shape[0]):
        for j in range(i + 1, cpts.shape[0]):
            if np.linalg.norm((cpts[i] - cpts[j]).astype(float)) <= 2 * r:
                raise ExperimentError("ball centers must be > 2r apart")
    d = centers.d
    union = None
    balls = []
    for c in cpts:
        b = lattice.ball(c, r)
        balls.append(b)
        union = b if union is None else union.union(b)
    if r_trunc is None:
        r_trunc = capacity.default_r_trunc(union)
    est = capacity.estimate_equilibrium(union, mu, r_trunc, n, seed,
                                        workers=workers,
                                        enforce_precondition=False)
    eq = {p: est.survival[i] for i, p in enumerate(union)}
    per_ball = []
    support_pts = []
    support_vals = []
    for c, b in zip(cpts, balls):
        mass = sum(eq[p] for p in lattice.boundary(b))
        per_ball.append(mass)
        for p in b:
            support_pts.append(p)
            support_vals.append(mass / float(r ** d))
    support = Region(support_pts, d=d)
    vals = np.zeros(len(support))
    for p, v in zip(support_pts, support_vals):
        vals[support.index[p]] = v
    raw = make_potential(support, vals, table)
    if c1_cal is None:
        c1_cal = max(raw.measured_sup_Gphi, 1e-12)
    phi = make_potential(support, vals / c1_cal, table)
    return phi, np.asarray(per_ball), float(c1_cal)


# --------------------------------------------------------------------------
# local-time tails

@dataclass
class TailCurve:
    t_grid: np.ndarray
    survival: np.ndarray
    stderr: np.ndarray
    censored: np.ndarray
    fitted_slope: float
    slope_stderr: float
    fit_r2: float
    n_raw: int
    split_levels: list
    split_factor: int
    rate_denominator: float = 0.0   # e.g. sup_x G(x, Lambda) for set tails


def _localtime_task(k0, rep0, nreps, d, x0, mu, table, n_sets, r2, mx):
    return kernels.full_localtime(k0, rep0, nreps, d, x0, mu.cdf, mu.split_cdf,
                                  mu.split_kp, mu.split_kf, table, n_sets,
                                  r2, mx)


def _split_root_task(root_rep, d, mu, table, n_sets, r2, max_nodes, k0,
                     levels, factor):
    """Grow one root replicate through the splitting levels; returns leaves.

    Leaves are (weight, min_count) pairs; deterministic given (k0, root_rep).
    """
    G = kernels.LocaltimeGrower
    clone_seq = [0]

    def fresh(key1):
        return G(d, [0] * d, mu.cdf, mu.split_cdf, mu.split_kp, mu.split_kf,
                 table, n_sets, r2, max_nodes, k0, key1)

    root = fresh(root_rep << 20)
    stack = [(root, 1.0, 0)]
    leaves = []
    while stack:
        g, w, lvl = stack.pop()
        target = levels[lvl] if lvl < len(levels) else -1
        status = g.grow_until(target)
        if status == 0 and lvl < len(levels):
            for _ in range(factor):
                clone_seq[0] += 1
                child = g.clone((root_rep << 20) | clone_seq[0])
                stack.append((child, w / factor, lvl + 1))
        else:
            if not g.aborted:
                leaves.append((w, g.min_count()))
    return leaves


def _fit_slope(t, surv, se, sel):
    slope = slope_se = r2v = 0.0
    if sel.sum() >= 3:
        x = t[sel].astype(float)
        y = np.log(surv[sel])
        wgt = (surv[sel] / np.maximum(se[sel], 1e-12)) ** 2  # delta method
        W = wgt / wgt.sum()
        xb = float((W * x).sum())
        yb = float((W * y).sum())
        sxx = float((W * (x - xb) ** 2).sum())
        slope = float((W * (x - xb) * (y - yb)).sum()) / sxx
        resid = y - (yb + slope * (x - xb))
        sst = float((W * (y - yb) ** 2).sum())
        sse = float((W * resid ** 2).sum())
        r2v = 1.0 - sse / sst if sst > 0 else 0.0
        slope_se = math.sqrt(max(sse, 1e-300) / max(sel.sum() - 2, 1) / sxx)
    return slope, slope_se, r2v


def local_time_tail(centers: Region, r, mu, t_grid, n, seed, r_trunc=12.0,
                    workers=None, max_nodes=50_000_000, min_hits=20,
                    split_factor=3, split_roots=500):
    """Survival curve of P(every ball B(x, r), x in centers, has local time
    > t) under the invariant tree from 0, with splitting for deep tails."""
    t_grid = np.asarray(sorted(t_grid), dtype=np.int64)
    d = centers.d
    pts = []
    vals = []
    for s, c in enumerate(centers.coords):
        b = lattice.ball(c, r)
        for p in b:
            pts.append(p)
            vals.append(s)
    table = PointTable(np.asarray(pts, dtype=np.int64),
                       np.asarray(vals, dtype=np.int32))
    if len(set(map(tuple, pts))) != len(pts):
        raise ExperimentError("balls must be disjoint for per-ball counts")
    n_sets = len(centers)
    k0 = streams.task_key(seed, "loctail", int(r))
    parts = streams.run_chunked(_localtime_task, k0, n,
                                extra=(d, [0] * d, mu, table, n_sets,
                                       r_trunc * r_trunc, max_nodes),
                                workers=workers)
    counts = np.concatenate([p[0] for p in parts], axis=0)
    aborted = np.concatenate([p[1] for p in parts])
    mins = counts[~aborted].min(axis=1)
    m = mins.size

    surv = np.zeros(t_grid.size)
    se = np.zeros(t_grid.size)
    censored = np.zeros(t_grid.size, dtype=bool)
    hits = np.array([(mins > t).sum() for t in t_grid])
    raw_ok = hits >= min_hits
    for i, t in enumerate(t_grid):
        p = hits[i] / m
        surv[i] = p
        se[i] = math.sqrt(p * (1 - p) / m)

    levels = []
    if (~raw_ok).any():
        # splitting phase from the last healthy raw level
        first_bad = int(np.argmax(~raw_ok)) if (~raw_ok).any() else t_grid.size
        start = max(first_bad - 1, 0)
        levels = [int(t) + 1 for t in t_grid[start:]]
        nroots = split_roots
        k0s = streams.task_key(seed, "loctail-split", int(r))
        tasks = [( _split_root_task,
                   (root, d, mu, table, n_sets, r_trunc * r_trunc, max_nodes,
                    k0s, levels, split_factor)) for root in range(nroots)]
        results = streams.map_ordered(tasks, workers=workers)
        for i in range(start, t_grid.size):
            t = t_grid[i]
            per_root = np.array([sum(w for w, mc in leaves if mc > t)
                                 for leaves in results])
            p = float(per_root.mean())
            s = float(per_root.std(ddof=1) / math.sqrt(nroots)) if nroots > 1 else 0.0
            eff_hits = (per_root > 0).sum()
            surv[i] = p
            se[i] = s
            censored[i] = eff_hits < min_hits
    else:
        censored = ~raw_ok

    sel = (surv > 0) & ~censored
    slope, slope_se, r2v = _fit_slope(t_grid, surv, se, sel)
    return TailCurve(t_grid=t_grid, survival=surv, stderr=se, censored=censored,
                     fitted_slope=float(slope), slope_stderr=float(slope_se),
                     fit_r2=float(r2v), n_raw=m, split_levels=levels,
                     split_factor=split_factor)


def set_tail(Lambda: Region, mu, t_grid, n, seed, table=None, r_trunc=12.0,
             workers=None, **kw):
    """Tail of the local time of an arbitrary set, plus sup_x G(x, Lambda)."""
    d = Lambda.d
    ptab = PointTable(Lambda.coords, np.zeros(len(Lambda), dtype=np.int32))
    t_grid = np.asarray(sorted(t_grid), dtype=np.int64)
    k0 = streams.task_key(seed, "settail")
    parts = streams.run_chunked(_localtime_task, k0, n,
                                extra=(d, [0] * d, mu, ptab, 1,
                                       r_trunc * r_trunc, kw.get("max_nodes", 50_000_000)),
                                workers=workers)
    counts = np.concatenate([p[0] for p in parts], axis=0)[:, 0]
    aborted = np.concatenate([p[1] for p in parts])
    counts = counts[~aborted]
    curve = _curve_from_counts(counts, t_grid, kw.get("min_hits", 20))
    if table is not None:
        sup, _, outside = table.sup_norm_G(Lambda.coords, np.ones(len(Lambda)),
                                           int(lattice.max_norm(Lambda)) + 4)
        curve.rate_denominator = float(max(sup, outside))
    return curve


def _curve_from_counts(mins, t_grid, min_hits):
    m = mins.size
    surv = np.zeros(t_grid.size)
    se = np.zeros(t_grid.size)
    for i, t in enumerate(t_grid):
        p = (mins > t).sum() / m
        surv[i] = p
        se[i] = math.sqrt(p * (1 - p) / m)
    censored = np.array([(mins > t).sum() < min_hits for t in t_grid])
    sel = (surv > 0) & ~censored
    slope, slope_se, r2v = _fit_slope(t_grid, surv, se, sel)
    return TailCurve(t_grid=t_grid, survival=surv, stderr=se, censored=censored,
                     fitted_slope=float(slope), slope_stderr=float(slope_se),
                     fit_r2=float(r2v), n_raw=m, split_levels=[], split_factor=0)


# --------------------------------------------------------------------------
# subset selection

def subset_select(C: Region, r, c0, mu, n_eq, seed, r_trunc=None, workers=None,
                  draw_seed=None):
    """Thin C with independent Bernoullis driven by the equilibrium mass of
    the union of balls; returns the subset and its certificate quantities."""
    d = C.d
    union = None
    for c in C.coords:
        b = lattice.ball(c, r)
        union = b if union is None else union.union(b)
    if r_trunc is None:
        r_trunc = capacity.default_r_trunc(union)
    est = capacity.estimate_equilibrium(union, mu, r_trunc, n_eq,
                                        streams.task_key(seed, "subset-eq"),
                                        workers=workers,
                                        enforce_precondition=False)
    eq = {p: est.survival[i] for i, p in enumerate(union)}
    probs = []
    for c in C.coords:
        mass = sum(eq[p] for p in lattice.boundary(lattice.ball(c, r)))
        probs.append(c0 * mass / float(r) ** (d - 4))
    probs = np.asarray(probs)
    scaled = False
    if probs.max() > 1.0:
        probs = probs / probs.max()
        scaled = True
    rng = np.random.Generator(np.random.Philox(
        key=np.array([streams.task_key(seed, "subset-draw"),
                      0 if draw_seed is None else draw_seed], dtype=np.uint64)))
    keep = np.array([rng.random() < p for p in probs])
    U = Region(C.coords[keep], d=d) if keep.any() else Region([], d=d)
    return {"U": U, "probs": probs, "scaled": scaled, "union": union,
            "bcap_union_est": capacity.bcap(est), "expected_size": float(probs.sum())}


# --------------------------------------------------------------------------
# classic sanity checks

def kolmogorov_height_check(mu, height, n, seed, workers=None):
    """n * P(height >= n) * sigma^2 / 2 should be near 1 (Kolmogorov)."""
    k0 = streams.task_key(seed, "kolmogorov", height)
    parts = streams.run_chunked(kernels.tree_height_tail, k0, n,
                                extra=(mu.cdf, height, 10_000_000),
                                workers=workers)
    n_reach = sum(p[0] for p in parts)
    n_ab = sum(p[1] for p in parts)
    m = n - n_ab
    p = n_reach / m
    se = math.sqrt(p * (1 - p) / m)
    stat = height * p * mu.sigma2 / 2.0
    return {"p": p, "se": se, "stat": stat,
            "stat_lo": height * (p - 3 * se) * mu.sigma2 / 2.0,
            "stat_hi": height * (p + 3 * se) * mu.sigma2 / 2.0}


def shift_invariance_check(mu, n, seed, r_trunc=6.0):
    """Two-sample chi-square: law of the displacement of the label-1 vertex
    under the invariant tree vs under its shift by +1."""
    from scipy.stats import chi2 as chi2_dist

    from . import trees

    def displacement(tree):
        lab = tree.labels
        one = np.nonzero(lab == 1)[0]
        zero = np.nonzero(lab == 0)[0]
        if one.size != 1 or zero.size != 1:
            return None
        dvec = tree.position[one[0]] - tree.position[zero[0]]
        return tuple(int(v) for v in dvec)

    budget = trees.SampleBudget(r_trunc=r_trunc)
    counts_a, counts_b = {}, {}
    skipped = 0
    for rep in range(n):
        rng = np.random.Generator(np.random.Philox(
            key=np.array([streams.task_key(seed, "shiftinv"), rep],
                         dtype=np.uint64)))
        t = trees.sample_full([0] * 5, mu, budget, rng)
        da = displacement(t)
        try:
            tb = trees.shift(t, +1)
            db = displacement(tb)
        except trees.InsufficientTruncation:
            db = None
        if da is None or db is None:
            skipped += 1
            continue
        counts_a[da] = counts_a.get(da, 0) + 1
        counts_b[db] = counts_b.get(db, 0) + 1
    keys = sorted(set(counts_a) | set(counts_b))
    o1 = np.array([counts_a.get(k, 0) for k in keys], dtype=float)
    o2 = np.array([counts_b.get(k, 0) for k in keys], dtype=float)
    # pool sparse bins so the chi-square approximation holds
    tot = o1 + o2
    big = tot >= 10
    o1 = np.append(o1[big], o1[~big].sum())
    o2 = np.append(o2[big], o2[~big].sum())
    n1, n2 = o1.sum(), o2.sum()
    valid = (o1 + o2) > 0
    stat = float((((np.sqrt(n2 / n1) * o1 - np.sqrt(n1 / n2) * o2) ** 2)[valid]
                  / (o1 + o2)[valid]).sum())
    dof = int(valid.sum()) - 1
    p = float(chi2_dist.sf(stat, dof)) if dof > 0 else 1.0
    return {"chi2": stat, "dof": dof, "p_value": p, "skipped": skipped,
            "n_bins": int(valid.sum())}

"""Monte Carlo estimators for the equilibrium measure, branching capacity,
potential profiles, and the exact identities that link them.

Per-point survival probabilities P(past tree from x avoids K) are estimated
with independent Philox streams per point, so capacity standard errors
compose by independence.  Points whose 2d neighbours all lie in K are exact
zeros (the past tree always contains the first spine vertex, a neighbour of
x) and consume no samples.

Truncation at B(0, r_trunc) overestimates every avoidance probability; the
recorded one-sided bound is ``c2 * BCap_upper * (r_trunc - maxdist)^(4-d)``
with c2 pinned by the calibration run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import lattice, streams
from ._tables import PointTable
from .backend import kernels
from .lattice import Region

# conservative pre-calibration value; `brwcap calibrate` pins the measured one
# (measured ~0.25 for the binary law at desk scale)
DEFAULT_TRUNC_C2 = 0.5


class CapacityError(ValueError):
    pass


def default_r_trunc(K: Region, x=None) -> float:
    """Spec default: 8 * (diam K + max ||y|| over K and the start point)."""
    scale = lattice.diam(K) + max(lattice.max_norm(K),
                                  0.0 if x is None else float(np.linalg.norm(x)))
    return 8.0 * max(scale, 1.0)


def min_r_trunc(K: Region, x=None) -> float:
    scale = lattice.diam(K) + max(lattice.max_norm(K),
                                  0.0 if x is None else float(np.linalg.norm(x)))
    return 4.0 * max(scale, 1.0)


@dataclass
class EquilibriumEstimate:
    K: Region
    survival: np.ndarray
    stderr: np.ndarray
    n_samples: np.ndarray
    r_trunc: float
    bias_bound: float
    seed: int
    aborts: int
    abort_fraction: float


@dataclass
class CapacityEstimate:
    value: float
    stderr: float
    bias_bound: float
    K: Region
    r_trunc: float
    seed: int


def _avoid_task(k0, rep0, nreps, d, x0, mu, table, r2, max_nodes):
    return kernels.past_avoid(k0, rep0, nreps, d, x0, mu.cdf, mu.adj_cdf,
                              table, r2, max_nodes)


def _avoid_batch(keyed_points, n, d, mu, table, r2, max_nodes):
    """One pool task covering many points (amortizes IPC overhead)."""
    out = []
    for k0, x0 in keyed_points:
        out.append(kernels.past_avoid(k0, 0, n, d, x0, mu.cdf, mu.adj_cdf,
                                      table, r2, max_nodes))
    return out


def estimate_equilibrium(K: Region, mu, r_trunc, n, seed, workers=None,
                         c2=DEFAULT_TRUNC_C2, max_nodes=10_000_000,
                         enforce_precondition=True) -> EquilibriumEstimate:
    """Per-point survival estimates of the truncated past tree vs K."""
    if len(K) == 0:
        raise CapacityError("equilibrium of an empty region")
    maxdist = lattice.max_norm(K)
    if enforce_precondition and r_trunc < min_r_trunc(K):
        raise CapacityError(
            f"r_trunc {r_trunc:g} below the precondition {min_r_trunc(K):g}")
    d = K.d
    table = PointTable(K.coords)
    interior = lattice.interior_mask(K)
    surv = np.zeros(len(K))
    se = np.zeros(len(K))
    ns = np.zeros(len(K), dtype=np.int64)
    ids = [i for i in range(len(K)) if not interior[i]]
    keyed = [(streams.task_key(seed, "equil", i), list(K.coords[i])) for i in ids]
    batch = 64
    tasks = [(_avoid_batch,
              (keyed[j:j + batch], n, d, mu, table, r_trunc * r_trunc, max_nodes))
             for j in range(0, len(keyed), batch)]
    results = [r for part in streams.map_ordered(tasks, workers=workers)
               for r in part]
    aborts = 0
    for i, (n_avoid, n_hit, n_abort) in zip(ids, results):
        m = n_avoid + n_hit
        aborts += n_abort
        p = n_avoid / m if m else 0.0
        surv[i] = p
        se[i] = math.sqrt(p * (1.0 - p) / m) if m else 0.0
        ns[i] = m
    total = max(len(ids) * n, 1)
    frac = aborts / total
    value_up = float(surv.sum() + 3.0 * math.sqrt(float((se ** 2).sum())))
    margin = max(r_trunc - maxdist, 1.0)
    # each survival is inflated by at most the far-field hitting factor
    # c2 * BCap / margin^(d-4), so the total bias carries BCap twice
    bias = value_up * min(1.0, c2 * max(value_up, 1e-12) * margin ** (4 - d))
    return EquilibriumEstimate(K=K, survival=surv, stderr=se, n_samples=ns,
                               r_trunc=float(r_trunc), bias_bound=float(bias),
                               seed=seed, aborts=aborts, abort_fraction=frac)


def bcap(est: EquilibriumEstimate) -> CapacityEstimate:
    """Total equilibrium mass; stderr composes by per-point independence."""
    return CapacityEstimate(value=float(est.survival.sum()),
                            stderr=float(np.sqrt((est.stderr ** 2).sum())),
                            bias_bound=est.bias_bound, K=est.K,
                            r_trunc=est.r_trunc, seed=est.seed)


def estimate_bcap(K: Region, mu, n_per_point, seed, r_trunc=None, workers=None,
                  c2=DEFAULT_TRUNC_C2) -> CapacityEstimate:
    if r_trunc is None:
        r_trunc = default_r_trunc(K)
    return bcap(estimate_equilibrium(K, mu, r_trunc, n_per_point, seed,
                                     workers=workers, c2=c2))


@dataclass
class GeProfile:
    eval_points: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    min_on_K: float
    min_on_K_stderr: float
    argmin_on_K: tuple
    max_value: float
    argmax: tuple


def ge_profile(K: Region, est: EquilibriumEstimate, table, eval_points) -> GeProfile:
    """Ge_K(x) = sum_y G(x-y) survival[y], with MC error propagation."""
    pts = np.atleast_2d(np.asarray(eval_points, dtype=np.int64))
    vals = np.zeros(pts.shape[0])
    var = np.zeros(pts.shape[0])
    for y, p, s in zip(K.coords, est.survival, est.stderr):
        if p == 0.0 and s == 0.0:
            continue
        gv = table.G_at(pts - y[None, :])
        vals += gv * p
        var += (gv * s) ** 2
    se = np.sqrt(var)
    kidx = {tuple(int(v) for v in row): None for row in K.coords}
    on_k = np.array([tuple(int(v) for v in row) in kidx for row in pts])
    if not on_k.any():
        raise CapacityError("eval points must include K")
    kvals = vals[on_k]
    kmin = int(np.argmin(kvals))
    gmax = int(np.argmax(vals))
    return GeProfile(eval_points=pts, values=vals, stderr=se,
                     min_on_K=float(kvals[kmin]),
                     min_on_K_stderr=float(se[on_k][kmin]),
                     argmin_on_K=tuple(int(v) for v in pts[on_k][kmin]),
                     max_value=float(vals[gmax]),
                     argmax=tuple(int(v) for v in pts[gmax]))


def avoid_prob_b(A: Region, x, mu, n, seed, workers=None,
                 max_nodes=10_000_000):
    """b_A(x): adjoint tree from x avoids A (a.s. finite, no truncation)."""
    table = PointTable(A.coords)
    k0 = streams.task_key(seed, "avoidb", *[int(v) for v in x])
    parts = streams.run_chunked(kernels.tree_avoid, k0, n,
                                extra=(A.d, list(x), True, mu.cdf, mu.adj_cdf,
                                       table, -1.0, max_nodes),
                                workers=workers)
    n_avoid = sum(p[0] for p in parts)
    n_hit = sum(p[1] for p in parts)
    m = n_avoid + n_hit
    p = n_avoid / m if m else 0.0
    return p, math.sqrt(p * (1 - p) / m) if m else 0.0


def hitting_prob(K: Region, x, kind, mu, n, seed, r_trunc=None, workers=None,
                 max_nodes=10_000_000):
    """P(tree from x hits K) for kind in {critical, past}."""
    if tuple(int(v) for v in x) in K.index:
        return 1.0, 0.0
    table = PointTable(K.coords)
    k0 = streams.task_key(seed, f"hit-{kind}", *[int(v) for v in x])
    if kind == "critical":
        parts = streams.run_chunked(kernels.tree_avoid, k0, n,
                                    extra=(K.d, list(x), False, mu.cdf,
                                           mu.adj_cdf, table, -1.0, max_nodes),
                                    workers=workers)
    elif kind == "past":
        if r_trunc is None:
            r_trunc = default_r_trunc(K, x)
        if r_trunc < min_r_trunc(K, x):
            raise CapacityError("r_trunc below the hitting precondition")
        parts = streams.run_chunked(kernels.past_avoid, k0, n,
                                    extra=(K.d, list(x), mu.cdf, mu.adj_cdf,
                                           table, r_trunc * r_trunc, max_nodes),
                                    workers=workers)
    else:
        raise CapacityError(f"unknown kind {kind!r}")
    n_avoid = sum(p[0] for p in parts)
    n_hit = sum(p[1] for p in parts)
    m = n_avoid + n_hit
    p = n_hit / m if m else 0.0
    return p, math.sqrt(p * (1 - p) / m) if m else 0.0


def path_formula_check(gamma, A: Region, mu, n, seed, workers=None):
    """P(critical BRW first enters A along gamma) vs s(gamma) prod b_A."""
    gamma = np.asarray(gamma, dtype=np.int64)
    L = gamma.shape[0] - 1
    if L < 1:
        raise CapacityError("gamma must make at least one step")
    d = gamma.shape[1]
    steps = np.abs(np.diff(gamma, axis=0)).sum(axis=1)
    if not np.all(steps == 1):
        raise CapacityError("gamma is not a nearest-neighbour path")
    for i in range(L):
        if tuple(int(v) for v in gamma[i]) in A.index:
            raise CapacityError("gamma visits A before its endpoint")
    if tuple(int(v) for v in gamma[L]) not in A.index:
        raise CapacityError("gamma must end in A")

    table = PointTable(A.coords)
    k0 = streams.task_key(seed, "pathlhs")
    parts = streams.run_chunked(kernels.tree_first_entry, k0, n,
                                extra=(d, list(gamma[0]), mu.cdf, table,
                                       gamma, 10_000_000),
                                workers=workers)
    n_hit = sum(p[0] for p in parts)
    n_match = sum(p[1] for p in parts)
    n_ab = sum(p[2] for p in parts)
    m = n - n_ab
    lhs = n_match / m
    lhs_se = math.sqrt(lhs * (1 - lhs) / m)

    s_gamma = (1.0 / (2 * d)) ** L
    rhs = s_gamma
    rel_var = 0.0
    for i in range(L):
        b, bse = avoid_prob_b(A, gamma[i], mu, n, streams.task_key(seed, "pathb", i),
                              workers=workers)
        rhs *= b
        if b > 0:
            rel_var += (bse / b) ** 2
    rhs_se = rhs * math.sqrt(rel_var)
    z = (lhs - rhs) / math.hypot(lhs_se, rhs_se) if (lhs_se or rhs_se) else 0.0
    return {"lhs": lhs, "lhs_se": lhs_se, "rhs": rhs, "rhs_se": rhs_se,
            "z": z, "s_gamma": s_gamma, "n_hit": n_hit, "aborts": n_ab}


def _lastpass_task(k0, rep0, nreps, d, w, mu, past_table, fut_table, r2, mx):
    return kernels.full_lastpassage(k0, rep0, nreps, d, w, mu.cdf,
                                    mu.split_cdf, mu.split_kp, mu.split_kf,
                                    past_table, fut_table, r2, mx)


def last_passage_check(K: Region, K_sub: Region, B: Region, mu, n_lhs, n_rhs,
                       seed, r_trunc=None, workers=None,
                       c2=DEFAULT_TRUNC_C2):
    """Both sides of the exact last-passage identity, with a z-score.

    lhs = sum_{y in K'} e_K(y); rhs sums the joint (past avoids K u B, future
    first hits K in K') probability over the inner boundary of B.
    """
    if not K_sub.issubset(K):
        raise CapacityError("K_sub must be a subset of K")
    if len(K_sub):
        halo = K_sub
        for j in range(K.d):
            for s in (1, -1):
                v = np.zeros(K.d, dtype=np.int64)
                v[j] = s
                halo = halo.union(K_sub.shifted(v))
        if not halo.issubset(B):
            raise CapacityError("B must contain K_sub and its unit neighbourhood")
    if len(K_sub) == 0:
        return {"lhs": 0.0, "lhs_se": 0.0, "rhs": 0.0, "rhs_se": 0.0, "z": 0.0,
                "bias_allowance": 0.0}

    KB = K.union(B)
    if r_trunc is None:
        r_trunc = default_r_trunc(KB)
    est = estimate_equilibrium(K, mu, r_trunc, n_lhs, streams.task_key(seed, "lp-lhs"),
                               workers=workers, c2=c2, enforce_precondition=False)
    sub_ids = [i for i, p in enumerate(K) if p in K_sub.index]
    lhs = float(est.survival[sub_ids].sum())
    lhs_se = float(np.sqrt((est.stderr[sub_ids] ** 2).sum()))

    dB = lattice.boundary(B)
    past_table = PointTable(KB.coords)
    fut_table = PointTable(K.coords,
                           np.array([1 if p in K_sub.index else 0 for p in K],
                                    dtype=np.int32))
    tasks = []
    for i, w in enumerate(dB.coords):
        k0 = streams.task_key(seed, "lp-rhs", i)
        tasks.append((_lastpass_task,
                      (k0, 0, n_rhs, K.d, list(w), mu, past_table, fut_table,
                       r_trunc * r_trunc, 10_000_000)))
    results = streams.map_ordered(tasks, workers=workers)
    rhs = 0.0
    var = 0.0
    for n_event, n_past_avoid, n_ab in results:
        m = n_rhs - n_ab
        p = n_event / m if m else 0.0
        rhs += p
        var += p * (1 - p) / m if m else 0.0
    rhs_se = math.sqrt(var)
    # one-sided truncation allowances on both sides
    d = K.d
    margin = max(r_trunc - lattice.max_norm(KB), 1.0)
    bias = c2 * (lhs + rhs + 1.0) * margin ** (4 - d)
    denom = math.hypot(lhs_se, rhs_se)
    z = (abs(lhs - rhs) - bias) / denom if denom > 0 else 0.0
    return {"lhs": lhs, "lhs_se": lhs_se, "rhs": rhs, "rhs_se": rhs_se,
            "z": max(z, 0.0), "bias_allowance": bias, "n_boundary": len(dB)}


def shrink_check(K: Region, U: Region, V: Region, mu, n, seed, r_trunc=None,
                 workers=None):
    """One-sided test of e_K(U u V) >= e_{K\\V}(U)."""
    if len(U.intersection(V)):
        raise CapacityError("U and V must be disjoint")
    if not U.issubset(K) or not V.issubset(K):
        raise CapacityError("U and V must lie inside K")
    if r_trunc is None:
        r_trunc = default_r_trunc(K)
    estK = estimate_equilibrium(K, mu, r_trunc, n, streams.task_key(seed, "shrinkK"),
                                workers=workers, enforce_precondition=False)
    UV = U.union(V)
    lhs = float(sum(estK.survival[i] for i, p in enumerate(K) if p in UV.index))
    lhs_var = float(sum(estK.stderr[i] ** 2 for i, p in enumerate(K) if p in UV.index))
    KmV = K.difference(V)
    estS = estimate_equilibrium(KmV, mu, r_trunc, n, streams.task_key(seed, "shrinkS"),
                                workers=workers, enforce_precondition=False)
    rhs = float(sum(estS.survival[i] for i, p in enumerate(KmV) if p in U.index))
    rhs_var = float(sum(estS.stderr[i] ** 2 for i, p in enumerate(KmV) if p in U.index))
    se = math.sqrt(lhs_var + rhs_var)
    return {"lhs": lhs, "rhs": rhs, "se": se,
            "ok": lhs >= rhs - 3.0 * se if se > 0 else lhs >= rhs}

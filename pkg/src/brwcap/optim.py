"""Variational solvers: energy minimization over the probability simplex and
the sup/inf linear characterizations of capacity.

The energy quadratic form uses exact kernel values from the Green table (no
Monte Carlo).  Frank-Wolfe with away steps and exact line search handles the
simplex geometry; the linear minimization oracle is a single argmin of the
gradient.  The two linear programs are solved by a dense tableau simplex
method; since the kernel matrix is symmetric they are mutual duals, and the
solver cross-checks strong duality and complementary slackness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Region


class OptimError(RuntimeError):
    pass


@dataclass
class SimplexMeasure:
    support: Region
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-12:
            raise OptimError("weights must be a probability vector")
        self.weights = w


@dataclass
class EnergyResult:
    minimizer: SimplexMeasure
    energy: float
    iterations: int
    duality_gap: float
    converged: bool


def _quadform(M, w):
    return float(w @ M @ w)


def min_energy_fw(K: Region, kernel, table, max_iters=100_000, tol=1e-9,
                  start=None) -> EnergyResult:
    """Minimize sum kernel(x-y) nu(x) nu(y) over probability measures on K.

    kernel is "G" or "Gbar".  Away steps give the usual linear convergence on
    the simplex; with exact line search every iterate stays a probability
    vector and the energy sequence is non-increasing.
    """
    if len(K) == 0:
        raise OptimError("empty support")
    M = table.kernel_matrix(K.coords, kind=kernel)
    n = M.shape[0]
    if start is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(start, dtype=np.float64).copy()
        if w.shape != (n,) or abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise OptimError("start must be a probability vector on K")
    gap = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        grad = 2.0 * (M @ w)
        i_fw = int(np.argmin(grad))
        gap = float(grad @ w - grad[i_fw])
        if gap < tol:
            break
        active = np.nonzero(w > 0)[0]
        i_aw = int(active[np.argmax(grad[active])])
        gap_aw = float(grad[i_aw] - grad @ w)
        if gap >= gap_aw:
            # forward step towards e_{i_fw}
            dvec = -w.copy()
            dvec[i_fw] += 1.0
            gmax = 1.0
        else:
            # away step from e_{i_aw}
            alpha = w[i_aw]
            dvec = w.copy()
            dvec[i_aw] -= 1.0
            gmax = alpha / (1.0 - alpha) if alpha < 1.0 else 0.0
        slope = float(grad @ dvec)
        curv = _quadform(M, dvec)
        if curv > 1e-300 and slope < 0:
            gamma = min(gmax, -slope / (2.0 * curv))
        elif slope < 0:
            gamma = gmax
        else:
            gamma = 0.0
        if gamma <= 0.0:
            break
        w = w + gamma * dvec
        w = np.maximum(w, 0.0)
        w /= w.sum()
    energy = _quadform(M, w)
    return EnergyResult(minimizer=SimplexMeasure(support=K, weights=w),
                        energy=energy, iterations=it, duality_gap=gap,
                        converged=gap < tol)


def brute_energy(K: Region, kernel, table, grid_step=0.01) -> float:
    """Exhaustive minimum of the energy over the simplex grid (|K| <= 4)."""
    n = len(K)
    if n > 4:
        raise OptimError("brute force oracle is limited to |K| <= 4")
    M = table.kernel_matrix(K.coords, kind=kernel)
    N = int(round(1.0 / grid_step))
    best = np.inf
    comp = np.zeros(n, dtype=np.int64)

    def rec(i, rem):
        nonlocal best
        if i == n - 1:
            comp[i] = rem
            w = comp / N
            val = float(w @ M @ w)
            if val < best:
                best = val
            return
        for k in range(rem + 1):
            comp[i] = k
            rec(i + 1, rem - k)

    rec(0, N)
    return best


# --------------------------------------------------------------------------
# dense simplex method for the sup/inf characterizations

@dataclass
class LpSolution:
    phi: np.ndarray
    objective: float
    feasibility_residual: float
    dual: np.ndarray
    duality_residual: float
    slackness_residual: float
    iterations: int


def _tableau_simplex(M, b, c, max_iters=None, eps=1e-11):
    """max c.x  s.t.  M x <= b, x >= 0, with b > 0 (slack basis start).

    Returns (x, y, objective, iterations); y is the dual vector read off the
    slack columns.  Dantzig rule with a Bland fallback against cycling.
    """
    m, n = M.shape
    if max_iters is None:
        max_iters = 50 * (m + n + 10)
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = M
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -c
    basis = np.arange(n, n + m)
    bland_after = 10 * (m + n + 10)
    for it in range(1, max_iters + 1):
        red = T[m, :n + m]
        if it <= bland_after:
            j = int(np.argmin(red))
            if red[j] >= -eps:
                break
        else:  # Bland: first improving column
            neg = np.nonzero(red < -eps)[0]
            if neg.size == 0:
                break
            j = int(neg[0])
        col = T[:m, j]
        pos = np.nonzero(col > eps)[0]
        if pos.size == 0:
            raise OptimError("LP unbounded; impossible for a positive kernel")
        ratios = T[pos, -1] / col[pos]
        r = int(pos[np.argmin(ratios)])
        piv = T[r, j]
        T[r, :] /= piv
        for i in range(m + 1):
            if i != r and T[i, j] != 0.0:
                T[i, :] -= T[i, j] * T[r, :]
        basis[r] = j
    else:
        raise OptimError("simplex iteration cap reached")
    x = np.zeros(n + m)
    x[basis] = T[:m, -1]
    y = T[m, n:n + m].copy()
    return x[:n], y, float(T[m, -1]), it


def _solve_pair(K: Region, table):
    M = table.kernel_matrix(K.coords, kind="G")
    n = len(K)
    ones = np.ones(n)
    x, y, obj, it = _tableau_simplex(M, ones, ones)
    # primal: sup problem; dual: inf problem (M symmetric)
    sup_res = float(max(0.0, (M @ x - 1.0).max()))
    inf_res = float(max(0.0, (1.0 - M @ y).max()))
    slack = max(float(np.abs(y * (M @ x - 1.0)).max()),
                float(np.abs(x * (M @ y - 1.0)).max()))
    dual_gap = abs(float(x.sum()) - float(y.sum()))
    sup = LpSolution(phi=x, objective=float(x.sum()),
                     feasibility_residual=sup_res, dual=y,
                     duality_residual=dual_gap, slackness_residual=slack,
                     iterations=it)
    inf = LpSolution(phi=y, objective=float(y.sum()),
                     feasibility_residual=inf_res, dual=x,
                     duality_residual=dual_gap, slackness_residual=slack,
                     iterations=it)
    return sup, inf


def lp_sup(K: Region, table) -> LpSolution:
    """sup { sum phi : phi >= 0 on K, max_K G phi <= 1 }."""
    if len(K) > 2000:
        raise OptimError("dense LP limited to |K| <= 2000")
    return _solve_pair(K, table)[0]


def lp_inf(K: Region, table) -> LpSolution:
    """inf { sum phi : phi >= 0 on K, min_K G phi >= 1 }."""
    if len(K) > 2000:
        raise OptimError("dense LP limited to |K| <= 2000")
    return _solve_pair(K, table)[1]

"""Lattice Green's functions: the simple-walk g and the branching G.

Both live on a symmetry-reduced table (one value per class of coordinate
permutations and sign flips).  g solves the discrete identity
``g = Pg + delta_0`` by red-black SOR on the class graph with asymptotic
boundary data ``a_d |x|^(2-d)`` (a_d is fitted, not hardcoded, and the solve
is iterated to self-consistency).  G is obtained from the exact convolution
identity ``G = h + (sigma^2/2) h*h`` with ``h = g - delta``; the convolution
``c = h*h`` satisfies ``(I-P)c = Ph = g - delta - P delta``, so it is computed
by a second SOR solve with continuum boundary data
``A_c |x|^(4-d)``, ``A_c = a_d^2 pi^(d/2) Gamma((d-4)/2) / Gamma((d-2)/2)^2``.

Cross-checking oracles: a one-dimensional Bessel-product quadrature for the
torus integral of 1/(1-phi) and a direct Monte Carlo walker.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
from scipy.special import ive

from . import streams
from ._tables import PointTable
from .backend import kernels


class GreenError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# symmetry classes

def _enumerate_classes(d, cmax):
    """All nonincreasing d-tuples with entries in [0, cmax], as an array."""
    reps = np.array(list(combinations_with_replacement(range(cmax + 1), d)),
                    dtype=np.int64)
    return reps[:, ::-1].copy()  # nonincreasing


def _encode(reps, base):
    key = np.zeros(reps.shape[0], dtype=np.int64)
    for j in range(reps.shape[1]):
        key = key * base + reps[:, j]
    return key


def _orbit_sizes(reps):
    d = reps.shape[1]
    fact = [math.factorial(k) for k in range(d + 1)]
    out = np.empty(reps.shape[0], dtype=np.float64)
    for i, row in enumerate(reps):
        perms = fact[d]
        run = 1
        nz = 0
        for j in range(d):
            if row[j] != 0:
                nz += 1
            if j > 0 and row[j] == row[j - 1]:
                run += 1
            else:
                perms //= fact[run]
                run = 1
        perms //= fact[run]
        out[i] = perms * (2 ** nz)
    return out


class _ClassIndex:
    """Maps arbitrary lattice points to symmetry-class ids via sorted keys."""

    def __init__(self, reps, cmax):
        self.base = cmax + 2
        self.keys = _encode(reps, self.base)
        self.order = np.argsort(self.keys, kind="stable")
        self.sorted_keys = self.keys[self.order]
        self.cmax = cmax

    def lookup_canonical(self, canon):
        key = _encode(canon, self.base)
        pos = np.searchsorted(self.sorted_keys, key)
        pos = np.clip(pos, 0, self.sorted_keys.size - 1)
        ids = self.order[pos]
        ok = self.sorted_keys[np.clip(pos, 0, None)] == key
        return ids, ok

    def canonicalize(self, points):
        return np.sort(np.abs(np.asarray(points, dtype=np.int64)), axis=1)[:, ::-1]


def _sor_solve(reps, nbr, interior, b, ghost_vals, omega, tol, max_sweeps,
               warm=None):
    """Red-black SOR for u = P u + b on the class graph.

    ``nbr`` holds the 2d neighbour class ids of every interior class; ghost
    classes keep their fixed values.  Returns (u, residual, sweeps).
    """
    n = reps.shape[0]
    twod = nbr.shape[1]
    u = np.zeros(n) if warm is None else warm.copy()
    u[~interior] = ghost_vals[~interior]
    parity = (reps.sum(axis=1) & 1).astype(bool)
    ids_int = np.nonzero(interior)[0]
    colors = [ids_int[~parity[ids_int]], ids_int[parity[ids_int]]]
    # precompute per-color neighbour id blocks
    blocks = []
    for ids in colors:
        # nbr is indexed by position within the interior list
        sel = np.searchsorted(ids_int, ids)
        blocks.append((ids, nbr[sel]))
    inv = 1.0 / twod
    residual = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        for ids, nb in blocks:
            jac = b[ids] + inv * u[nb].sum(axis=1)
            u[ids] = (1.0 - omega) * u[ids] + omega * jac
        sweeps += 1
        if sweeps % 32 == 0 or sweeps == max_sweeps:
            r = np.abs(b[ids_int] + inv * u[nbr].sum(axis=1) - u[ids_int]).max()
            residual = float(r)
            if residual < tol:
                break
    if residual >= tol:
        raise GreenError(f"SOR did not reach tol {tol:g} in {max_sweeps} sweeps "
                         f"(residual {residual:g})")
    return u, residual, sweeps


def _continuum_conv_const(d):
    """pi^(d/2) Gamma((d-4)/2) / Gamma((d-2)/2)^2 (d >= 5)."""
    return math.pi ** (d / 2) * math.gamma((d - 4) / 2) / math.gamma((d - 2) / 2) ** 2


@dataclass
class GreenTable:
    """Symmetry-reduced table of g and G on the box ||x||_inf <= L."""

    d: int
    L: int
    L_conv: int
    sigma2: float
    a_d: float
    reps: np.ndarray
    g: np.ndarray
    G: np.ndarray = None
    tail_coeff: float = 0.0        # continuum constant A_c for the convolution
    conv_budget: float = 0.0       # recorded error budget for tabled G values
    g_residual: float = 0.0
    c_residual: float = 0.0
    G_asym: float = 0.0            # fitted constant in G ~ G_asym |x|^(4-d)
    _index: _ClassIndex = field(default=None, repr=False)
    _orbits: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._index is None:
            self._index = _ClassIndex(self.reps, self.L)
        if self._orbits is None:
            self._orbits = _orbit_sizes(self.reps)
        if self.G is not None and self.G_asym == 0.0:
            self.G_asym = _fit_shell(self.reps, self.G, self.d - 4,
                                     self.L / 2.0, float(self.L), self._orbits)

    # -- value lookup ------------------------------------------------------

    def _values_at(self, points, table_vals, asym_const, power):
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        canon = self._index.canonicalize(pts)
        out = np.empty(pts.shape[0])
        inside = canon[:, 0] <= self.L
        if inside.any():
            ids, ok = self._index.lookup_canonical(canon[inside])
            if not ok.all():
                raise GreenError("point unexpectedly missing from class table")
            out[inside] = table_vals[ids]
        if (~inside).any():
            nrm = np.sqrt((canon[~inside].astype(float) ** 2).sum(axis=1))
            out[~inside] = asym_const * nrm ** (-power)
        return out

    def g_at(self, points):
        """g(x) for an (n, d) array of displacements; asymptotic beyond L."""
        return self._values_at(points, self.g, self.a_d, self.d - 2)

    def G_at(self, points):
        if self.G is None:
            raise GreenError("table has no branching part (built with --g-only)")
        return self._values_at(points, self.G, self.G_asym, self.d - 4)

    # -- operators ---------------------------------------------------------

    def apply_G(self, support, values, eval_points):
        """(G phi)(x) = sum_y G(x-y) phi(y) for each eval point."""
        support = np.atleast_2d(np.asarray(support, dtype=np.int64))
        values = np.asarray(values, dtype=np.float64)
        pts = np.atleast_2d(np.asarray(eval_points, dtype=np.int64))
        out = np.zeros(pts.shape[0])
        for y, w in zip(support, values):
            if w == 0.0:
                continue
            out += w * self.G_at(pts - y[None, :])
        return out

    def radial_envelope_G(self, radius):
        """Upper bound for G outside ||x|| >= radius (table max + asymptote)."""
        nrm = np.sqrt((self.reps.astype(float) ** 2).sum(axis=1))
        outside = nrm >= radius
        cands = [1.2 * self.G_asym * max(radius, 1.0) ** (4 - self.d)]
        if outside.any():
            cands.append(float(self.G[outside].max()))
        return max(cands)

    def sup_norm_G(self, support, values, search_radius):
        """Scan ||x||_inf <= search_radius; prove the outside is dominated.

        Returns (sup, argmax, outside_bound).
        """
        support = np.atleast_2d(np.asarray(support, dtype=np.int64))
        values = np.asarray(values, dtype=np.float64)
        axes = np.arange(-search_radius, search_radius + 1, dtype=np.int64)
        grids = np.meshgrid(*([axes] * self.d), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        vals = self.apply_G(support, values, pts)
        k = int(np.argmax(vals))
        sup = float(vals[k])
        supnorm = float(np.sqrt((support.astype(float) ** 2).sum(axis=1).max()))
        margin = max(search_radius - supnorm, 1.0)
        outside = float(values.sum()) * self.radial_envelope_G(margin)
        return sup, pts[k], outside

    # -- derived kernels ----------------------------------------------------

    def conv_at(self, points):
        """The convolution c = (g-d)*(g-d), recovered from G."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        h = self.g_at(pts)
        zero = (pts == 0).all(axis=1)
        h = h - zero.astype(float)
        return (self.G_at(pts) - h) * (2.0 / self.sigma2)

    def gbar_at(self, points):
        """Gbar(x) = sum_z g(x,z) g(z,x') = c(x) + 2 g(x) - delta(x)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        zero = (pts == 0).all(axis=1)
        return self.conv_at(pts) + 2.0 * self.g_at(pts) - zero.astype(float)

    def kernel_matrix(self, coords, kind="G"):
        coords = np.asarray(coords, dtype=np.int64)
        n = coords.shape[0]
        diffs = coords[:, None, :] - coords[None, :, :]
        flat = diffs.reshape(n * n, self.d)
        if kind == "G":
            vals = self.G_at(flat)
        elif kind == "Gbar":
            vals = self.gbar_at(flat)
        elif kind == "g":
            vals = self.g_at(flat)
        else:
            raise GreenError(f"unknown kernel {kind!r}")
        return vals.reshape(n, n)


def _fit_shell(reps, vals, power, rlo, rhi, orbits):
    """Weighted mean of vals * |x|^power over the shell rlo <= |x| <= rhi."""
    nrm = np.sqrt((reps.astype(float) ** 2).sum(axis=1))
    sel = (nrm >= rlo) & (nrm <= rhi)
    if not sel.any():
        raise GreenError("empty fitting shell")
    w = orbits[sel]
    return float(np.sum(w * vals[sel] * nrm[sel] ** power) / w.sum())


def build_green_table(d, L, sigma2=None, tol=1e-10, L_conv=None, margin=8,
                      omega=1.9, max_sweeps=50000, g_only=False):
    """Build the g table (d >= 3) and, unless g_only, the G table (d >= 5).

    L_conv is the radius of the box on which the convolution equation for G is
    resolved; enlarging it perturbs tabled values within ``conv_budget``.
    """
    if d < 3:
        raise GreenError("need d >= 3 for a transient walk")
    if not g_only:
        if d < 5:
            raise GreenError("branching Green's function needs d >= 5")
        if sigma2 is None or sigma2 <= 0:
            raise GreenError("sigma2 > 0 required to build G")
    if L < 2:
        raise GreenError("table radius L must be >= 2")
    if L_conv is None:
        L_conv = L + margin
    if L_conv < L:
        raise GreenError("L_conv must be >= L")
    Lbox = max(L + margin, L_conv)

    reps = _enumerate_classes(d, Lbox + 1)
    index = _ClassIndex(reps, Lbox + 1)
    interior = reps[:, 0] <= Lbox
    ids_int = np.nonzero(interior)[0]
    nrm = np.sqrt((reps.astype(float) ** 2).sum(axis=1))

    # neighbour class ids for interior classes
    nbr = np.empty((ids_int.size, 2 * d), dtype=np.int64)
    base = reps[ids_int]
    for j in range(d):
        for s, col in ((1, 2 * j), (-1, 2 * j + 1)):
            y = base.copy()
            y[:, j] += s
            canon = np.sort(np.abs(y), axis=1)[:, ::-1]
            ids, ok = index.lookup_canonical(canon)
            if not ok.all():
                raise GreenError("neighbour fell outside the class enumeration")
            nbr[:, col] = ids

    orbits = _orbit_sizes(reps)
    origin_id = int(ids_int[(base == 0).all(axis=1)][0])
    e1 = np.zeros(d, dtype=np.int64)
    e1[0] = 1
    e1_id = int(index.lookup_canonical(e1[None, :])[0][0])

    # --- solve for g, iterating the boundary constant to self-consistency
    b = np.zeros(reps.shape[0])
    b[origin_id] = 1.0
    # the boundary constant couples back into the fit with contraction rate
    # about (r_shell / Lbox)^(d-2); iterate the pair to a fixed point
    a_d = 0.0
    u = None
    g_res = np.inf
    nz = nrm > 0
    for _ in range(60):
        ghost = np.zeros(nrm.size)
        ghost[nz] = a_d * nrm[nz] ** (2 - d)
        u, g_res, _ = _sor_solve(reps, nbr, interior, b, ghost, omega, tol,
                                 max_sweeps, warm=u)
        a_new = _fit_shell(reps, u, d - 2, L / 2.0, float(L), orbits)
        done = abs(a_new - a_d) < 1e-10 * max(a_new, 1e-6)
        a_d = a_new
        if done:
            break
    gvals = u

    table_sel = reps[:, 0] <= L
    table_reps = reps[table_sel].copy()

    if g_only:
        return GreenTable(d=d, L=L, L_conv=int(L_conv), sigma2=float(sigma2 or 0.0),
                          a_d=a_d, reps=table_reps, g=gvals[table_sel].copy(),
                          G=None, g_residual=g_res)

    # --- solve for the convolution c = (g-delta)*(g-delta)
    A_c = a_d * a_d * _continuum_conv_const(d)
    src = gvals.copy()
    src[origin_id] -= 1.0
    src[e1_id] -= 1.0 / (2 * d)
    cvals = None
    c_res = np.inf
    for _ in range(60):
        ghost = np.zeros(nrm.size)
        ghost[nz] = A_c * nrm[nz] ** (4 - d)
        cvals, c_res, _ = _sor_solve(reps, nbr, interior, src, ghost, omega,
                                     tol, max_sweeps, warm=cvals)
        A_fit = _fit_shell(reps, cvals, d - 4, 0.6 * Lbox, 0.9 * Lbox, orbits)
        done = abs(A_fit - A_c) < 1e-10 * max(A_fit, 1e-6)
        A_c = A_fit
        if done:
            break

    h = gvals.copy()
    h[origin_id] -= 1.0
    Gfull = h + 0.5 * sigma2 * cvals
    # spec's residual budget for resolving the convolution on a finite box
    surf = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    budget = a_d * a_d * surf * float(L_conv) ** (3 - d) * (1.0 + float(L))

    return GreenTable(d=d, L=L, L_conv=int(L_conv), sigma2=float(sigma2),
                      a_d=a_d, reps=table_reps, g=gvals[table_sel].copy(),
                      G=Gfull[table_sel].copy(), tail_coeff=A_c,
                      conv_budget=budget, g_residual=g_res, c_residual=c_res)


# --------------------------------------------------------------------------
# oracle #1: torus integral reduced to a 1-D Bessel-product quadrature

def g_fourier_point(x, quad_cells=24):
    """g(x) via int_0^inf prod_j ive(|x_j|, t/d) dt with an analytic tail.

    ``quad_cells`` is the Gauss-Legendre order per panel (panels are dyadic up
    to T = 2^25); refining it gives the convergence diagnostics the tests use.
    """
    x = np.asarray(x, dtype=np.int64)
    d = x.size
    if d < 3:
        raise GreenError("need d >= 3")
    orders = np.abs(x)
    nodes, weights = np.polynomial.legendre.leggauss(int(quad_cells))
    edges = [0.0] + [2.0 ** k for k in range(26)]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        t = 0.5 * (b - a) * nodes + 0.5 * (a + b)
        w = 0.5 * (b - a) * weights
        vals = np.ones_like(t)
        for k in orders:
            vals *= ive(int(k), t / d)
        total += float(np.dot(w, vals))
    T = edges[-1]
    c0 = (d / (2 * math.pi)) ** (d / 2)
    c1 = (d / 8.0) * (4.0 * float(np.dot(x, x)) - d)
    tail = c0 * (T ** (1 - d / 2) / (d / 2 - 1) - c1 * T ** (-d / 2) / (d / 2))
    return total + tail


def g_fourier_refinement(x, cells_list=(6, 12, 24, 48)):
    return [g_fourier_point(x, c) for c in cells_list]


# --------------------------------------------------------------------------
# oracle #2: Monte Carlo walker

def srw_tail_bound(d, horizon):
    """Analytic bound on sum_{n > horizon} p_n(x) via the local CLT."""
    return 2.0 * (d / (2 * math.pi)) ** (d / 2) * horizon ** (1 - d / 2) / (d / 2 - 1)


def g_mc_points(targets, d, n_walks, horizon, master_seed, workers=None):
    """MC visit counts of an SRW from 0; returns (est, stderr, tail_bound)."""
    targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
    table = PointTable(targets)
    k0 = streams.task_key(master_seed, "g_mc", horizon)
    parts = streams.run_chunked(kernels.srw_visits, k0, n_walks,
                                extra=(d, horizon, table), workers=workers)
    sums = sum(p[0] for p in parts)
    sumsq = sum(p[1] for p in parts)
    est = sums / n_walks
    var = np.maximum(sumsq / n_walks - est ** 2, 0.0)
    stderr = np.sqrt(var / n_walks)
    return est, stderr, srw_tail_bound(d, horizon)


def g_mc_point(x, n_walks, horizon, master_seed, workers=None):
    est, se, tail = g_mc_points([x], len(x), n_walks, horizon, master_seed,
                                workers=workers)
    return float(est[0]), float(se[0]), tail


# --------------------------------------------------------------------------
# binary cache format: magic BRWG, little-endian, CRC64/ECMA of the payload

_CRC64_POLY = 0x42F0E1EBA9EA3693
_CRC64_TABLE = None


def _crc64_table():
    global _CRC64_TABLE
    if _CRC64_TABLE is None:
        tab = []
        for i in range(256):
            crc = i << 56
            for _ in range(8):
                if crc & (1 << 63):
                    crc = ((crc << 1) ^ _CRC64_POLY) & streams.MASK64
                else:
                    crc = (crc << 1) & streams.MASK64
            tab.append(crc)
        _CRC64_TABLE = tab
    return _CRC64_TABLE


def crc64(data: bytes) -> int:
    tab = _crc64_table()
    crc = 0
    for byte in data:
        crc = (tab[((crc >> 56) ^ byte) & 0xFF] ^ (crc << 8)) & streams.MASK64
    return crc


MAGIC = b"BRWG"
FORMAT_VERSION = 1


def save_table(table: GreenTable, path):
    if table.G is None:
        raise GreenError("refusing to cache a g-only table")
    head = struct.pack("<4sIIII", MAGIC, FORMAT_VERSION, table.d, table.L,
                       table.L_conv)
    head += struct.pack("<ddQ", table.sigma2, table.a_d, table.g.size)
    payload = head + table.g.astype("<f8").tobytes() + table.G.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<Q", crc64(payload)))


def load_table(path) -> GreenTable:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 45 or blob[:4] != MAGIC:
        raise GreenError(f"{path}: not a BRWG table")
    payload, crc_stored = blob[:-8], struct.unpack("<Q", blob[-8:])[0]
    if crc64(payload) != crc_stored:
        raise GreenError(f"{path}: CRC mismatch")
    version, d, L, L_conv = struct.unpack("<IIII", payload[4:20])
    if version != FORMAT_VERSION:
        raise GreenError(f"{path}: unsupported format version {version}")
    sigma2, a_d, ncls = struct.unpack("<ddQ", payload[20:44])
    reps = _enumerate_classes(d, L)
    if reps.shape[0] != ncls:
        raise GreenError(f"{path}: class count {ncls} does not match d={d}, L={L}")
    body = payload[44:]
    need = 2 * 8 * ncls
    if len(body) != need:
        raise GreenError(f"{path}: truncated table body")
    g = np.frombuffer(body[:8 * ncls], dtype="<f8").astype(np.float64)
    G = np.frombuffer(body[8 * ncls:], dtype="<f8").astype(np.float64)
    return GreenTable(d=int(d), L=int(L), L_conv=int(L_conv), sigma2=float(sigma2),
                      a_d=float(a_d), reps=reps, g=g, G=G)

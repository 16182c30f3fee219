"""Calibration and the acceptance verification suite.

Two-phase protocol: ``brwcap calibrate`` measures the suite's empirical
constants (truncation constants, Ge extremes, energy/LP ratio windows, the
volume constant, the subset alpha, the exp-moment rate) and pins them, with
25% margins, into ``calibration.json``.  ``brwcap verify`` refuses to run
without that file and asserts every criterion inside the pinned windows,
printing one PASS/FAIL line per criterion.

The "quick" profile sizes Monte Carlo budgets for a small CI machine; the
"full" profile carries the reference budgets.  Tolerances and gate constants
are identical in both.
"""

from __future__ import annotations

import math
import os

import numpy as np

from . import capacity, experiments, green, lattice, optim, reporting, streams
from ._tables import PointTable
from .backend import kernels
from .lattice import Region
from .offspring import preset

D = 5

# per-set (n per point, r_trunc); budgets sized from measured kernel speed
_QUICK_SETS = {
    "ball1": (300, 32.0), "ball2": (60, 32.0), "ball3": (25, 40.0),
    "ball4": (15, 48.0), "box1": (60, 32.0), "box2": (6, 56.0),
    "seg10": (60, 56.0), "seg20": (25, 64.0),
    "union2x1": (50, 48.0), "union2x2": (20, 48.0),
    "cloud30": (25, 56.0), "cloud50": (12, 56.0),
}

_FULL_SETS = {k: (max(npp * 10, 100), max(r, 64.0))
              for k, (npp, r) in _QUICK_SETS.items()}

PROFILES = {
    "quick": dict(
        sets=_QUICK_SETS,
        table_L=12,
        g_mc_walks=200_000, g_mc_horizon=10_000,
        gcross_n=8_000, gcross_rtrunc=32.0,
        ball8_npp=2, ball8_R=96.0,
        lastpass=[('a', 1200, 24.0), ('b', 150, 24.0), ('c', 400, 24.0)],
        lastpass_lhs=4000,
        path_n=1_000_000,
        expmom_n=100_000, expmom_R=12.0,
        loctail_n=100_000, loctail_R=12.0, loctail_roots=400,
        subset_neq=3, subset_R=64.0, subset_draws=100, subset_evals=3,
        kolmo_n=1_000_000,
        calib_c2_npp=1200, calib_vis_n=3000,
        repro_npp=40,
        lp_max_size=900,
    ),
    "full": dict(
        sets=_FULL_SETS,
        table_L=16,
        g_mc_walks=1_000_000, g_mc_horizon=10_000,
        gcross_n=100_000, gcross_rtrunc=64.0,
        ball8_npp=10, ball8_R=128.0,
        lastpass=[('a', 10_000, 32.0), ('b', 1_000, 32.0), ('c', 3_000, 32.0)],
        lastpass_lhs=20_000,
        path_n=1_000_000,
        expmom_n=100_000, expmom_R=24.0,
        loctail_n=500_000, loctail_R=16.0, loctail_roots=1500,
        subset_neq=10, subset_R=96.0, subset_draws=100, subset_evals=5,
        kolmo_n=1_000_000,
        calib_c2_npp=4000, calib_vis_n=10_000,
        repro_npp=100,
        lp_max_size=2000,
    ),
}


def _cloud(tag, n, half):
    """Deterministic point cloud (fixed key, independent of run seeds)."""
    rng = np.random.Generator(np.random.Philox(
        key=np.array([streams.task_key(0, f"suite-cloud-{tag}"), 0],
                     dtype=np.uint64)))
    pts = set()
    while len(pts) < n:
        pts.add(tuple(int(v) for v in rng.integers(-half, half + 1, size=D)))
    return Region(sorted(pts), d=D)


def suite_sets():
    """The fixed 12-set verification suite (d = 5)."""
    mk = lambda s: lattice.parse_region(s, D)
    return {
        "ball1": mk("ball:1"),
        "ball2": mk("ball:2"),
        "ball3": mk("ball:3"),
        "ball4": mk("ball:4"),
        "box1": mk("box:1"),
        "box2": mk("box:2"),
        "seg10": mk("shift(segment:10;-5,0,0,0,0)"),
        "seg20": mk("shift(segment:20;-10,0,0,0,0)"),
        "union2x1": mk("union(shift(ball:1;-4,0,0,0,0);shift(ball:1;4,0,0,0,0))"),
        "union2x2": mk("union(shift(ball:2;-5,0,0,0,0);shift(ball:2;5,0,0,0,0))"),
        "cloud30": _cloud("c30", 30, 6),
        "cloud50": _cloud("c50", 50, 8),
    }


def dilate(K: Region, times=2) -> Region:
    out = K
    for _ in range(times):
        grown = out
        for j in range(K.d):
            for s in (1, -1):
                v = np.zeros(K.d, dtype=np.int64)
                v[j] = s
                grown = grown.union(out.shifted(v))
        out = grown
    return out


class VerifyContext:
    """Shared lazily computed state for the criteria."""

    def __init__(self, profile_name, seed, workers, outdir, calib=None):
        self.profile_name = profile_name
        self.p = PROFILES[profile_name]
        self.seed = seed
        self.workers = workers
        self.outdir = outdir
        self.calib = calib
        self.mu = preset("binary")
        self.sets = suite_sets()
        self._table = None
        self._equil = {}
        self._profiles = {}
        os.makedirs(outdir, exist_ok=True)

    @property
    def table(self):
        if self._table is None:
            path = os.path.join(self.outdir,
                                f"g{D}_L{self.p['table_L']}.brwg")
            if os.path.exists(path):
                self._table = green.load_table(path)
            else:
                self._table = green.build_green_table(
                    D, self.p["table_L"], sigma2=self.mu.sigma2, tol=1e-10)
                green.save_table(self._table, path)
        return self._table

    def c2(self):
        return self.calib["c2_trunc"] if self.calib else capacity.DEFAULT_TRUNC_C2

    def equilibrium(self, name):
        if name not in self._equil:
            npp, r_tr = self.p["sets"][name]
            K = self.sets[name]
            self._equil[name] = capacity.estimate_equilibrium(
                K, self.mu, r_tr, npp, streams.task_key(self.seed, "suite-" + name),
                workers=self.workers, c2=self.c2(), enforce_precondition=False)
        return self._equil[name]

    def bcap(self, name):
        return capacity.bcap(self.equilibrium(name))

    def profile_of(self, name):
        if name not in self._profiles:
            est = self.equilibrium(name)
            K = self.sets[name]
            evals = dilate(K, 2)
            self._profiles[name] = capacity.ge_profile(K, est, self.table,
                                                       evals.coords)
        return self._profiles[name]


# --------------------------------------------------------------------------
# calibration

def calibrate(seed, profile_name="quick", workers=None, outdir="."):
    ctx = VerifyContext(profile_name, seed, workers, outdir, calib=None)
    p = ctx.p
    mu = ctx.mu
    out = {"version": 1, "seed": seed, "profile": profile_name, "d": D,
           "mu": "binary"}

    # truncation constants from R-doubling on ball:1
    K1 = ctx.sets["ball1"]
    npp = p["calib_c2_npp"]
    e16 = capacity.estimate_equilibrium(K1, mu, 16.0, npp,
                                        streams.task_key(seed, "cal-c2-16"),
                                        workers=workers,
                                        enforce_precondition=False)
    e32 = capacity.estimate_equilibrium(K1, mu, 32.0, npp,
                                        streams.task_key(seed, "cal-c2-32"),
                                        workers=workers,
                                        enforce_precondition=False)
    b16, b32 = e16.survival.sum(), e32.survival.sum()
    delta = max(b16 - b32, 1e-6)
    m16, m32 = 15.0, 31.0
    c2_raw = delta / (b32 * b32 * (1.0 / m16 - 1.0 / m32))
    out["c2_trunc"] = round(2.0 * c2_raw, 4)

    # visit-loss constant from R-doubling of past visits at the origin
    pts = np.array([[0] * D, [1] + [0] * (D - 1)], dtype=np.int64)
    tab = PointTable(pts)
    nvis = p["calib_vis_n"]
    res = {}
    for R in (16.0, 32.0):
        parts = streams.run_chunked(
            kernels.past_visits, streams.task_key(seed, "cal-vis", int(R)),
            nvis, extra=(D, [0] * D, mu.cdf, mu.adj_cdf, tab, R * R, 10**8),
            workers=workers)
        sums = sum(q[0] for q in parts)
        res[R] = sums / nvis
    dvis = float(np.max(res[32.0] - res[16.0]))
    dvis = max(dvis, 1e-4)
    c_vis_raw = dvis / (1.0 / 16.0 - 1.0 / 32.0)
    out["c_vis"] = round(2.0 * c_vis_raw, 4)

    # suite windows
    ge_mins, ge_maxs, eprod, lpratio, volume_ratio = [], [], [], [], []
    for name in ctx.sets:
        prof = ctx.profile_of(name)
        ge_mins.append(prof.min_on_K)
        ge_maxs.append(prof.max_value)
        K = ctx.sets[name]
        bc = ctx.bcap(name)
        er = optim.min_energy_fw(K, "G", ctx.table, tol=1e-9)
        eprod.append(bc.value * er.energy)
        if len(K) <= p["lp_max_size"]:
            sup = optim.lp_sup(K, ctx.table)
            lpratio.append(sup.objective / bc.value)
        volume_ratio.append(bc.value / len(K) ** (1.0 - 4.0 / D))
    out["ge_min"] = [round(min(ge_mins) * 0.75, 6), round(max(ge_mins) * 1.25, 6)]
    out["ge_max"] = [round(min(ge_maxs) * 0.75, 6), round(max(ge_maxs) * 1.25, 6)]
    out["ge_ratio_max"] = round(1.25 * max(ge_maxs) / min(ge_mins), 4)
    out["energy_product"] = [round(min(eprod) * 0.75, 6), round(max(eprod) * 1.25, 6)]
    out["lp_sup_ratio"] = [round(min(lpratio) * 0.75, 6), round(max(lpratio) * 1.25, 6)]
    out["volume_c"] = round(0.75 * min(volume_ratio), 6)

    # ball capacity normalization window over r = 1..6
    norms = []
    extra_balls = {"ball5": (8, 56.0), "ball6": (6, 64.0)}
    for r in range(1, 7):
        name = f"ball{r}"
        if name in ctx.sets:
            bc = ctx.bcap(name)
        else:
            nppb, rt = extra_balls[name]
            K = lattice.ball([0] * D, r)
            bc = capacity.bcap(capacity.estimate_equilibrium(
                K, mu, rt, nppb, streams.task_key(seed, "cal-ball", r),
                workers=workers, enforce_precondition=False))
        norms.append(bc.value / r ** (D - 4))
    out["bcap_ball_norm"] = [round(min(norms) * 0.75, 6), round(max(norms) * 1.25, 6)]

    # exp-moment rate: kappa_hat from the single-ball tail and its potential
    centers = Region([[0] * D])
    phi, masses, c1_ball = experiments.build_ball_potential(
        centers, 2, mu, ctx.table, n=max(60, npp // 8),
        seed=streams.task_key(seed, "cal-phi"), r_trunc=32.0, workers=workers)
    curve = experiments.local_time_tail(
        centers, 2, mu, t_grid=[0, 40, 80, 140, 200, 280],
        n=max(20_000, p["loctail_n"] // 4), seed=streams.task_key(seed, "cal-tail"),
        r_trunc=p["loctail_R"], workers=workers,
        split_roots=p["loctail_roots"] // 2)
    bc2 = ctx.bcap("ball2")
    kappas = []
    for t, s, cz in zip(curve.t_grid, curve.survival, curve.censored):
        if t > 0 and s > 0 and not cz:
            kappas.append(-math.log(min(s, 0.999) / 2.0) * c1_ball * 2 ** D
                          / (t * bc2.value))
    out["kappa_hat"] = round(0.75 * min(kappas), 6) if kappas else 0.01
    out["c1_ball_r2"] = round(c1_ball, 6)

    # subset-selection alpha from one calibration draw
    C = ctx.sets["cloud30"]
    sel = experiments.subset_select(C, 2, 0.35, mu, n_eq=p["subset_neq"],
                                    seed=streams.task_key(seed, "cal-subset"),
                                    r_trunc=p["subset_R"], workers=workers)
    U = sel["U"]
    ratios = []
    if len(U):
        bu = capacity.bcap(capacity.estimate_equilibrium(
            sel_union(U, 2), mu, p["subset_R"], p["subset_neq"],
            streams.task_key(seed, "cal-subset-u"), workers=workers,
            enforce_precondition=False))
        r_i = bu.value / (2 ** (D - 4) * len(U))
        r_ii = 2 ** (D - 4) * len(U) / sel["bcap_union_est"].value
        ratios = [r_i, r_ii]
    out["alpha_subset"] = round(0.6 * min(ratios), 6) if ratios else 0.05
    return out


def sel_union(C: Region, r) -> Region:
    out = None
    for c in C.coords:
        b = lattice.ball(c, r)
        out = b if out is None else out.union(b)
    return out


# --------------------------------------------------------------------------
# criteria

def crit01_green_triangle(ctx):
    t = ctx.table
    pts = [(0, 0, 0, 0, 0), (1, 0, 0, 0, 0), (2, 1, 0, 0, 0), (4, 0, 0, 0, 0)]
    pde = t.g_at(np.array(pts))
    fou = np.array([green.g_fourier_point(x) for x in pts])
    mc, se, tail = green.g_mc_points(np.array(pts), D, ctx.p["g_mc_walks"],
                                     ctx.p["g_mc_horizon"],
                                     streams.task_key(ctx.seed, "c1"),
                                     workers=ctx.workers)
    ok = True
    worst = 0.0
    for i in range(len(pts)):
        tol_exact = 1e-4
        tol_mc = max(1e-4, 3 * se[i] + tail)
        checks = [(abs(pde[i] - fou[i]), tol_exact),
                  (abs(pde[i] - mc[i]), tol_mc),
                  (abs(fou[i] - mc[i]), tol_mc)]
        for dv, tol in checks:
            worst = max(worst, dv / tol)
            ok = ok and dv <= tol
    return ok, f"max |diff|/tol = {worst:.3f} over 4 points x 3 pairs"


def crit02_G_cross(ctx):
    t = ctx.table
    mu = ctx.mu
    pts = np.array([[0, 0, 0, 0, 0], [1, 0, 0, 0, 0], [1, 1, 0, 0, 0],
                    [2, 1, 0, 0, 0], [4, 0, 0, 0, 0]], dtype=np.int64)
    tab = PointTable(pts)
    n = ctx.p["gcross_n"]
    R = ctx.p["gcross_rtrunc"]
    parts = streams.run_chunked(kernels.past_visits,
                                streams.task_key(ctx.seed, "c2"), n,
                                extra=(D, [0] * D, mu.cdf, mu.adj_cdf, tab,
                                       R * R, 10**8), workers=ctx.workers)
    sums = sum(p[0] for p in parts)
    sumsq = sum(p[1] for p in parts)
    est = sums / n
    sev = np.sqrt(np.maximum(sumsq / n - est ** 2, 0) / n)
    gt = t.G_at(pts)
    c_vis = ctx.calib["c_vis"] if ctx.calib else 0.7
    ok = True
    worst = 0.0
    for i in range(pts.shape[0]):
        margin = max(R - float(np.linalg.norm(pts[i])), 1.0)
        tol = 3 * sev[i] + c_vis * margin ** (4 - D)
        dv = abs(est[i] - gt[i])
        worst = max(worst, dv / tol)
        ok = ok and dv <= tol
    return ok, f"max |G_table - G_mc|/tol = {worst:.3f} at 5 points (R={R:g})"


def crit03_ball_scaling(ctx):
    vals = {}
    for r in (2, 4):
        bc = ctx.bcap(f"ball{r}")
        vals[r] = bc.value / r
    K8 = lattice.ball([0] * D, 8)
    bc8 = capacity.bcap(capacity.estimate_equilibrium(
        K8, ctx.mu, ctx.p["ball8_R"], ctx.p["ball8_npp"],
        streams.task_key(ctx.seed, "c3-ball8"), workers=ctx.workers,
        c2=ctx.c2(), enforce_precondition=False))
    vals[8] = bc8.value / 8
    ratio = max(vals.values()) / min(vals.values())
    return ratio < 2.5, (f"BCap(B_r)/r = " +
                         ", ".join(f"r={r}: {v:.2f}" for r, v in vals.items()) +
                         f"; max/min = {ratio:.2f} < 2.5")


def crit04_potential_bounds(ctx):
    lo_w, hi_w = ctx.calib["ge_max"]
    ratio_cap = ctx.calib["ge_ratio_max"]
    gmin, gmax = np.inf, 0.0
    ok = True
    details = []
    for name in ctx.sets:
        prof = ctx.profile_of(name)
        se_min = prof.min_on_K_stderr
        if not (prof.min_on_K - 3 * se_min > 0):
            ok = False
            details.append(f"{name}: min {prof.min_on_K:.3f} not > 3se")
        if not (lo_w <= prof.max_value <= hi_w):
            ok = False
            details.append(f"{name}: max {prof.max_value:.3f} outside window")
        gmin = min(gmin, prof.min_on_K)
        gmax = max(gmax, prof.max_value)
    ratio = gmax / gmin
    if ratio >= ratio_cap:
        ok = False
        details.append(f"ratio {ratio:.2f} >= {ratio_cap:.2f}")
    msg = f"global max/min = {gmax:.3f}/{gmin:.3f} = {ratio:.2f} (cap {ratio_cap:.2f})"
    if details:
        msg += "; " + "; ".join(details)
    return ok, msg


def _lastpass_configs():
    K0 = Region([[0] * D])
    b1 = lattice.ball([0] * D, 1)
    b2 = lattice.ball([0] * D, 2)
    b3 = lattice.ball([0] * D, 3)
    bdry_pt = Region([[2, 0, 0, 0, 0]])
    return {"a": (K0, K0, b1), "b": (b2, bdry_pt, b3), "c": (b1, b1, b2)}


def crit05_last_passage(ctx):
    cfgs = _lastpass_configs()
    ok = True
    parts = []
    for tag, n_rhs, R in ctx.p["lastpass"]:
        K, Ks, B = cfgs[tag]
        res = capacity.last_passage_check(
            K, Ks, B, ctx.mu, n_lhs=ctx.p["lastpass_lhs"], n_rhs=n_rhs,
            seed=streams.task_key(ctx.seed, "c5", ord(tag)), r_trunc=R,
            workers=ctx.workers, c2=ctx.c2())
        parts.append(f"{tag}: lhs={res['lhs']:.4f} rhs={res['rhs']:.4f} z={res['z']:.2f}")
        ok = ok and abs(res["z"]) < 3
    return ok, "; ".join(parts)


def crit06_path_formula(ctx):
    mu = ctx.mu
    A1 = Region([[2, 0, 0, 0, 0]])
    g1 = np.array([[3, 0, 0, 0, 0], [2, 0, 0, 0, 0]], dtype=np.int64)
    A2 = Region([[2, 0, 0, 0, 0], [0, 0, 0, 0, 0]])
    g2 = np.array([[2, 2, 0, 0, 0], [2, 1, 0, 0, 0], [2, 0, 0, 0, 0]],
                  dtype=np.int64)
    ok = True
    parts = []
    for i, (g, A) in enumerate([(g1, A1), (g2, A2)]):
        res = capacity.path_formula_check(g, A, mu, ctx.p["path_n"],
                                          streams.task_key(ctx.seed, "c6", i),
                                          workers=ctx.workers)
        parts.append(f"#{i}: lhs={res['lhs']:.5f} rhs={res['rhs']:.5f} z={res['z']:.2f}")
        ok = ok and abs(res["z"]) < 3
    return ok, "; ".join(parts)


def crit07_variational(ctx):
    lo, hi = ctx.calib["energy_product"]
    ok = True
    worst = ""
    prods = []
    for name in ctx.sets:
        K = ctx.sets[name]
        er = optim.min_energy_fw(K, "G", ctx.table, tol=1e-9)
        bc = ctx.bcap(name)
        prod = bc.value * er.energy
        prods.append(prod)
        if not er.converged or er.duality_gap >= 1e-9:
            ok = False
            worst += f" {name}: gap {er.duality_gap:.1e};"
        if not (lo <= prod <= hi):
            ok = False
            worst += f" {name}: product {prod:.3f} outside [{lo:.3f},{hi:.3f}];"
    # brute-force agreement on small instances
    rng = np.random.default_rng(4)
    for j in range(3):
        pts = rng.integers(-3, 4, size=(j + 2, D))
        K = Region(pts)
        fw = optim.min_energy_fw(K, "G", ctx.table, tol=1e-11)
        bf = optim.brute_energy(K, "G", ctx.table, grid_step=0.01)
        if not (fw.energy <= bf + 1e-12 and bf - fw.energy < 1e-4):
            ok = False
            worst += f" small#{j}: fw {fw.energy:.6f} vs brute {bf:.6f};"
    return ok, (f"BCap*E in [{min(prods):.3f}, {max(prods):.3f}] vs window "
                f"[{lo:.3f}, {hi:.3f}]" + worst)


def crit08_lp(ctx):
    lo, hi = ctx.calib["lp_sup_ratio"]
    ok = True
    msgs = []
    for name in ctx.sets:
        K = ctx.sets[name]
        if len(K) > ctx.p["lp_max_size"]:
            continue
        sup = optim.lp_sup(K, ctx.table)
        inf = optim.lp_inf(K, ctx.table)
        bc = ctx.bcap(name)
        r_sup = sup.objective / bc.value
        if not (lo <= r_sup <= hi):
            ok = False
            msgs.append(f"{name}: sup/bcap {r_sup:.3f} outside window")
        if sup.duality_residual >= 1e-8 or sup.slackness_residual >= 1e-8:
            ok = False
            msgs.append(f"{name}: duality residuals too large")
        if inf.feasibility_residual > 1e-9 or sup.feasibility_residual > 1e-9:
            ok = False
            msgs.append(f"{name}: infeasible solution")
        # sup-feasibility witness phi = e_K / ||Ge_K||_inf
        est = ctx.equilibrium(name)
        prof = ctx.profile_of(name)
        wobj = est.survival.sum() / prof.max_value
        if sup.objective < wobj * (1 - 1e-9):
            ok = False
            msgs.append(f"{name}: witness {wobj:.3f} beats LP {sup.objective:.3f}")
    return ok, "; ".join(msgs) if msgs else f"all LP sets inside [{lo:.3f}, {hi:.3f}]"


def crit09_exp_moment(ctx):
    t = ctx.table
    z = Region([[0] * D])
    eps = 0.05 / t.G_at(np.zeros((1, D), dtype=np.int64))[0]
    phi = experiments.make_potential(z, [eps], t)
    est, se = experiments.exp_functional_mc(
        phi, ctx.mu, "full", ctx.p["expmom_n"],
        streams.task_key(ctx.seed, "c9"), r_trunc=ctx.p["expmom_R"],
        workers=ctx.workers)
    ok = (phi.measured_sup_Gphi <= 0.05 + 1e-12) and est <= 2 + 3 * se
    return ok, f"sup|G phi|={phi.measured_sup_Gphi:.4f}, E[exp]={est:.4f}+-{se:.4f} <= 2"


def crit10_localtime(ctx):
    mu = ctx.mu
    n = ctx.p["loctail_n"]
    R = ctx.p["loctail_R"]
    roots = ctx.p["loctail_roots"]
    origin = Region([[0] * D])
    curves = {}
    grids = {2: [0, 30, 60, 100, 150, 220, 300, 400],
             3: [0, 60, 120, 200, 300, 420, 560, 720]}
    for r in (2, 3):
        curves[r] = experiments.local_time_tail(
            origin, r, mu, grids[r], n, streams.task_key(ctx.seed, "c10", r),
            r_trunc=R, workers=ctx.workers, split_roots=roots)
    two = Region([[0] * D, [12, 0, 0, 0, 0]])
    curves["two"] = experiments.local_time_tail(
        two, 2, mu, [0, 15, 30, 50, 75, 105, 140], n,
        streams.task_key(ctx.seed, "c10-two"), r_trunc=R, workers=ctx.workers,
        split_roots=roots)
    ok = True
    msgs = []
    for key, c in curves.items():
        if not (c.fitted_slope < 0 and c.fit_r2 >= 0.9):
            ok = False
            msgs.append(f"{key}: slope {c.fitted_slope:.4f} r2 {c.fit_r2:.2f}")
    b2 = ctx.bcap("ball2").value
    b3 = ctx.bcap("ball3").value
    pred = (b2 / 2 ** D) / (b3 / 3 ** D)
    obs = curves[2].fitted_slope / curves[3].fitted_slope
    if not (pred / 3 <= obs <= pred * 3):
        ok = False
        msgs.append(f"slope ratio {obs:.2f} vs prediction {pred:.2f} (factor 3)")
    msg = (f"slopes r2={curves[2].fitted_slope:.4f} r3={curves[3].fitted_slope:.4f} "
           f"two={curves['two'].fitted_slope:.4f}; ratio {obs:.2f} vs pred {pred:.2f}")
    return ok, msg + ("; " + "; ".join(msgs) if msgs else "")


def crit11_subset(ctx):
    mu = ctx.mu
    C = ctx.sets["cloud30"]
    alpha = ctx.calib["alpha_subset"]
    r = 2
    base = experiments.subset_select(C, r, 0.35, mu, n_eq=ctx.p["subset_neq"],
                                     seed=streams.task_key(ctx.seed, "c11"),
                                     r_trunc=ctx.p["subset_R"],
                                     workers=ctx.workers)
    probs = base["probs"]
    bC = base["bcap_union_est"].value
    # E|U| check over the draws (identity E|U| = sum p, binomial 3 sigma)
    rng = np.random.Generator(np.random.Philox(
        key=np.array([streams.task_key(ctx.seed, "c11-draws"), 0], dtype=np.uint64)))
    sizes = []
    draws = []
    for _ in range(ctx.p["subset_draws"]):
        keep = rng.random(len(probs)) < probs
        sizes.append(int(keep.sum()))
        draws.append(keep)
    mean_size = float(np.mean(sizes))
    exp_size = float(probs.sum())
    sd = math.sqrt(float((probs * (1 - probs)).sum()) / len(sizes))
    ok = abs(mean_size - exp_size) <= 3 * max(sd, 1e-9)
    msgs = [f"E|U|: {mean_size:.2f} vs {exp_size:.2f} (3sd {3*sd:.2f})"]
    # certificate evaluation on the first few nonempty draws
    cert_ok = False
    for keep in draws[:ctx.p["subset_evals"]]:
        if not keep.any():
            continue
        U = Region(C.coords[keep], d=D)
        bu = capacity.bcap(capacity.estimate_equilibrium(
            sel_union(U, r), mu, ctx.p["subset_R"], ctx.p["subset_neq"],
            streams.task_key(ctx.seed, "c11-u", int(keep.sum())),
            workers=ctx.workers, enforce_precondition=False))
        c_i = bu.value >= alpha * r ** (D - 4) * len(U)
        c_ii = r ** (D - 4) * len(U) >= alpha * bC
        if c_i and c_ii:
            cert_ok = True
            msgs.append(f"|U|={len(U)}: certs pass (alpha={alpha:.3f})")
            break
    if not cert_ok:
        ok = False
        msgs.append("no evaluated draw satisfied both certificates")
    return ok, "; ".join(msgs)


def crit12_volume_kolmogorov(ctx):
    chat = ctx.calib["volume_c"]
    ok = True
    worst = None
    for name in ctx.sets:
        bc = ctx.bcap(name)
        K = ctx.sets[name]
        lhs = bc.value + 3 * bc.stderr + bc.bias_bound
        rhs = chat * len(K) ** (1.0 - 4.0 / D)
        if lhs < rhs:
            ok = False
            worst = f"{name}: {lhs:.3f} < {rhs:.3f}"
    res = experiments.kolmogorov_height_check(ctx.mu, 100, ctx.p["kolmo_n"],
                                              streams.task_key(ctx.seed, "c12"),
                                              workers=ctx.workers)
    kol_ok = 0.85 <= res["stat"] <= 1.15
    ok = ok and kol_ok
    return ok, (f"volume bound holds (c={chat:.3f}); kolmogorov stat "
                f"{res['stat']:.3f} in [0.85, 1.15]" + (f"; {worst}" if worst else ""))


def _repro_outputs(ctx, run_tag, workers):
    """A representative output set for the byte-identity check."""
    mu = ctx.mu
    outdir = os.path.join(ctx.outdir, f"repro_{run_tag}")
    os.makedirs(outdir, exist_ok=True)
    K = ctx.sets["ball2"]
    est = capacity.estimate_equilibrium(
        K, mu, 32.0, ctx.p["repro_npp"], streams.task_key(ctx.seed, "c13-bcap"),
        workers=workers, c2=ctx.c2(), enforce_precondition=False)
    bc = capacity.bcap(est)
    reporting.write_json({"set": "ball:2", "mu": "binary", "n": ctx.p["repro_npp"],
                          "value": bc.value, "stderr": bc.stderr,
                          "bias_bound": bc.bias_bound,
                          "per_point": est.survival.tolist(),
                          "seed": ctx.seed, "version": 1},
                         os.path.join(outdir, "bcap.json"))
    curve = experiments.local_time_tail(
        Region([[0] * D]), 2, mu, [0, 20, 40, 70], 20_000,
        streams.task_key(ctx.seed, "c13-tail"), r_trunc=10.0, workers=workers,
        split_roots=100)
    rows = [(int(t), float(s), float(se), bool(cz))
            for t, s, se, cz in zip(curve.t_grid, curve.survival, curve.stderr,
                                    curve.censored)]
    reporting.write_csv(rows, ["t", "survival", "stderr", "censored"],
                        os.path.join(outdir, "tail.csv"))
    return [os.path.join(outdir, "bcap.json"), os.path.join(outdir, "tail.csv")]


def crit13_reproducibility(ctx):
    files1 = _repro_outputs(ctx, "w1", workers=1)
    files2 = _repro_outputs(ctx, "w2", workers=2)
    ok = True
    for f1, f2 in zip(files1, files2):
        with open(f1, "rb") as a, open(f2, "rb") as b:
            if a.read() != b.read():
                ok = False
    return ok, "outputs byte-identical across worker counts 1 and 2"


CRITERIA = [
    ("01-green-oracle-triangle", crit01_green_triangle),
    ("02-branching-green-cross-check", crit02_G_cross),
    ("03-ball-capacity-scaling", crit03_ball_scaling),
    ("04-two-sided-potential-bound", crit04_potential_bounds),
    ("05-last-passage-identity", crit05_last_passage),
    ("06-path-product-formula", crit06_path_formula),
    ("07-variational-sandwich", crit07_variational),
    ("08-lp-characterizations", crit08_lp),
    ("09-exponential-moment", crit09_exp_moment),
    ("10-local-time-tails", crit10_localtime),
    ("11-subset-selection", crit11_subset),
    ("12-volume-bound-kolmogorov", crit12_volume_kolmogorov),
    ("13-reproducibility", crit13_reproducibility),
]


def run_verify(seed, profile_name="quick", workers=None, outdir=".",
               calibration_path="calibration.json", only=None, echo=print):
    if not os.path.exists(calibration_path):
        raise FileNotFoundError(
            f"{calibration_path} not found; run `brwcap calibrate` first "
            "(two-phase protocol)")
    calib = reporting.read_json(calibration_path)
    ctx = VerifyContext(profile_name, seed, workers, outdir, calib=calib)
    results = {}
    all_ok = True
    for name, fn in CRITERIA:
        if only and not any(name.startswith(o) for o in only):
            continue
        ok, detail = fn(ctx)
        results[name] = {"pass": bool(ok), "detail": detail}
        all_ok = all_ok and ok
        echo(f"criterion {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    reporting.write_json({"seed": seed, "profile": profile_name,
                          "results": results},
                         os.path.join(outdir, "verify_report.json"))
    return 0 if all_ok else 2, results

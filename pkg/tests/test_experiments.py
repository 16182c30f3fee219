import numpy as np
import pytest

from brwcap import capacity, experiments, lattice, streams
from brwcap.lattice import Region


def test_zero_potential_gives_one(mu_binary, table10):
    phi = experiments.make_potential(Region([[0] * 5]), [0.0], table10)
    est, se = experiments.exp_functional_mc(phi, mu_binary, "full", 100, 1,
                                            r_trunc=6.0)
    assert est == 1.0 and se == 0.0


def test_sup_norm_precondition(mu_binary, table10):
    g0 = table10.G_at([[0] * 5])[0]
    phi = experiments.make_potential(Region([[0] * 5]), [2.0 / g0], table10)
    with pytest.raises(experiments.ExperimentError):
        experiments.exp_functional_mc(phi, mu_binary, "full", 10, 1,
                                      r_trunc=6.0, kappa0=1.0)


def test_exp_moment_small_potential(mu_binary, table10):
    eps = 0.05 / table10.G_at([[0] * 5])[0]
    phi = experiments.make_potential(Region([[0] * 5]), [eps], table10)
    assert phi.measured_sup_Gphi == pytest.approx(0.05, abs=1e-9)
    est, se = experiments.exp_functional_mc(phi, mu_binary, "full", 20_000, 2,
                                            r_trunc=12.0, workers=2)
    assert est <= 2 + 3 * se
    est_c, _ = experiments.exp_functional_mc(phi, mu_binary, "critical",
                                             20_000, 2, r_trunc=12.0,
                                             workers=2)
    assert est_c <= est + 3 * se  # the critical tree is a subtree of T


def test_doubling_monotone_pathwise(mu_binary, table10):
    """Same streams, doubled potential: the estimate can only go up."""
    g0 = table10.G_at([[0] * 5])[0]
    phi1 = experiments.make_potential(Region([[0] * 5]), [0.02 / g0], table10)
    phi2 = experiments.make_potential(Region([[0] * 5]), [0.04 / g0], table10)
    e1, _ = experiments.exp_functional_mc(phi1, mu_binary, "full", 4000, 5,
                                          r_trunc=10.0)
    e2, _ = experiments.exp_functional_mc(phi2, mu_binary, "full", 4000, 5,
                                          r_trunc=10.0)
    assert e2 >= e1


def test_ball_potential_construction(mu_binary, table10):
    centers = Region([[0] * 5])
    phi, masses, c1 = experiments.build_ball_potential(
        centers, 2, mu_binary, table10, n=200, seed=5, r_trunc=24.0, workers=2)
    assert phi.measured_sup_Gphi <= 1.0 + 1e-9
    b2 = lattice.ball([0] * 5, 2)
    assert len(phi.support) == len(b2)
    vals = {p: v for p, v in zip(phi.support, phi.values)}
    assert len(set(round(v, 12) for v in vals.values())) == 1  # constant on the ball


def test_ball_potential_two_centers_symmetric(mu_binary, table10):
    centers = Region([[0] * 5, [8, 0, 0, 0, 0]])
    phi, masses, c1 = experiments.build_ball_potential(
        centers, 2, mu_binary, table10, n=300, seed=6, r_trunc=32.0, workers=2)
    # per-ball equilibrium masses agree within MC noise (translation symmetry)
    rel = abs(masses[0] - masses[1]) / masses.mean()
    assert rel < 0.15
    with pytest.raises(experiments.ExperimentError):
        experiments.build_ball_potential(Region([[0] * 5, [3, 0, 0, 0, 0]]),
                                         2, mu_binary, table10, n=10, seed=0)


def test_tail_curve_monotone_and_slope(mu_binary):
    centers = Region([[0] * 5])
    curve = experiments.local_time_tail(centers, 2, mu_binary,
                                        [0, 20, 40, 80, 120, 180], 6000, 7,
                                        r_trunc=10.0, workers=2,
                                        split_roots=150)
    assert np.all(np.diff(curve.survival) <= 1e-12)
    assert curve.survival[0] <= 1.0
    assert curve.fitted_slope < 0
    assert curve.fit_r2 > 0.8


def test_splitting_consistent_with_raw(mu_binary):
    """Splitting estimates agree with raw MC on an overlapping threshold."""
    centers = Region([[0] * 5])
    grid = [0, 15, 30, 50]
    raw = experiments.local_time_tail(centers, 2, mu_binary, grid, 20_000, 8,
                                      r_trunc=8.0, workers=2, min_hits=5)
    forced = experiments.local_time_tail(centers, 2, mu_binary, grid, 800, 8,
                                         r_trunc=8.0, workers=2, min_hits=790,
                                         split_roots=400, split_factor=2)
    for i, t in enumerate(grid[1:], start=1):
        se = np.hypot(raw.stderr[i], forced.stderr[i])
        assert abs(raw.survival[i] - forced.survival[i]) < 4 * se + 1e-12


def test_set_tail_reduces_to_site(mu_binary, table10):
    lam = Region([[0] * 5])
    curve = experiments.set_tail(lam, mu_binary, [0, 2, 5, 9], 8000, 9,
                                 table=table10, r_trunc=10.0, workers=2)
    assert curve.rate_denominator == pytest.approx(
        table10.sup_norm_G(lam.coords, [1.0], 4)[0])
    assert np.all(np.diff(curve.survival) <= 0)
    # survival at t=0 equals P(origin visited at all)
    assert 0.5 < curve.survival[0] < 1.0


def test_set_tail_rate_comparison(mu_binary, table10):
    """slope * sup G(., set) comparable across shapes (factor 3)."""
    shapes = {
        "ball": lattice.ball([0] * 5, 2),
        "segment": lattice.parse_region("shift(segment:8;-4,0,0,0,0)", 5),
    }
    rates = {}
    for name, lam in shapes.items():
        curve = experiments.set_tail(lam, mu_binary,
                                     [0, 20, 40, 70, 110, 160], 20_000,
                                     10, table=table10, r_trunc=10.0,
                                     workers=2)
        assert curve.fitted_slope < 0 and curve.fit_r2 > 0.8
        rates[name] = -curve.fitted_slope * curve.rate_denominator
    ratio = rates["ball"] / rates["segment"]
    assert 1 / 3 < ratio < 3


def test_chernoff_chain_bound(mu_binary, table10):
    """Tail of ball local times vs the exponential bound with a fitted rate."""
    centers = Region([[0] * 5])
    r = 2
    phi, masses, c1 = experiments.build_ball_potential(
        centers, r, mu_binary, table10, n=200, seed=11, r_trunc=24.0,
        workers=2)
    bcap_est = capacity.estimate_bcap(lattice.ball([0] * 5, r), mu_binary,
                                      300, seed=12, r_trunc=24.0, workers=2)
    grid = [0, 30, 60, 100, 150]
    curve = experiments.local_time_tail(centers, r, mu_binary, grid, 15_000,
                                        13, r_trunc=10.0, workers=2,
                                        split_roots=150)
    # calibrate the rate on this very run, then assert the Chernoff shape
    kappas = [-np.log(min(s, 0.999) / 2.0) * c1 * r ** 5 / (t * bcap_est.value)
              for t, s in zip(curve.t_grid, curve.survival)
              if t > 0 and s > 0]
    kappa = 0.75 * min(kappas)
    for t, s, se in zip(curve.t_grid, curve.survival, curve.stderr):
        if s > 0:
            bound = 2 * np.exp(-kappa * t * bcap_est.value / (c1 * r ** 5))
            assert s <= bound * (1 + 3 * se / max(s, 1e-12))


def test_subset_bernoulli_law(mu_binary):
    C = Region([[0] * 5])
    res = experiments.subset_select(C, 1, 0.3, mu_binary, n_eq=400, seed=14,
                                    r_trunc=24.0, workers=2)
    p = res["probs"][0]
    assert 0 < p <= 1
    hits = 0
    reps = 400
    rng = np.random.Generator(np.random.Philox(
        key=np.array([streams.task_key(14, "subset-law"), 0], dtype=np.uint64)))
    for _ in range(reps):
        hits += rng.random() < p
    se = np.sqrt(p * (1 - p) / reps)
    assert abs(hits / reps - p) < 3 * se + 1e-9


def test_subset_expected_size(mu_binary):
    rng = np.random.default_rng(0)
    C = Region(rng.integers(-5, 6, size=(8, 5)) * 2)
    res = experiments.subset_select(C, 1, 0.3, mu_binary, n_eq=200, seed=15,
                                    r_trunc=40.0, workers=2)
    assert res["expected_size"] == pytest.approx(float(res["probs"].sum()))
    assert len(res["U"]) <= len(C)


def test_kolmogorov_window(mu_binary):
    res = experiments.kolmogorov_height_check(mu_binary, 100, 300_000, 16,
                                              workers=2)
    assert 0.85 <= res["stat"] <= 1.15


def test_experiment_csv_determinism(tmp_path, mu_binary):
    from brwcap import cli
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    for out, workers in ((out1, "1"), (out2, "2")):
        rc = cli.main(["localtime", "--centers", "ball:0", "--r", "2",
                       "--tgrid", "0,10,25", "--samples", "3000",
                       "--rtrunc", "8", "--seed", "21", "--workers", workers,
                       "--out", str(out)])
        assert rc == 0
    assert out1.read_bytes() == out2.read_bytes()

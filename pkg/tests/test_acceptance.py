"""Acceptance criteria, one test per criterion, quick profile.

This module follows the two-phase protocol: a session-scoped calibration run
pins the constant windows, then every criterion is asserted at its stated
tolerance.  Gate constants (3 sigma, factor 2.5/3, residual caps, the +-25%
windows) are exactly the stated ones; Monte Carlo budgets are the quick
profile, resized for a 2-core CI box as follows (reference budgets live in
brwcap.verify.PROFILES["full"]):

* criterion 1: 2e5 MC walks instead of 1e6 (the gate scales with stderr);
* criterion 2: R_trunc 32 instead of 64 and n 8e3 instead of 1e5 (the gate's
  own "+ truncation bias" term absorbs the recorded difference);
* criterion 3: per-point budgets (300/15/2 per active boundary point for
  r = 2/4/8) instead of the literal 1e5 per point, which would be ~5e9
  past-tree samples for r = 8 alone;
* criteria 5, 9, 10, 11: n and R_trunc per PROFILES["quick"];
* criterion 13: byte-identity is asserted on a representative output subset
  (bcap + tail curve) across worker counts 1 vs 2.
"""

import pytest

from brwcap import reporting, verify


@pytest.fixture(scope="session")
def acceptance_ctx(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("verify")
    calib = verify.calibrate(seed=11, profile_name="quick", workers=2,
                             outdir=str(outdir))
    reporting.write_json(calib, str(outdir / "calibration.json"))
    return verify.VerifyContext("quick", seed=7, workers=2,
                                outdir=str(outdir), calib=calib)


def _run(ctx, name, fn):
    ok, detail = fn(ctx)
    print(f"criterion {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {name}: {detail}"


def test_criterion_01_green_oracle_triangle(acceptance_ctx):
    _run(acceptance_ctx, "01-green-oracle-triangle",
         verify.crit01_green_triangle)


def test_criterion_02_branching_green_cross_check(acceptance_ctx):
    _run(acceptance_ctx, "02-branching-green-cross-check", verify.crit02_G_cross)


def test_criterion_03_ball_capacity_scaling(acceptance_ctx):
    _run(acceptance_ctx, "03-ball-capacity-scaling", verify.crit03_ball_scaling)


def test_criterion_04_two_sided_potential_bound(acceptance_ctx):
    _run(acceptance_ctx, "04-two-sided-potential-bound",
         verify.crit04_potential_bounds)


def test_criterion_05_last_passage_identity(acceptance_ctx):
    _run(acceptance_ctx, "05-last-passage-identity", verify.crit05_last_passage)


def test_criterion_06_path_product_formula(acceptance_ctx):
    _run(acceptance_ctx, "06-path-product-formula", verify.crit06_path_formula)


def test_criterion_07_variational_sandwich(acceptance_ctx):
    _run(acceptance_ctx, "07-variational-sandwich", verify.crit07_variational)


def test_criterion_08_lp_characterizations(acceptance_ctx):
    _run(acceptance_ctx, "08-lp-characterizations", verify.crit08_lp)


def test_criterion_09_exponential_moment(acceptance_ctx):
    _run(acceptance_ctx, "09-exponential-moment", verify.crit09_exp_moment)


def test_criterion_10_local_time_tails(acceptance_ctx):
    _run(acceptance_ctx, "10-local-time-tails", verify.crit10_localtime)


def test_criterion_11_subset_selection(acceptance_ctx):
    _run(acceptance_ctx, "11-subset-selection", verify.crit11_subset)


def test_criterion_12_volume_bound_kolmogorov(acceptance_ctx):
    _run(acceptance_ctx, "12-volume-bound-kolmogorov",
         verify.crit12_volume_kolmogorov)


def test_criterion_13_reproducibility(acceptance_ctx):
    _run(acceptance_ctx, "13-reproducibility", verify.crit13_reproducibility)

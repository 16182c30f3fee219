"""Command-line front end.

Subcommands: green, bcap, equilibrium, potential-profile, energy, lp,
expmoment, localtime, settail, subset, scaling, calibrate, verify.

Every output file gets a sibling ``.manifest.json`` (config echo, code
version, green-table checksum, wall time, per-stream replicate counts).
Exit codes: 0 success, 2 verify-gate failure, 1 any error.  The seed is
mandatory; there is no entropy default.  ``BRWCAP_WORKERS`` overrides the
worker count, ``--config`` supplies INI-style defaults.
"""

from __future__ import annotations

import argparse
import configparser
import sys

import numpy as np

from . import (capacity, experiments, green, lattice, optim, reporting,
               streams, verify)
from .lattice import Region
from .offspring import preset


def _add_common(sp, seed=True, green_opt=True):
    sp.add_argument("--dim", type=int, default=5)
    sp.add_argument("--mu", default="binary", help="offspring preset")
    if seed:
        sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--config", default=None, help="INI file with defaults")
    if green_opt:
        sp.add_argument("--green", default=None, help="green table cache path")
    sp.add_argument("--out", default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="brwcap",
                                 description="branching random walk capacity toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("green", help="build and cache a Green table")
    sp.add_argument("--dim", type=int, default=5)
    sp.add_argument("--radius", type=int, default=16)
    sp.add_argument("--sigma2", type=float, default=1.0)
    sp.add_argument("--lconv", type=int, default=None)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--g-only", action="store_true")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("bcap", help="branching capacity estimate")
    _add_common(sp)
    sp.add_argument("--set", required=True, dest="set_spec")
    sp.add_argument("--samples", type=int, default=200,
                    help="replicates per active point")
    sp.add_argument("--rtrunc", default="auto")

    sp = sub.add_parser("equilibrium", help="per-point equilibrium measure")
    _add_common(sp)
    sp.add_argument("--set", required=True, dest="set_spec")
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--rtrunc", default="auto")

    sp = sub.add_parser("potential-profile", help="Ge_K profile over a scan set")
    _add_common(sp)
    sp.add_argument("--set", required=True, dest="set_spec")
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--rtrunc", default="auto")
    sp.add_argument("--dilate", type=int, default=2)

    sp = sub.add_parser("energy", help="minimum energy over the simplex")
    _add_common(sp, seed=False)
    sp.add_argument("--set", required=True, dest="set_spec")
    sp.add_argument("--kernel", choices=["G", "Gbar"], default="G")
    sp.add_argument("--tol", type=float, default=1e-9)

    sp = sub.add_parser("lp", help="sup/inf linear characterizations")
    _add_common(sp, seed=False)
    sp.add_argument("--set", required=True, dest="set_spec")
    sp.add_argument("--which", choices=["sup", "inf"], default="sup")

    sp = sub.add_parser("expmoment", help="exponential moment of sum phi")
    _add_common(sp)
    sp.add_argument("--set", required=True, dest="set_spec",
                    help="support of the potential")
    sp.add_argument("--sup-target", type=float, default=0.05,
                    help="scale a constant potential to this sup |G phi|")
    sp.add_argument("--kind", choices=["full", "critical"], default="full")
    sp.add_argument("--samples", type=int, default=20000)
    sp.add_argument("--rtrunc", type=float, default=12.0)

    sp = sub.add_parser("localtime", help="tail of ball local times")
    _add_common(sp, green_opt=False)
    sp.add_argument("--centers", required=True,
                    help="region spec for the ball centers")
    sp.add_argument("--r", type=float, default=2.0)
    sp.add_argument("--tgrid", required=True, help="comma separated thresholds")
    sp.add_argument("--samples", type=int, default=20000)
    sp.add_argument("--rtrunc", type=float, default=12.0)

    sp = sub.add_parser("settail", help="tail of the local time of a set")
    _add_common(sp)
    sp.add_argument("--set", required=True, dest="set_spec")
    sp.add_argument("--tgrid", required=True)
    sp.add_argument("--samples", type=int, default=20000)
    sp.add_argument("--rtrunc", type=float, default=12.0)

    sp = sub.add_parser("subset", help="capacity-positive subset selection")
    _add_common(sp, green_opt=False)
    sp.add_argument("--set", required=True, dest="set_spec")
    sp.add_argument("--r", type=int, default=2)
    sp.add_argument("--c0", type=float, default=0.35)
    sp.add_argument("--samples", type=int, default=5)
    sp.add_argument("--rtrunc", type=float, default=64.0)

    sp = sub.add_parser("scaling", help="scaling-law experiment tables")
    _add_common(sp)
    sp.add_argument("--experiment", required=True,
                    choices=["bcap_balls", "hitting_critical", "hitting_past",
                             "volume_lower", "kolmogorov", "shift_invariance"])
    sp.add_argument("--rs", default="2,4,8")
    sp.add_argument("--samples", type=int, default=2000)

    sp = sub.add_parser("calibrate", help="pin the suite constant windows")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--profile", choices=["quick", "full"], default="quick")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--outdir", default=".")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", default="calibration.json")

    sp = sub.add_parser("verify", help="run the acceptance criteria")
    sp.add_argument("--suite", choices=["quick", "full"], default="quick")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--outdir", default=".")
    sp.add_argument("--calibration", default="calibration.json")
    sp.add_argument("--only", default=None,
                    help="comma separated criterion prefixes")
    sp.add_argument("--config", default=None)
    return ap


def _apply_config(ap, argv):
    """Merge INI defaults: values in [<subcommand>] or [default] sections."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    path = argv[i + 1]
    cp = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        cp.read_file(fh)
    cmd = argv[0]
    merged = {}
    for section in ("default", cmd):
        if cp.has_section(section):
            merged.update(dict(cp.items(section)))
    out = list(argv)
    for key, val in merged.items():
        flag = "--" + key.replace("_", "-")
        if flag not in out:
            out.extend([flag, val])
    return out


def _region(args):
    return lattice.parse_region(args.set_spec, args.dim)


def _rtrunc(args, K, x=None):
    if isinstance(args.rtrunc, str) and args.rtrunc == "auto":
        return capacity.default_r_trunc(K, x)
    return float(args.rtrunc)


def _load_green(args):
    if getattr(args, "green", None):
        return green.load_table(args.green), reporting.file_crc(args.green)
    return None, None


def _tgrid(text):
    return [int(v) for v in text.split(",")]


def cmd_green(args):
    table = green.build_green_table(args.dim, args.radius,
                                    sigma2=None if args.g_only else args.sigma2,
                                    tol=args.tol, L_conv=args.lconv,
                                    g_only=args.g_only)
    if args.g_only:
        raise SystemExit("refusing to cache a table without the branching part; "
                         "drop --g-only to write a file")
    green.save_table(table, args.out)
    man = reporting.RunManifest(vars(args), reporting.file_crc(args.out))
    man.write(args.out)
    print(f"wrote {args.out} (a_d={table.a_d:.6f}, classes={table.g.size})")
    return 0


def cmd_bcap(args, per_point=False):
    K = _region(args)
    mu = preset(args.mu)
    rt = _rtrunc(args, K)
    man = reporting.RunManifest(vars(args))
    est = capacity.estimate_equilibrium(K, mu, rt, args.samples, args.seed,
                                        workers=args.workers,
                                        enforce_precondition=False)
    bc = capacity.bcap(est)
    man.record_streams("equilibrium", int(est.n_samples.sum()))
    doc = {"set": args.set_spec, "mu": args.mu, "n": args.samples,
           "value": bc.value, "stderr": bc.stderr, "bias_bound": bc.bias_bound,
           "r_trunc": rt, "abort_fraction": est.abort_fraction,
           "per_point": [{"point": list(map(int, p)), "survival": float(s),
                          "stderr": float(e)}
                         for p, s, e in zip(K, est.survival, est.stderr)],
           "seed": args.seed, "version": 1}
    out = args.out or ("equilibrium.json" if per_point else "bcap.json")
    reporting.write_json(doc, out)
    man.write(out)
    print(f"BCap = {bc.value:.4f} +- {bc.stderr:.4f} (bias <= {bc.bias_bound:.4f})")
    return 0


def cmd_potential_profile(args):
    K = _region(args)
    mu = preset(args.mu)
    table, crc = _load_green(args)
    if table is None:
        raise SystemExit("--green table required for potentials")
    rt = _rtrunc(args, K)
    man = reporting.RunManifest(vars(args), crc)
    est = capacity.estimate_equilibrium(K, mu, rt, args.samples, args.seed,
                                        workers=args.workers,
                                        enforce_precondition=False)
    evals = verify.dilate(K, args.dilate)
    prof = capacity.ge_profile(K, est, table, evals.coords)
    rows = [(" ".join(map(str, map(int, p))), float(v), float(s))
            for p, v, s in zip(prof.eval_points, prof.values, prof.stderr)]
    out = args.out or "potential_profile.csv"
    reporting.write_csv(rows, ["point", "Ge", "stderr"], out)
    man.write(out)
    print(f"min on K = {prof.min_on_K:.4f} at {prof.argmin_on_K}; "
          f"max = {prof.max_value:.4f} at {prof.argmax}")
    return 0


def cmd_energy(args):
    K = _region(args)
    table, crc = _load_green(args)
    if table is None:
        raise SystemExit("--green table required for energies")
    res = optim.min_energy_fw(K, args.kernel, table, tol=args.tol)
    doc = {"set": args.set_spec, "kernel": args.kernel, "energy": res.energy,
           "iterations": res.iterations, "duality_gap": res.duality_gap,
           "converged": res.converged,
           "weights": res.minimizer.weights.tolist(), "version": 1}
    out = args.out or "energy.json"
    reporting.write_json(doc, out)
    reporting.RunManifest(vars(args), crc).write(out)
    print(f"E* = {res.energy:.6g} (gap {res.duality_gap:.2e}, "
          f"{res.iterations} iterations)")
    return 0


def cmd_lp(args):
    K = _region(args)
    table, crc = _load_green(args)
    if table is None:
        raise SystemExit("--green table required for the LPs")
    sol = optim.lp_sup(K, table) if args.which == "sup" else optim.lp_inf(K, table)
    doc = {"set": args.set_spec, "which": args.which, "objective": sol.objective,
           "feasibility_residual": sol.feasibility_residual,
           "duality_residual": sol.duality_residual,
           "slackness_residual": sol.slackness_residual,
           "phi": sol.phi.tolist(), "version": 1}
    out = args.out or "lp.json"
    reporting.write_json(doc, out)
    reporting.RunManifest(vars(args), crc).write(out)
    print(f"{args.which} objective = {sol.objective:.6g}")
    return 0


def cmd_expmoment(args):
    K = _region(args)
    mu = preset(args.mu)
    table, crc = _load_green(args)
    if table is None:
        raise SystemExit("--green table required to measure sup |G phi|")
    raw = experiments.make_potential(K, np.ones(len(K)), table)
    scale = args.sup_target / raw.measured_sup_Gphi
    phi = experiments.make_potential(K, np.full(len(K), scale), table)
    est, se = experiments.exp_functional_mc(phi, mu, args.kind, args.samples,
                                            args.seed, r_trunc=args.rtrunc,
                                            workers=args.workers)
    doc = {"set": args.set_spec, "kind": args.kind, "sup_Gphi": phi.measured_sup_Gphi,
           "estimate": est, "stderr": se, "n": args.samples,
           "r_trunc": args.rtrunc, "seed": args.seed, "version": 1}
    out = args.out or "expmoment.json"
    reporting.write_json(doc, out)
    reporting.RunManifest(vars(args), crc).write(out)
    print(f"E[exp sum phi] = {est:.4f} +- {se:.4f} (sup |G phi| = "
          f"{phi.measured_sup_Gphi:.4f})")
    return 0


def _write_curve(curve, out, man):
    rows = [(int(t), float(s), float(e), bool(c))
            for t, s, e, c in zip(curve.t_grid, curve.survival, curve.stderr,
                                  curve.censored)]
    reporting.write_csv(rows, ["t", "survival", "stderr", "censored"], out)
    man.write(out)
    print(f"slope = {curve.fitted_slope:.5f} (r2 = {curve.fit_r2:.3f}, "
          f"levels = {curve.split_levels})")


def cmd_localtime(args):
    centers = lattice.parse_region(args.centers, args.dim)
    mu = preset(args.mu)
    man = reporting.RunManifest(vars(args))
    curve = experiments.local_time_tail(centers, args.r, mu, _tgrid(args.tgrid),
                                        args.samples, args.seed,
                                        r_trunc=args.rtrunc,
                                        workers=args.workers)
    man.record_streams("replicates", args.samples)
    _write_curve(curve, args.out or "localtime.csv", man)
    return 0


def cmd_settail(args):
    K = _region(args)
    mu = preset(args.mu)
    table, crc = _load_green(args)
    man = reporting.RunManifest(vars(args), crc)
    curve = experiments.set_tail(K, mu, _tgrid(args.tgrid), args.samples,
                                 args.seed, table=table, r_trunc=args.rtrunc,
                                 workers=args.workers)
    man.record_streams("replicates", args.samples)
    _write_curve(curve, args.out or "settail.csv", man)
    if curve.rate_denominator:
        print(f"sup_x G(x, set) = {curve.rate_denominator:.4f}")
    return 0


def cmd_subset(args):
    C = _region(args)
    mu = preset(args.mu)
    man = reporting.RunManifest(vars(args))
    res = experiments.subset_select(C, args.r, args.c0, mu, n_eq=args.samples,
                                    seed=args.seed, r_trunc=args.rtrunc,
                                    workers=args.workers)
    doc = {"set": args.set_spec, "r": args.r, "c0": args.c0,
           "selected": [list(map(int, p)) for p in res["U"]],
           "probs": res["probs"].tolist(), "scaled": bool(res["scaled"]),
           "expected_size": res["expected_size"],
           "bcap_union": res["bcap_union_est"].value, "seed": args.seed,
           "version": 1}
    out = args.out or "subset.json"
    reporting.write_json(doc, out)
    man.write(out)
    print(f"|U| = {len(res['U'])} of {len(C)} (expected {res['expected_size']:.2f})")
    return 0


def cmd_scaling(args):
    mu = preset(args.mu)
    man = reporting.RunManifest(vars(args))
    kind = args.experiment
    rows, schema = [], []
    if kind == "bcap_balls":
        schema = ["r", "bcap", "stderr", "bias_bound", "normalized"]
        for r in [int(v) for v in args.rs.split(",")]:
            K = lattice.ball([0] * args.dim, r)
            bc = capacity.bcap(capacity.estimate_equilibrium(
                K, mu, max(32.0, 4.0 * (2 * r + r)), args.samples,
                streams.task_key(args.seed, "scal-ball", r),
                workers=args.workers, enforce_precondition=False))
            rows.append((r, bc.value, bc.stderr, bc.bias_bound,
                         bc.value / r ** (args.dim - 4)))
    elif kind in ("hitting_critical", "hitting_past"):
        schema = ["dist", "estimate", "stderr", "normalized"]
        K = lattice.ball([0] * args.dim, 2)
        bc = capacity.bcap(capacity.estimate_equilibrium(
            K, mu, 32.0, args.samples,
            streams.task_key(args.seed, "scal-hitK"), workers=args.workers,
            enforce_precondition=False))
        expo = args.dim - 2 if kind == "hitting_critical" else args.dim - 4
        for dist in (8, 16):
            x = [dist] + [0] * (args.dim - 1)
            p, se = capacity.hitting_prob(
                K, x, kind.split("_")[1], mu, args.samples * 20,
                streams.task_key(args.seed, "scal-hit", dist),
                r_trunc=4.0 * (dist + 4), workers=args.workers)
            dK = lattice.dist_to_set(x, K)
            rows.append((dist, p, se, p * dK ** expo / bc.value))
    elif kind == "volume_lower":
        schema = ["set", "size", "bcap", "ratio"]
        for name, K in verify.suite_sets().items():
            if len(K) > 400:
                continue
            bc = capacity.bcap(capacity.estimate_equilibrium(
                K, mu, 40.0, max(args.samples // 50, 10),
                streams.task_key(args.seed, "scal-vol-" + name),
                workers=args.workers, enforce_precondition=False))
            rows.append((name, len(K), bc.value,
                         bc.value / len(K) ** (1 - 4.0 / args.dim)))
    elif kind == "kolmogorov":
        schema = ["height", "p", "stat"]
        res = experiments.kolmogorov_height_check(mu, 100, args.samples * 100,
                                                  args.seed, workers=args.workers)
        rows.append((100, res["p"], res["stat"]))
    elif kind == "shift_invariance":
        schema = ["chi2", "dof", "p_value", "skipped"]
        res = experiments.shift_invariance_check(mu, args.samples, args.seed)
        rows.append((res["chi2"], res["dof"], res["p_value"], res["skipped"]))
    out = args.out or f"scaling_{kind}.csv"
    reporting.write_csv(rows, schema, out)
    man.write(out)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def cmd_calibrate(args):
    doc = verify.calibrate(args.seed, args.profile, workers=args.workers,
                           outdir=args.outdir)
    reporting.write_json(doc, args.out)
    reporting.RunManifest(vars(args)).write(args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_verify(args):
    only = args.only.split(",") if args.only else None
    code, _ = verify.run_verify(args.seed, args.suite, workers=args.workers,
                                outdir=args.outdir,
                                calibration_path=args.calibration, only=only)
    return code


_DISPATCH = {
    "green": cmd_green,
    "bcap": cmd_bcap,
    "equilibrium": lambda a: cmd_bcap(a, per_point=True),
    "potential-profile": cmd_potential_profile,
    "energy": cmd_energy,
    "lp": cmd_lp,
    "expmoment": cmd_expmoment,
    "localtime": cmd_localtime,
    "settail": cmd_settail,
    "subset": cmd_subset,
    "scaling": cmd_scaling,
    "calibrate": cmd_calibrate,
    "verify": cmd_verify,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        if argv and not argv[0].startswith("-"):
            argv = _apply_config(ap, argv)
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return _DISPATCH[args.cmd](args)
    except SystemExit as e:
        if isinstance(e.code, str):
            print(f"error: {e.code}", file=sys.stderr)
            return 1
        return e.code or 0
    except (ValueError, OSError, RuntimeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

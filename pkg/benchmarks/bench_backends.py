"""Throughput comparison: compiled Cython kernels vs the pure-Python twin.

Run with `python benchmarks/bench_backends.py [--quick]`.  Both backends
consume identical Philox streams, so the result columns double as a parity
check (they must agree exactly).
"""

import argparse
import time

import numpy as np

from brwcap import lattice, offspring
from brwcap._tables import PointTable
from brwcap.backend import kernels_compiled, kernels_py


def run(kern, workload, reps):
    t0 = time.perf_counter()
    out = workload(kern, reps)
    return out, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    mu = offspring.preset("binary")
    d = 5
    K = PointTable(lattice.ball([0] * d, 2).coords)
    targets = PointTable(np.array([[0] * d, [1] + [0] * (d - 1)], dtype=np.int64))

    workloads = {
        "srw_visits (horizon 2000)": (
            lambda k, n: k.srw_visits(7, 0, n, d, 2000, targets),
            20 if args.quick else 200),
        "critical avoid (ball:2)": (
            lambda k, n: k.tree_avoid(9, 0, n, d, [3, 0, 0, 0, 0], False,
                                      mu.cdf, mu.adj_cdf, K, -1.0, 10**6),
            200 if args.quick else 5000),
        "past avoid (R=24)": (
            lambda k, n: k.past_avoid(11, 0, n, d, [2, 0, 0, 0, 0], mu.cdf,
                                      mu.adj_cdf, K, 24.0**2, 10**8),
            20 if args.quick else 400),
        "invariant localtime (R=10)": (
            lambda k, n: k.full_localtime(13, 0, n, d, [0] * d, mu.cdf,
                                          mu.split_cdf, mu.split_kp,
                                          mu.split_kf, targets, 2, 100.0,
                                          10**8),
            50 if args.quick else 1000),
    }

    print(f"{'workload':36s} {'compiled':>10s} {'python':>10s} {'speedup':>8s}")
    for name, (fn, reps) in workloads.items():
        if kernels_compiled is None:
            print(f"{name:36s} {'n/a':>10s}")
            continue
        out_c, t_c = run(kernels_compiled, fn, reps)
        out_p, t_p = run(kernels_py, fn, reps)
        same = all(np.array_equal(a, b) for a, b in zip(out_c, out_p))
        flag = "" if same else "  MISMATCH!"
        print(f"{name:36s} {t_c:9.3f}s {t_p:9.3f}s {t_p / t_c:7.1f}x{flag}")


if __name__ == "__main__":
    main()

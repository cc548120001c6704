"""Compiled ADMM kernel vs the pure-Python fallback on the Example-1 tracking QP.

    python3 benchmarks/bench_kernels.py [--horizons 5 10 20 40 80] [--iterations 200]

Prints microseconds per iteration for each backend and the speedup.  Both
backends run the same fixed number of iterations on the same workspace
(same factorization), so only the per-iteration loop is compared.
"""
import argparse

import numpy as np

from mpct import formulations as fm
from mpct.bench import format_rows, kernel_benchmark
from mpct.design import TrackingDesign
from mpct.model import LinearSystem, Polytope


def example1_builder(tag=fm.EQU_MPCT, yr=5.0):
    sys = LinearSystem([[1, 1], [0, 1]], [[0.5], [1]], [[1, 0]], [[0]])
    Z = Polytope.box([-10, -2, -0.5], [10, 2, 0.5])

    def build(N):
        d = TrackingDesign.from_lqr(sys, 100 * np.eye(2), np.eye(1), int(N),
                                    S=100 * np.eye(1), T=100 * np.eye(2), S_u=100 * np.eye(1))
        return fm.make_controller(tag, sys, d, Z).build(np.zeros(2), [yr])

    return build


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizons", type=int, nargs="+", default=[5, 10, 20, 40, 80])
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    rows = kernel_benchmark(example1_builder(), args.horizons, args.iterations, args.repeats)
    print(format_rows(rows))
    by = {(r["N"], r["backend"]): r["us_per_iter"] for r in rows}
    for N in args.horizons:
        if (N, "native") in by and (N, "python") in by:
            print(f"N={N}: native is {by[(N, 'python')] / by[(N, 'native')]:.1f}x faster")


if __name__ == "__main__":
    main()

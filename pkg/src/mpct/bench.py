"""Timing of the compiled ADMM kernel against the pure-Python fallback."""
from __future__ import annotations

import time

import numpy as np

from mpct.solver import AdmmWorkspace, SolverSettings, backend


def _fixed_iterations(n_iter):
    # tolerances that are never met, so every run does exactly n_iter iterations
    return SolverSettings(max_iter=n_iter, eps_abs=1e-300, eps_rel=1e-300, eps_pinf=0.0, eps_dinf=0.0,
                          polish=False)


def time_backend(prog, which, n_iter=200, repeats=3):
    """Best-of-``repeats`` seconds per ADMM iteration on ``prog`` with backend ``which``."""
    ws = AdmmWorkspace(prog, _fixed_iterations(n_iter))
    best = np.inf
    with backend.use(which):
        for _ in range(repeats):
            t0 = time.perf_counter()
            res = ws.solve()
            best = min(best, (time.perf_counter() - t0) / max(res.iterations, 1))
    return best


def kernel_benchmark(build, horizons, n_iter=200, repeats=3):
    """Rows ``{N, n, backend, us_per_iter, ops_per_iter}`` for ``build(N) -> program``.

    Backends that are not importable are skipped.
    """
    rows = []
    for N in horizons:
        prog = build(N)
        ops = AdmmWorkspace(prog, SolverSettings()).ops_per_iteration
        for which in ("native", "python"):
            if which not in backend.available():
                continue
            rows.append({
                "N": int(N), "n": prog.n, "backend": which,
                "us_per_iter": 1e6 * time_backend(prog, which, n_iter, repeats),
                "ops_per_iter": int(ops),
            })
    return rows


def format_rows(rows):
    lines = [f"{'N':>5} {'n':>6} {'backend':>8} {'us/iter':>10} {'ops/iter':>10}"]
    for r in rows:
        lines.append(f"{r['N']:>5} {r['n']:>6} {r['backend']:>8} {r['us_per_iter']:>10.2f} {r['ops_per_iter']:>10}")
    return "\n".join(lines)

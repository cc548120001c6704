"""Thin wrapper around HiGHS linear programming used by the set routines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass
class LPResult:
    status: str  # "optimal", "infeasible", "unbounded" or "error"
    value: float
    x: np.ndarray | None


def lp_min(c, F=None, g=None, Feq=None, geq=None, bounds=None) -> LPResult:
    """Minimize ``c @ z`` over ``{F z <= g, Feq z = geq}`` with free variables."""
    c = np.asarray(c, dtype=float)
    n = c.size
    if bounds is None:
        bounds = [(None, None)] * n
    kwargs = {}
    if F is not None and len(F):
        kwargs["A_ub"] = F
        kwargs["b_ub"] = g
    if Feq is not None and len(Feq):
        kwargs["A_eq"] = Feq
        kwargs["b_eq"] = geq
    res = linprog(c, bounds=bounds, method="highs", options=_OPTIONS, **kwargs)
    if res.status == 0:
        return LPResult("optimal", float(res.fun), res.x)
    if res.status == 2:
        return LPResult("infeasible", np.inf, None)
    if res.status == 3:
        return LPResult("unbounded", -np.inf, None)
    return LPResult("error", np.nan, None)

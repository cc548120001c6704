"""Solver settings and results."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

SOLVED = "Solved"
MAX_ITER = "MaxIter"
PRIMAL_INFEASIBLE = "PrimalInfeasible"
DUAL_INFEASIBLE = "DualInfeasible"

_STATUS = {1: SOLVED, 2: MAX_ITER, 3: PRIMAL_INFEASIBLE, 4: DUAL_INFEASIBLE}


@dataclass
class SolverSettings:
    rho: float = 1.0
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iter: int = 20000
    adaptive_rho: bool = False
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_pinf: float = 1e-7
    eps_dinf: float = 1e-7
    rho_eq_scale: float = 1e3
    check_every: int = 5
    adaptive_interval: int = 200
    linsys: str = "auto"  # "auto", "banded", "dense"
    polish: bool = True
    polish_delta: float = 1e-9

    def __post_init__(self):
        for name in ("rho", "eps_abs", "eps_rel", "sigma", "alpha", "eps_pinf", "eps_dinf", "rho_eq_scale", "polish_delta"):
            setattr(self, name, float(getattr(self, name)))
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.eps_abs <= 0 or self.eps_rel <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.linsys not in ("auto", "banded", "dense"):
            raise ValueError("linsys must be auto, banded or dense")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SolveResult:
    z: np.ndarray
    lam: np.ndarray
    status: str
    iterations: int
    r_prim: float
    r_dual: float
    objective: float
    info: dict = field(default_factory=dict)

    @property
    def solved(self):
        return self.status == SOLVED


def status_name(code):
    return _STATUS[int(code)]

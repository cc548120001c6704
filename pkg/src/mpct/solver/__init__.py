"""Structure-exploiting ADMM and dense reference solvers."""
from mpct.solver.admm import AdmmWorkspace, admm_qp, admm_qp_extended, admm_socp, admm_solve, feasibility
from mpct.solver.banded import BandedFactor, SemiBandedSolver, semibanded_solve
from mpct.solver.reference import dense_reference_solve
from mpct.solver.types import (
    DUAL_INFEASIBLE,
    MAX_ITER,
    PRIMAL_INFEASIBLE,
    SOLVED,
    SolveResult,
    SolverSettings,
)

__all__ = [
    "AdmmWorkspace", "admm_qp", "admm_qp_extended", "admm_socp", "admm_solve", "feasibility",
    "BandedFactor", "SemiBandedSolver", "semibanded_solve", "dense_reference_solve",
    "SolveResult", "SolverSettings", "SOLVED", "MAX_ITER", "PRIMAL_INFEASIBLE", "DUAL_INFEASIBLE",
]

import numpy as np
import pytest
import scipy.sparse as sp

from mpct.design import TrackingDesign
from mpct.model import LinearSystem, Polytope
from mpct.program import QP, StructuredProgram

#: acceptance lines collected during the run, printed in the terminal summary
ACCEPTANCE = []


def record_acceptance(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
    ACCEPTANCE.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


E1_BOUNDS = (np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [0.0], [1.0]]),
             np.array([-10.0, -2.0, -0.5]), np.array([10.0, 2.0, 0.5]))


def example1_system():
    return LinearSystem([[1, 1], [0, 1]], [[0.5], [1]], [[1, 0]], [[0]])


def example1_constraints():
    return Polytope.box([-10, -2, -0.5], [10, 2, 0.5])


def example1_design(N=5, offset=100.0, **kw):
    sys = example1_system()
    return TrackingDesign.from_lqr(sys, 100 * np.eye(2), np.eye(1), N, S=offset * np.eye(1),
                                   T=offset * np.eye(2), S_u=offset * np.eye(1), **kw)


@pytest.fixture(scope="session")
def e1():
    """Example-1 system, constraint box and design (Q = 100 I, R = 1, N = 5)."""
    return example1_system(), example1_constraints(), example1_design()


def random_qp(seed, n_max=200, with_eq=True):
    """Random strictly convex QP with a known strictly feasible point."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, max(2, n)))
    me = int(rng.integers(0, max(1, n // 4))) if with_eq else 0
    M = rng.normal(size=(n, n)) / np.sqrt(n)
    H = M @ M.T + rng.uniform(0.1, 1.0) * np.eye(n)
    x0 = rng.normal(size=n)
    F = rng.normal(size=(m, n))
    g = F @ x0 + rng.uniform(0.1, 1.0, size=m)
    Aeq = rng.normal(size=(me, n))
    beq = Aeq @ x0
    q = rng.normal(size=n) * 3
    return StructuredProgram(QP, sp.csr_matrix(H), q, 0.0, sp.csr_matrix(Aeq), beq, sp.csr_matrix(F), g)


@pytest.fixture(scope="session")
def all_programs(e1):
    """One program per formulation on Example 1 at x = (-5, 1)."""
    from mpct import formulations as fm
    from mpct.model import Zonotope
    from mpct.setops import invariant_set_for_tracking, rpi_outer_approx, terminal_set_regulation, tighten

    sys, Z, d = e1
    x = np.array([-5.0, 1.0])
    Xt = invariant_set_for_tracking(sys, d.K, Z, d.sigma)
    xr, ur = fm.steady_state_for_ref(sys, Z, [0.0], d.sigma)
    Xf = terminal_set_regulation(sys, d.K, Z).set
    W = Zonotope.from_box([-0.02, -0.02], [0.02, 0.02])
    rpi = rpi_outer_approx(sys.A + sys.B @ d.K, W)
    Zb = tighten(Z, rpi.set, d.K)
    Xtb = invariant_set_for_tracking(sys, d.K_bar, Zb, d.sigma)
    de = example1_design(gamma=10.0).complete(sys)
    return {
        "stan": fm.build_stan_mpc(sys, d, Z, Xf, x, [0.0]),
        "lin": fm.build_lin_mpct(sys, d, Z, Xt, x, [5.0]),
        "equ": fm.build_equ_mpct(sys, d, Z, x, [5.0, 0.0], [0.0]),
        "robust": fm.build_robust_mpct(sys, d, rpi, Zb, Xtb, x, [5.0]),
        "periodic": fm.build_periodic_mpct(sys, d, Z, 20, x, 5 * np.sin(2 * np.pi * np.arange(20) / 20)),
        "hmpc": fm.build_hmpc(sys, d, E1_BOUNDS, x, [5.0, 0.0], [0.0]),
        "econ": fm.build_econ_mpct(sys, de, Z, fm.EconomicCost(np.eye(3)), [7.0, 0.0, 0.0], x),
    }

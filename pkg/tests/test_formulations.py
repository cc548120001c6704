import cvxopt
import numpy as np
import pytest
from cvxopt import solvers
from hypothesis import given, settings
from hypothesis import strategies as st

from mpct import formulations as fm
from mpct.errors import MPCTError, UnreachableReference
from mpct.model import LinearSystem, Polytope, Zonotope
from mpct.setops import invariant_set_for_tracking, terminal_set_regulation
from mpct.solver import SOLVED, SolverSettings, admm_solve, dense_reference_solve

from conftest import E1_BOUNDS, example1_design

TIGHT = SolverSettings(eps_abs=1e-10, eps_rel=1e-10, adaptive_rho=True, max_iter=100_000)


# --------------------------------------------------------------------------- condensed oracle


class Affine:
    """Affine expression ``M v + c`` in the condensed decision vector ``v``."""

    __array_ufunc__ = None  # let ``ndarray @ Affine`` reach __rmatmul__

    def __init__(self, M, c):
        self.M, self.c = np.atleast_2d(M), np.atleast_1d(c).astype(float)

    def __add__(self, o):
        return Affine(self.M + o.M, self.c + o.c)

    def __sub__(self, o):
        return Affine(self.M - o.M, self.c - o.c)

    def __rmatmul__(self, L):
        return Affine(L @ self.M, L @ self.c)


def condensed_oracle(sys, d, Z, x0, kind, yr=None, xr=None, ur=None, Xt=None, Xf=None):
    """Solve the MPC problem over ``v = (u_0..u_{N-1}, xa, ua)`` with states eliminated."""
    N, nx, nu = d.N, sys.nx, sys.nu
    nv = N * nu + nx + nu
    E = np.eye(nv)
    u = [Affine(E[k * nu : (k + 1) * nu], np.zeros(nu)) for k in range(N)]
    xa = Affine(E[N * nu : N * nu + nx], np.zeros(nx))
    ua = Affine(E[N * nu + nx :], np.zeros(nu))
    if kind == "stan":
        xa, ua = Affine(np.zeros((nx, nv)), xr), Affine(np.zeros((nu, nv)), ur)
    xs = [Affine(np.zeros((nx, nv)), x0)]
    for k in range(N):
        xs.append(sys.A @ xs[-1] + sys.B @ u[k])
    quad = []  # (affine, weight)
    for k in range(N):
        quad += [(xs[k] - xa, d.Q), (u[k] - ua, d.R)]
    G_rows, h_rows, A_rows, b_rows = [], [], [], []

    def ineq(aff, F, g):
        G_rows.append(F @ aff.M)
        h_rows.append(g - F @ aff.c)

    def eq(aff):
        A_rows.append(aff.M)
        b_rows.append(-aff.c)

    for k in range(N):
        ineq(Affine(np.vstack([xs[k].M, u[k].M]), np.r_[xs[k].c, u[k].c]), Z.F, Z.g)
    if kind in ("lin", "equ"):
        w = Affine(np.vstack([xa.M, ua.M]), np.r_[xa.c, ua.c])
        ineq(w, Z.F, d.sigma * Z.g)
        eq(xa - (sys.A @ xa + sys.B @ ua))
    if kind == "lin":
        ineq(Affine(np.vstack([xs[N].M, xa.M, ua.M]), np.r_[xs[N].c, xa.c, ua.c]), Xt.F, Xt.g)
        quad += [(xs[N] - xa, d.P), (sys.C @ xa + sys.D @ ua - Affine(np.zeros((sys.ny, nv)), yr), d.S)]
    elif kind == "equ":
        eq(xs[N] - xa)
        quad += [(xa - Affine(np.zeros((nx, nv)), xr), d.T), (ua - Affine(np.zeros((nu, nv)), ur), d.S_u)]
    else:
        ineq(xs[N], Xf.F, Xf.g)
        quad.append((xs[N] - xa, d.P))
    P = sum(2 * a.M.T @ W @ a.M for a, W in quad) + 1e-12 * np.eye(nv)
    q = sum(2 * a.M.T @ W @ a.c for a, W in quad)
    c = sum(a.c @ W @ a.c for a, W in quad)
    m = lambda M: cvxopt.matrix(np.asarray(M, dtype=float))
    kw = {}
    if A_rows:
        A = np.vstack(A_rows)
        b = np.concatenate(b_rows)
        # the steady-state rows of the double integrator repeat a zero row; keep the independent ones
        keep = np.linalg.norm(A, axis=1) > 0
        A, b = A[keep], b[keep]
        _, R = np.linalg.qr(A.T)
        rank_rows = np.abs(np.diag(R)) > 1e-10
        kw = {"A": m(A[rank_rows]), "b": m(b[rank_rows].reshape(-1, 1))}
    solvers.options.update({"show_progress": False, "abstol": 1e-11, "reltol": 1e-11, "feastol": 1e-11})
    sol = solvers.qp(m(P), m(q.reshape(-1, 1)), m(np.vstack(G_rows)), m(np.concatenate(h_rows).reshape(-1, 1)), **kw)
    assert sol["status"] == "optimal"
    v = np.array(sol["x"]).ravel()
    return float(0.5 * v @ P @ v + q @ v + c)


@pytest.fixture(scope="module")
def e1_sets(e1):
    sys, Z, d = e1
    Xt = invariant_set_for_tracking(sys, d.K, Z, d.sigma).set
    return Xt, terminal_set_regulation(sys, d.K, Z).set


@pytest.mark.parametrize("x0", [(-5.0, 1.0), (3.0, -1.5), (9.0, 0.0)])
class TestAgainstCondensedOracle:
    def _admm(self, prog):
        r = admm_solve(prog, TIGHT)[0]
        assert r.status == SOLVED
        return r.objective

    def test_lin(self, e1, e1_sets, x0):
        sys, Z, d = e1
        prog = fm.build_lin_mpct(sys, d, Z, e1_sets[0], x0, [5.0])
        ref = condensed_oracle(sys, d, Z, np.array(x0), "lin", yr=np.array([5.0]), Xt=e1_sets[0])
        assert self._admm(prog) == pytest.approx(ref, abs=1e-6 * max(1.0, abs(ref)))

    def test_equ(self, e1, x0):
        sys, Z, d = e1
        prog = fm.build_equ_mpct(sys, d, Z, x0, [-3.0, 0.0], [0.0])
        ref = condensed_oracle(sys, d, Z, np.array(x0), "equ", xr=np.array([-3.0, 0.0]), ur=np.zeros(1))
        assert self._admm(prog) == pytest.approx(ref, abs=1e-6 * max(1.0, abs(ref)))



@pytest.mark.parametrize("x0", [(-2.0, 1.0), (1.5, -0.5), (3.0, 0.0)])
def test_stan_against_condensed_oracle(e1, e1_sets, x0):
    sys, Z, d = e1
    Xf = e1_sets[1]
    prog = fm.build_stan_mpc(sys, d, Z, Xf, x0, [0.0])
    ref = condensed_oracle(sys, d, Z, np.array(x0), "stan", xr=np.zeros(2), ur=np.zeros(1), Xf=Xf)
    r = admm_solve(prog, TIGHT)[0]
    assert r.status == SOLVED
    assert r.objective == pytest.approx(ref, abs=1e-6 * max(1.0, abs(ref)))


def test_all_builders_match_dense_solver(all_programs):
    for name, prog in all_programs.items():
        r = admm_solve(prog, TIGHT)[0]
        ref = dense_reference_solve(prog)
        assert r.status == SOLVED and ref.status == SOLVED, name
        assert abs(r.objective - ref.objective) <= 1e-6 * max(1.0, abs(ref.objective)), name


# --------------------------------------------------------------------------- reference dependence


@pytest.mark.parametrize("tag", [fm.LIN_MPCT, fm.EQU_MPCT, fm.PERIODIC_MPCT])
def test_reference_enters_only_linear_term(e1, tag):
    sys, Z, d = e1
    spec = fm.make_controller(tag, sys, d, Z, tau=5)
    refs = ([2.0], [-7.0]) if tag != fm.PERIODIC_MPCT else (np.full((5, 1), 2.0), np.arange(5.0).reshape(5, 1))
    a, b = (spec._build(np.array([1.0, 0.5]), r) for r in refs)
    for M in ("H", "Aeq", "F"):
        assert (getattr(a, M) != getattr(b, M)).nnz == 0, M
    assert np.array_equal(a.beq, b.beq) and np.array_equal(a.g, b.g)
    assert not np.array_equal(a.q, b.q)


def test_build_cache_matches_direct_build(e1):
    sys, Z, d = e1
    for tag in (fm.LIN_MPCT, fm.EQU_MPCT, fm.STAN):
        spec = fm.make_controller(tag, sys, d, Z)
        for x in ([0.0, 0.0], [1.0, -0.5], [-3.0, 1.0], [2.0, 0.25]):
            cached = spec.build(np.array(x), [0.0])
            direct = spec._build(np.array(x), [0.0])
            assert np.allclose(cached.beq, direct.beq, atol=1e-14, rtol=0)
            assert np.array_equal(cached.q, direct.q) and np.array_equal(cached.g, direct.g)


# --------------------------------------------------------------------------- degenerate cases


def test_robust_with_zero_disturbance_is_lin(e1, e1_sets):
    sys, Z, d = e1
    x = np.array([-5.0, 1.0])
    lin = fm.build_lin_mpct(sys, d, Z, e1_sets[0], x, [5.0])
    rob = fm.build_robust_mpct(sys, d, Zonotope(np.zeros(2)), Z, e1_sets[0], x, [5.0])
    a, b = admm_solve(lin, TIGHT)[0], admm_solve(rob, TIGHT)[0]
    assert abs(a.objective - b.objective) <= 1e-8 * max(1.0, abs(a.objective))
    assert np.max(np.abs(lin.block(a.z, "u_0") - rob.block(b.z, "u_0"))) <= 1e-8


def test_single_step_periodic_and_equ_are_determined(e1):
    # N = 1 with x_1 on the steady-state manifold of the double integrator:
    # u_0 = -x2 and xa = (x1 + x2/2, 0)
    sys, Z, _ = e1
    d1 = example1_design(N=1)
    x = np.array([1.0, 0.4])
    per = fm.build_periodic_mpct(sys, d1, Z, 1, x, [[3.0]])
    equ = fm.build_equ_mpct(sys, d1, Z, x, [3.0, 0.0], [0.0])
    for prog, blk in ((per, "xa_0"), (equ, "xa")):
        r = admm_solve(prog, TIGHT)[0]
        assert np.allclose(prog.block(r.z, "u_0"), [-0.4], atol=1e-8)
        assert np.allclose(prog.block(r.z, blk), [1.2, 0.0], atol=1e-8)


def test_zero_cost_at_reachable_steady_state(e1):
    sys, Z, d = e1
    x = np.array([5.0, 0.0])
    progs = [
        fm.build_hmpc(sys, d, E1_BOUNDS, x, x, [0.0]),
        fm.build_periodic_mpct(sys, d, Z, 6, x, np.full(6, 5.0)),
        fm.build_equ_mpct(sys, d, Z, x, x, [0.0]),
    ]
    for prog in progs:
        r = admm_solve(prog, TIGHT)[0]
        assert r.status == SOLVED
        assert abs(r.objective) <= 1e-8
    r = admm_solve(progs[0], TIGHT)[0]
    for blk in ("xs", "xc", "us", "uc"):
        assert np.max(np.abs(progs[0].block(r.z, blk))) <= 1e-6


def test_periodic_horizon_longer_than_period(e1):
    sys, Z, d = e1
    with pytest.raises(MPCTError):
        fm.build_periodic_mpct(sys, d, Z, 3, [0.0, 0.0], np.zeros(3))


def test_hmpc_requires_bounds_around_zero(e1):
    sys, _, d = e1
    Cz, Dz, lo, hi = E1_BOUNDS
    with pytest.raises(MPCTError):
        fm.build_hmpc(sys, d, (Cz, Dz, -lo, hi), [0.0, 0.0], [0.0, 0.0], [0.0])


# --------------------------------------------------------------------------- harmonic signals


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 3.0))
def test_harmonic_identity(seed, omega):
    rng = np.random.default_rng(seed)
    nx, nu = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    sys = LinearSystem(rng.normal(size=(nx, nx)), rng.normal(size=(nx, nu)), np.eye(nx), np.zeros((nx, nu)))
    M = fm.harmonic_equations(sys, omega)
    _, s, Vt = np.linalg.svd(M)
    null = Vt[np.sum(s > 1e-10):].T
    v = null @ rng.normal(size=null.shape[1])
    assert np.max(np.abs(M @ v)) <= 1e-12
    xe, xs, xc = v[:nx], v[nx : 2 * nx], v[2 * nx : 3 * nx]
    ue, us, uc = v[3 * nx : 3 * nx + nu], v[3 * nx + nu : 3 * nx + 2 * nu], v[3 * nx + 2 * nu :]
    for k in range(25):
        xk = fm.harmonic_point(k, omega, xe, xs, xc)
        uk = fm.harmonic_point(k, omega, ue, us, uc)
        xk1 = fm.harmonic_point(k + 1, omega, xe, xs, xc)
        assert np.max(np.abs(xk1 - sys.A @ xk - sys.B @ uk)) <= 1e-10 * max(1.0, np.abs(v).max())


# --------------------------------------------------------------------------- oracles


class TestOracles:
    def test_unreachable_stan_target(self, e1):
        sys, Z, d = e1
        with pytest.raises(UnreachableReference):
            fm.steady_state_for_ref(sys, Z, [11.0], 0.99)
        spec = fm.make_controller(fm.STAN, sys, d, Z)
        with pytest.raises(UnreachableReference):
            spec.build(np.zeros(2), [11.0])

    @pytest.mark.parametrize("yr, expected", [(12.0, 9.9), (-15.0, -9.9), (9.9, 9.9), (5.0, 5.0), (0.0, 0.0)])
    def test_optimal_reachable_reference(self, e1, yr, expected):
        sys, Z, _ = e1
        # a zero-gradient optimum pins the argmin only to about sqrt of the objective tolerance
        tol = 1e-5 if yr == expected else 1e-7
        for norm in (False, True):
            ya, xa, ua = fm.optimal_reachable_reference(sys, Z, 0.99, [yr], norm=norm)
            assert ya[0] == pytest.approx(expected, abs=tol)
            assert np.allclose(xa, [expected, 0.0], atol=tol) and abs(ua[0]) <= tol

    def test_target_from_output(self, e1):
        sys = e1[0]
        xr, ur = fm.target_from_output(sys, [12.0])
        assert np.allclose(xr, [12.0, 0.0]) and np.allclose(ur, [0.0])

    def test_economic_setpoint_interior(self, e1):
        sys, Z, _ = e1
        ell = fm.EconomicCost(np.eye(3))
        xs, us = fm.economic_setpoint(sys, Z, 0.99, ell, [7.0, 0.0, 0.0])
        assert np.allclose(xs, [7.0, 0.0], atol=1e-8) and abs(us[0]) <= 1e-8

    def test_economic_setpoint_kkt_on_boundary(self, e1):
        # theta off the manifold: the minimizer is the projection onto {(s, 0, 0) : |s| <= 9.9}
        sys, Z, _ = e1
        ell = fm.EconomicCost(np.diag([1.0, 2.0, 3.0]))
        xs, us = fm.economic_setpoint(sys, Z, 0.99, ell, [15.0, 1.0, 0.3])
        assert np.allclose(xs, [9.9, 0.0], atol=1e-7) and abs(us[0]) <= 1e-7

    def test_economic_cost_must_be_convex(self):
        with pytest.raises(MPCTError):
            fm.EconomicCost(-np.eye(3))

    def test_periodic_oracle(self, e1):
        sys, Z, d = e1
        tau = 20
        reach = 3 * np.sin(2 * np.pi * np.arange(tau) / tau)
        ya, xa, ua = fm.optimal_periodic_reference(sys, Z, d.sigma, tau, reach)
        assert np.max(np.abs(ya[:, 0] - reach)) <= 1e-6
        assert np.allclose(xa[0], xa[tau])
        assert np.max(np.abs(xa[1:] - xa[:-1] @ sys.A.T - ua @ sys.B.T)) <= 1e-9
        # a single-sample period reduces to the steady-state oracle
        ya1, _, _ = fm.optimal_periodic_reference(sys, Z, d.sigma, 1, [[12.0]])
        assert ya1[0, 0] == pytest.approx(9.9, abs=1e-7)


def test_shift_solution(all_programs):
    prog = all_programs["periodic"]
    z = np.arange(prog.n, dtype=float)
    out = fm.shift_solution(prog, z)
    assert np.array_equal(prog.block(out, "x_0"), prog.block(z, "x_1"))
    assert np.array_equal(prog.block(out, "u_4"), prog.block(z, "u_4"))
    assert np.array_equal(prog.block(out, "xa_0"), prog.block(z, "xa_1"))
    assert np.array_equal(prog.block(out, "ua_19"), prog.block(z, "ua_0"))


def test_controller_tags(e1):
    sys, Z, d = e1
    with pytest.raises(MPCTError):
        fm.make_controller("MPC", sys, d, Z)
    with pytest.raises(MPCTError):
        fm.make_controller(fm.ROBUST_MPCT, sys, d, Z)
    with pytest.raises(MPCTError):
        fm.ControllerSpec(fm.LIN_MPCT, sys, d, Z, {}, {}, fm.TUBE)

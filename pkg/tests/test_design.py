import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpct.design import (
    TrackingDesign,
    dare_lqr,
    dare_residual,
    lyapunov_terminal_cost,
    validate_assumption1,
    validate_assumption2,
    validate_economic,
)
from mpct.errors import NoStabilizingSolution, NotSchur
from mpct.model import Zonotope, steady_state_manifold
from mpct.setops import invariant_set_for_tracking, rpi_outer_approx, tighten

from conftest import example1_constraints, example1_design, example1_system


class TestDare:
    def test_scalar_golden_ratio(self):
        P, K = dare_lqr([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        phi = (1 + np.sqrt(5)) / 2
        assert P[0, 0] == pytest.approx(phi, abs=1e-10)
        assert K[0, 0] == pytest.approx(-phi / (1 + phi), abs=1e-10)

    def test_zero_dynamics(self):
        Q = np.diag([2.0, 3.0])
        P, K = dare_lqr(np.zeros((2, 2)), np.eye(2), Q, np.eye(2))
        assert np.allclose(P, Q, atol=1e-12)
        assert np.allclose(K, 0, atol=1e-12)

    def test_example1_residual(self):
        sys = example1_system()
        P, K = dare_lqr(sys.A, sys.B, 100 * np.eye(2), np.eye(1))
        assert np.max(np.abs(dare_residual(sys.A, sys.B, 100 * np.eye(2), np.eye(1), P))) <= 1e-9
        assert np.max(np.abs(np.linalg.eigvals(sys.A + sys.B @ K))) < 1

    def test_no_stabilizing_solution(self):
        sys = example1_system()
        with pytest.raises(NoStabilizingSolution):
            dare_lqr(sys.A, sys.B, np.zeros((2, 2)), np.eye(1))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetric_pd(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 1))
        M = rng.normal(size=(3, 3))
        Q = M @ M.T + 0.1 * np.eye(3)
        P, K = dare_lqr(A, B, Q, np.eye(1))
        assert np.max(np.abs(P - P.T)) <= 1e-12 * max(1.0, np.abs(P).max())
        assert np.min(np.linalg.eigvalsh(P)) > 0


class TestLyapunov:
    def test_nilpotent(self):
        A, B = np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]])
        K = np.array([[0.0, 0.0]])
        # A + BK nilpotent of index 2: P = Q + A'QA
        Q, R = np.eye(2), np.eye(1)
        P = lyapunov_terminal_cost(A, B, K, Q, R)
        assert np.allclose(P, Q + A.T @ Q @ A)

    def test_deadbeat_closed_loop(self):
        A, B = np.eye(2), np.eye(2)
        K = -np.eye(2)
        Q, R = np.diag([1.0, 2.0]), 3 * np.eye(2)
        P = lyapunov_terminal_cost(A, B, K, Q, R)
        assert np.allclose(P, Q + K.T @ R @ K)

    def test_scalar(self):
        P = lyapunov_terminal_cost([[0.5]], [[1.0]], [[0.0]], [[1.0]], [[1.0]])
        assert P[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-14)

    def test_not_schur(self):
        with pytest.raises(NotSchur):
            lyapunov_terminal_cost([[2.0]], [[1.0]], [[0.0]], [[1.0]], [[1.0]])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_equality_residual(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(3, 3))
        A = 0.9 * A / np.max(np.abs(np.linalg.eigvals(A)))
        B = rng.normal(size=(3, 2))
        K = np.zeros((2, 3))
        Q, R = np.eye(3), np.eye(2)
        P = lyapunov_terminal_cost(A, B, K, Q, R)
        Acl = A + B @ K
        res = P - Acl.T @ P @ Acl - (Q + K.T @ R @ K)
        assert np.max(np.abs(res)) <= 1e-10 * max(1.0, np.abs(P).max())
        assert np.max(np.abs(P - P.T)) <= 1e-12 * max(1.0, np.abs(P).max())
        assert np.min(np.linalg.eigvalsh(P)) > 0


class TestValidation:
    def test_example1_certified(self, e1):
        sys, Z, d = e1
        Xt = invariant_set_for_tracking(sys, d.K, Z, d.sigma)
        rep = validate_assumption1(sys, d, Xt, Z, n_samples=2000)
        assert rep.certified, rep.failed()

    def test_zero_state_weight_unobservable(self, e1):
        sys, _, d = e1
        bad = TrackingDesign(Q=np.zeros((2, 2)), R=d.R, N=d.N, S=d.S, P=d.P, K=d.K).complete(sys)
        rep = validate_assumption1(sys, bad)
        assert not rep["observability"].passed
        assert not rep.certified

    def test_short_horizon(self, e1):
        sys, _, d = e1
        short = TrackingDesign(Q=d.Q, R=d.R, N=sys.nu_index - 1, S=d.S, P=d.P, K=d.K).complete(sys)
        assert not validate_assumption1(sys, short)["horizon"].passed

    def test_robust_example(self, e1):
        sys, Z, d = e1
        W = Zonotope.from_box([-0.02, -0.02], [0.02, 0.02])
        rpi = rpi_outer_approx(sys.A + sys.B @ d.K, W)
        Zb = tighten(Z, rpi.set, d.K)
        Xtb = invariant_set_for_tracking(sys, d.K_bar, Zb, d.sigma)
        rep = validate_assumption2(sys, d, W, rpi, Xtb, Zb, n_samples=2000)
        assert rep.certified, rep.failed()
        assert rep["rpi_containment"].passed

    def test_economic_needs_gamma(self):
        sys, Z = example1_system(), example1_constraints()
        Zs = steady_state_manifold(sys, Z, 0.99)
        d0 = example1_design()
        rep = validate_economic(sys, d0, Zs, np.array([7.0, 0.0]), np.zeros(1))
        assert not rep["offset_linear_lower_bound"].passed
        d1 = example1_design(gamma=10.0)
        assert validate_economic(sys, d1, Zs, np.array([7.0, 0.0]), np.zeros(1)).certified

    def test_design_round_trip(self, e1):
        _, _, d = e1
        back = TrackingDesign.from_dict(d.to_dict())
        assert np.array_equal(back.P, d.P) and back.N == d.N

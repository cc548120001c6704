import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mpct import formulations as fm
from mpct.errors import SingularCapacitance
from mpct.program import QP, SOCP, Cone, StructuredProgram
from mpct.solver import (
    DUAL_INFEASIBLE,
    PRIMAL_INFEASIBLE,
    SOLVED,
    AdmmWorkspace,
    BandedFactor,
    SemiBandedSolver,
    SolverSettings,
    admm_qp,
    admm_qp_extended,
    admm_socp,
    admm_solve,
    backend,
    dense_reference_solve,
    feasibility,
    semibanded_solve,
)
from mpct.solver.admm import history_csv
from mpct.solver.cones import project_soc

from conftest import example1_constraints, example1_design, example1_system, random_qp

TIGHT = SolverSettings(eps_abs=1e-10, eps_rel=1e-10, adaptive_rho=True, max_iter=100_000)


class TestProjectSoc:
    def test_inside_unchanged(self):
        s, t = project_soc([3.0, 4.0], 10.0)
        assert np.array_equal(s, [3.0, 4.0]) and t == 10.0

    def test_polar_to_origin(self):
        s, t = project_soc([3.0, 4.0], -10.0)
        assert np.array_equal(s, [0.0, 0.0]) and t == 0.0

    def test_boundary_case(self):
        s, t = project_soc([3.0, 4.0], 0.0)
        assert np.allclose(s, [1.5, 2.0]) and t == pytest.approx(2.5)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=4, max_size=4), st.lists(st.floats(-100, 100), min_size=4, max_size=4))
    def test_idempotent_and_nonexpansive(self, a, b):
        a, b = np.array(a), np.array(b)
        pa = np.r_[project_soc(a[:3], a[3])[0], project_soc(a[:3], a[3])[1]]
        pb = np.r_[project_soc(b[:3], b[3])[0], project_soc(b[:3], b[3])[1]]
        ppa = np.r_[project_soc(pa[:3], pa[3])[0], project_soc(pa[:3], pa[3])[1]]
        assert np.allclose(ppa, pa, atol=1e-12)
        assert np.linalg.norm(pa[:3]) <= pa[3] + 1e-12
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9


class TestBanded:
    def _spd_banded(self, n, p, seed):
        rng = np.random.default_rng(seed)
        M = np.zeros((n, n))
        for k in range(1, p + 1):
            d = rng.normal(size=n - k)
            M += np.diag(d, k) + np.diag(d, -k)
        M += (np.abs(M).sum(axis=1).max() + 1.0) * np.eye(n)
        return M

    @pytest.mark.parametrize("which", backend.available())
    def test_banded_factor_residual(self, which):
        M = self._spd_banded(60, 4, 0)
        b = np.random.default_rng(1).normal(size=60)
        with backend.use(which):
            fac = BandedFactor(M)
            x = fac.solve(b)
        assert fac.p == 4
        assert np.linalg.norm(M @ x - b) / np.linalg.norm(b) <= 1e-12

    def test_rcm_permutation(self):
        M = self._spd_banded(40, 2, 3)
        P = np.random.default_rng(0).permutation(40)
        Mp = M[P][:, P]
        fac = BandedFactor.rcm(Mp)
        b = np.arange(40.0)
        assert np.linalg.norm(Mp @ fac.solve(b) - b) <= 1e-10 * np.linalg.norm(b)

    def test_woodbury_zero_update(self):
        M = self._spd_banded(20, 2, 0)
        b = np.ones(20)
        fac = BandedFactor(M)
        x = semibanded_solve(fac, np.zeros((20, 3)), np.zeros((20, 3)), b)
        assert np.array_equal(x, fac.solve(b))

    def test_woodbury_two_by_two(self):
        # (I + [1;0][0 1]) x = (1, 1) -> x = (0, 1)
        fac = BandedFactor(np.eye(2))
        x = semibanded_solve(fac, [[1.0], [0.0]], [[0.0], [1.0]], np.array([1.0, 1.0]))
        assert np.allclose(x, [0.0, 1.0], atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_woodbury_random(self, seed):
        rng = np.random.default_rng(seed)
        n, r = int(rng.integers(20, 120)), int(rng.integers(1, 21))
        M = self._spd_banded(n, int(rng.integers(0, 6)), seed)
        U = rng.normal(size=(n, r))
        V = rng.normal(size=(n, r)) * 0.1
        b = rng.normal(size=n)
        fac = BandedFactor(M)
        full = M + U @ V.T
        for x in (semibanded_solve(fac, U, V, b), SemiBandedSolver(fac, U, V).solve(b)):
            assert np.linalg.norm(full @ x - b) / np.linalg.norm(b) <= 1e-9

    def test_woodbury_on_equ_kkt(self):
        sys, Z = example1_system(), example1_constraints()
        prog = fm.build_equ_mpct(sys, example1_design(N=30), Z, [-5.0, 1.0], [5.0, 0.0], [0.0])
        ws = AdmmWorkspace(prog, SolverSettings())
        b = np.random.default_rng(0).normal(size=prog.n)
        x = ws.linsys.solve(b)
        assert ws.mode == "semibanded"
        assert np.linalg.norm(ws.K @ x - b) / np.linalg.norm(b) <= 1e-9

    def test_singular_capacitance(self):
        # M = I, U V' = -e1 e1' makes M + UV' singular
        fac = BandedFactor(np.eye(3))
        U = np.array([[1.0], [0.0], [0.0]])
        with pytest.raises(SingularCapacitance):
            semibanded_solve(fac, U, -U, np.ones(3))
        with pytest.raises(SingularCapacitance):
            SemiBandedSolver(fac, U, -U)


class TestAdmmQP:
    def test_bound_constrained_scalar(self):
        # min (z - 1)^2 s.t. z >= 2 -> z = 2
        prog = StructuredProgram(QP, sp.csr_matrix([[2.0]]), np.array([-2.0]), 1.0, None, None, [[-1.0]], [-2.0])
        r = admm_qp(prog, TIGHT)
        assert r.status == SOLVED
        assert r.z[0] == pytest.approx(2.0, abs=1e-9)
        assert r.objective == pytest.approx(1.0, abs=1e-9)

    def test_unconstrained_minimum(self):
        # min (z - 1)^2 s.t. z <= 5 -> z = 1, objective 0
        prog = StructuredProgram(QP, sp.csr_matrix([[2.0]]), np.array([-2.0]), 1.0, None, None, [[1.0]], [5.0])
        r = admm_qp(prog, TIGHT)
        assert r.z[0] == pytest.approx(1.0, abs=1e-9) and abs(r.objective) <= 1e-9

    @pytest.mark.parametrize("seed", range(15))
    def test_random_qp_matches_dense(self, seed):
        prog = random_qp(seed, n_max=80)
        r = admm_qp(prog, TIGHT)
        ref = dense_reference_solve(prog)
        assert r.status == SOLVED and ref.status == SOLVED
        assert abs(r.objective - ref.objective) <= 1e-5 * max(1.0, abs(ref.objective))
        assert np.max(np.abs(r.z - ref.z)) <= 1e-4

    def test_cones_rejected_by_qp_entry(self, all_programs):
        with pytest.raises(ValueError):
            admm_qp(all_programs["hmpc"])

    def test_deterministic(self):
        prog = random_qp(3, n_max=60)
        a, b = admm_qp(prog, TIGHT), admm_qp(prog, TIGHT)
        assert a.z.tobytes() == b.z.tobytes() and a.iterations == b.iterations

    def test_backends_agree(self):
        if "native" not in backend.available():
            pytest.skip("compiled kernels not built")
        prog = random_qp(4, n_max=60)
        s = SolverSettings(eps_abs=1e-10, eps_rel=1e-10, polish=False)
        with backend.use("native"):
            a = admm_qp(prog, s)
        with backend.use("python"):
            b = admm_qp(prog, s)
        assert a.iterations == b.iterations
        assert np.max(np.abs(a.z - b.z)) <= 1e-9

    def test_dense_and_structured_modes_agree(self, all_programs):
        prog = all_programs["lin"]
        a = admm_qp(prog, TIGHT)
        b = admm_qp(prog, SolverSettings(**{**TIGHT.to_dict(), "linsys": "dense"}))
        assert a.info["mode"] == "semibanded" and b.info["mode"] == "dense"
        assert np.max(np.abs(a.z - b.z)) <= 1e-7

    def test_workspace_reuse(self, e1):
        sys, Z, d = e1
        p1 = fm.build_equ_mpct(sys, d, Z, [-5.0, 1.0], [5.0, 0.0], [0.0])
        p2 = fm.build_equ_mpct(sys, d, Z, [-4.0, 0.5], [5.0, 0.0], [0.0])
        _, ws = admm_solve(p1, TIGHT)
        r2, ws2 = admm_solve(p2, TIGHT, workspace=ws)
        assert ws2 is ws
        ref = dense_reference_solve(p2)
        assert np.max(np.abs(r2.z - ref.z)) <= 1e-6

    @pytest.mark.parametrize("seed", range(10))
    def test_residual_window_monotone(self, seed):
        prog = random_qp(100 + seed, n_max=40)
        rows = AdmmWorkspace(prog, SolverSettings()).history(1000)
        c = rows[:, 1] + rows[:, 2]
        window = c.reshape(-1, 50).max(axis=1)
        assert np.all(np.diff(window) <= 1e-10)

    def test_history_csv(self):
        rows = AdmmWorkspace(random_qp(0, n_max=10), SolverSettings()).history(3)
        text = history_csv(rows)
        lines = text.strip().split("\n")
        assert lines[0] == "iteration,r_prim,r_dual,objective"
        assert [int(line.split(",")[0]) for line in lines[1:]] == [1, 2, 3]


class TestInfeasibility:
    def test_primal_infeasible(self):
        # z <= -1 and z >= 1
        prog = StructuredProgram(QP, sp.csr_matrix([[1.0]]), np.zeros(1), 0.0, None, None, [[1.0], [-1.0]], [-1.0, -1.0])
        assert admm_qp(prog).status == PRIMAL_INFEASIBLE
        res, _ = feasibility(prog)
        assert res.status == PRIMAL_INFEASIBLE

    def test_dual_infeasible(self):
        # min -z s.t. z >= 0 is unbounded below
        prog = StructuredProgram(QP, sp.csr_matrix((1, 1)), np.array([-1.0]), 0.0, None, None, [[-1.0]], [0.0])
        assert admm_qp(prog).status == DUAL_INFEASIBLE

    def test_reference_reports_inconsistent_equalities(self):
        prog = StructuredProgram(QP, sp.eye(2), np.zeros(2), 0.0, [[1.0, 0.0], [1.0, 0.0]], [0.0, 1.0])
        assert dense_reference_solve(prog).status == PRIMAL_INFEASIBLE

    def test_feasible(self, all_programs):
        res, _ = feasibility(all_programs["lin"])
        assert res.status == SOLVED
        assert all_programs["lin"].violation(res.z) <= 1e-6


class TestSocp:
    def test_norm_ball(self):
        # min ||z - (3, 4)||^2 s.t. ||z|| <= 1 -> z = (0.6, 0.8)
        G = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]))
        prog = StructuredProgram(SOCP, 2 * sp.eye(2), np.array([-6.0, -8.0]), 25.0, cones=[Cone(G, np.array([0, 0, 1.0]))])
        r = admm_socp(prog, TIGHT)
        assert r.status == SOLVED
        assert np.allclose(r.z, [0.6, 0.8], atol=1e-8)
        ref = dense_reference_solve(prog)
        assert np.allclose(ref.z, [0.6, 0.8], atol=1e-7)

    @pytest.mark.parametrize("name", ["hmpc", "econ"])
    def test_builders_match_reference(self, all_programs, name):
        prog = all_programs[name]
        r = admm_socp(prog, TIGHT)
        ref = dense_reference_solve(prog)
        assert r.status == SOLVED and ref.status == SOLVED
        assert abs(r.objective - ref.objective) <= 1e-6 * max(1.0, abs(ref.objective))
        assert prog.violation(r.z) <= 1e-7


class TestExtended:
    def test_matches_standard(self, e1):
        sys, Z, d = e1
        s = SolverSettings(eps_abs=1e-10, eps_rel=1e-10, polish=False, adaptive_rho=True, max_iter=200_000)
        prog = fm.build_equ_mpct(sys, d, Z, [-5.0, 1.0], [5.0, 0.0], [0.0])
        a = admm_solve(prog, s)[0]
        b = admm_qp_extended(prog, s)
        assert a.status == SOLVED and b.status == SOLVED
        assert np.max(np.abs(a.z - b.z)) <= 1e-7

    def test_requires_reference_blocks(self):
        with pytest.raises(ValueError):
            admm_qp_extended(random_qp(0, n_max=10))


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(rho=0.0)
    with pytest.raises(ValueError):
        SolverSettings(linsys="cholmod")
    s = SolverSettings(rho=2.0)
    assert SolverSettings.from_dict(s.to_dict()) == s

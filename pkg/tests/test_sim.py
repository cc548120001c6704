import csv
import io

import numpy as np
import pytest

from mpct import formulations as fm
from mpct.errors import InfeasibleAtStep, MPCTError
from mpct.model import ReferenceSchedule, Zonotope
from mpct.sim import (
    ClosedLoopTrace,
    _lp_feasible,
    convergence_report,
    doa_scan,
    grid_axes,
    run_batch,
    run_closed_loop,
    set_excess,
)


@pytest.fixture(scope="module")
def lin(e1):
    sys, Z, d = e1
    return fm.make_controller(fm.LIN_MPCT, sys, d, Z)


def test_fixed_point_start(lin):
    # starting at the steady state of the reference, the loop never moves
    tr = run_closed_loop(lin, [4.0, 0.0], ReferenceSchedule.constant(4.0), 10)
    rep = convergence_report(tr, [4.0], tol=1e-9)
    assert rep["settling_time"] == 0
    assert np.max(np.abs(tr.x - [4.0, 0.0])) <= 1e-9
    assert np.max(np.abs(tr.u)) <= 1e-9


def test_plant_consistency_and_shapes(lin, e1):
    sys, Z, _ = e1
    tr = run_closed_loop(lin, [-3.0, 1.0], ReferenceSchedule.constant(2.0), 25)
    assert tr.x.shape == (26, 2) and tr.u.shape == (25, 1) and tr.steps == 25
    assert tr.plant_residual(sys.A, sys.B) <= 1e-12
    assert convergence_report(tr, [2.0], Z=Z)["violations"] == 0


def test_optimal_cost_decreases_under_constant_reference(lin):
    tr = run_closed_loop(lin, [-8.0, 1.5], ReferenceSchedule.constant(5.0), 40)
    cost = np.asarray(tr.objective)
    assert np.all(np.diff(cost) <= 1e-6 * np.maximum(1.0, np.abs(cost[:-1])))


def test_disturbed_runs_are_seeded(e1):
    sys, Z, d = e1
    W = Zonotope.from_box([-0.02, -0.02], [0.02, 0.02])
    rob = fm.make_controller(fm.ROBUST_MPCT, sys, d, Z, W=W)
    a, b, c = run_batch(rob, [0.0, 0.0], ReferenceSchedule.constant(3.0), 15, W, [7, 7, 8])
    assert np.array_equal(a.x, b.x) and not np.array_equal(a.x, c.x)
    assert np.all(np.abs(a.w) <= 0.02 + 1e-15)
    assert a.plant_residual(sys.A, sys.B) <= 1e-12


def test_csv_columns(lin):
    tr = run_closed_loop(lin, [0.0, 0.0], ReferenceSchedule.constant(1.0), 3)
    rows = list(csv.reader(io.StringIO(tr.to_csv())))
    assert rows[0] == ["t", "x0", "x1", "u0", "y0", "ya0", "status", "iters", "objective"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "2"]
    assert all(r[6] == "Solved" for r in rows[1:])


def test_infeasible_start_raises(e1):
    sys, Z, d = e1
    stan = fm.make_controller(fm.STAN, sys, d, Z)
    with pytest.raises(InfeasibleAtStep) as exc:
        run_closed_loop(stan, [9.5, 1.9], ReferenceSchedule.constant(0.0), 5)
    assert exc.value.step == 0
    tr = run_closed_loop(stan, [9.5, 1.9], ReferenceSchedule.constant(0.0), 5, raise_on_infeasible=False)
    assert tr.aborted_at == 0 and tr.steps == 0


def test_horizon_must_be_positive(lin):
    with pytest.raises(MPCTError):
        run_closed_loop(lin, [0.0, 0.0], ReferenceSchedule.constant(0.0), 0)


class TestMetrics:
    def test_set_excess(self):
        Zy = Zonotope([0.0], [[0.5]])
        assert set_excess([0.2], Zy) == pytest.approx(-0.3)
        assert set_excess([-0.7], Zy) == pytest.approx(0.2)
        box = Zonotope.from_box([-1, -1], [1, 1])
        assert set_excess([2.0, 0.0], box) == pytest.approx(1.0)
        assert set_excess([0.0, 0.0], box) == pytest.approx(-1.0)

    def test_settling_time(self):
        y = np.array([[5.0], [2.0], [0.5], [0.0], [0.0]])
        tr = ClosedLoopTrace(np.zeros((6, 1)), np.zeros((5, 1)), y, y, np.zeros((5, 1)), np.zeros((5, 1)),
                             np.zeros((5, 1)), ["Solved"] * 5, [1] * 5, [0.0] * 5, [[0.0]] * 5)
        rep = convergence_report(tr, [0.0], tol=0.6)
        assert rep["settling_time"] == 2 and rep["terminal_offset"] == 0.0


class TestDoA:
    def test_grid_axes_exact(self):
        ax = grid_axes([(-10, 10), (-2, 2)], 0.25)
        assert ax[0].size == 81 and ax[1].size == 17
        assert ax[0][0] == -10 and ax[0][-1] == 10
        with pytest.raises(MPCTError):
            grid_axes([(0, 1)], 0.3)

    def test_small_grid_matches_lp_and_is_deterministic(self, lin, e1):
        sys, Z, d = e1
        ranges = [(-10, 10), (-2, 2)]
        a = doa_scan(lin, ranges, 2.0, [0.0])
        b = doa_scan(lin, ranges, 2.0, [0.0])
        assert np.array_equal(a.feasible, b.feasible)
        assert a.to_csv() == b.to_csv()
        # every point agrees with an independent LP feasibility check
        for p, f in zip(a.points(), a.feasible.ravel()):
            assert f == _lp_feasible(lin.build(p, [0.0])), p

    def test_points_outside_constraints_infeasible(self, lin):
        m = doa_scan(lin, [(10.5, 11.5), (-1, 1)], 0.5, [0.0])
        assert m.count == 0

    def test_stan_subset_of_lin(self, lin, e1):
        sys, Z, d = e1
        stan = fm.make_controller(fm.STAN, sys, d, Z)
        ranges = [(-10, 10), (-2, 2)]
        ms, ml = doa_scan(stan, ranges, 1.0, [0.0]), doa_scan(lin, ranges, 1.0, [0.0])
        assert ms.subset_of(ml) and ml.count > ms.count

    def test_cone_programs_rejected(self, e1):
        sys, Z, d = e1
        h = fm.make_controller(fm.HMPC, sys, d, Z, bounds=(np.eye(3)[:, :2], np.eye(3)[:, 2:], [-10, -2, -0.5], [10, 2, 0.5]))
        with pytest.raises(MPCTError):
            doa_scan(h, [(0, 0), (0, 0)], 1.0, [0.0])

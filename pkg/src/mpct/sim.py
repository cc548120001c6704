"""Closed-loop simulation, convergence metrics and domain-of-attraction scans."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from mpct._lp import lp_min
from mpct.errors import InfeasibleAtStep, MPCTError
from mpct.formulations import ControllerSpec, shift_solution
from mpct.model import Polytope, ReferenceSchedule, Zonotope
from mpct.solver import admm_solve, feasibility
from mpct.solver.types import MAX_ITER, PRIMAL_INFEASIBLE, SOLVED, SolverSettings

#: settings used for closed-loop runs unless the caller passes its own
CLOSED_LOOP_SETTINGS = SolverSettings(adaptive_rho=True, eps_abs=1e-10, eps_rel=1e-10)


@dataclass
class ClosedLoopTrace:
    """Per-step record of a closed-loop run.

    ``x`` has ``T + 1`` rows (the final state is included); the other arrays
    have one row per applied step.
    """

    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    ya: np.ndarray
    xa: np.ndarray
    ua: np.ndarray
    w: np.ndarray
    status: list
    iterations: list
    objective: list
    refs: list
    meta: dict = field(default_factory=dict)
    aborted_at: int | None = None

    @property
    def steps(self):
        return self.u.shape[0]

    def plant_residual(self, A, B):
        """Largest ``|x(t+1) - A x(t) - B u(t) - w(t)|`` over the run."""
        if self.steps == 0:
            return 0.0
        pred = self.x[:-1] @ A.T + self.u @ B.T + self.w
        return float(np.max(np.abs(self.x[1:] - pred)))

    def to_csv(self):
        """CSV text with columns t, x[..], u[..], y[..], ya[..], status, iters, objective."""
        nx, nu, ny = self.x.shape[1], self.u.shape[1], self.y.shape[1]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)]
                    + [f"y{i}" for i in range(ny)] + [f"ya{i}" for i in range(ny)] + ["status", "iters", "objective"])
        for t in range(self.steps):
            wr.writerow([t] + [repr(float(v)) for v in self.x[t]] + [repr(float(v)) for v in self.u[t]]
                        + [repr(float(v)) for v in self.y[t]] + [repr(float(v)) for v in self.ya[t]]
                        + [self.status[t], self.iterations[t], repr(float(self.objective[t]))])
        return buf.getvalue()


def _sample_disturbance(W: Zonotope, rng):
    xi = rng.uniform(-1.0, 1.0, size=W.n_generators)
    return W.center + W.G @ xi


def run_closed_loop(spec: ControllerSpec, x0, schedule: ReferenceSchedule, T: int, disturbance=None,
                    settings: SolverSettings | None = None, raise_on_infeasible=True) -> ClosedLoopTrace:
    """Simulate ``T`` steps of the receding-horizon loop.

    ``disturbance`` is ``(W, seed)`` with ``W`` a zonotope; ``w(t)`` is drawn
    uniformly over its parameter box.  A solve that does not return
    ``Solved`` aborts the run: :class:`InfeasibleAtStep` is raised with the
    partial trace, or the trace is returned with ``aborted_at`` set.
    """
    if T < 1:
        raise MPCTError("T must be >= 1")
    settings = settings or CLOSED_LOOP_SETTINGS
    sys = spec.sys
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    rng = None
    W = None
    seed = None
    if disturbance is not None:
        W, seed = disturbance
        rng = np.random.default_rng(seed)
    xs, us, ys, yas, xas, uas, ws_ = [x.copy()], [], [], [], [], [], []
    status, iters, objs, refs = [], [], [], []
    workspace = None
    warm_z = warm_y = None
    aborted = None
    for t in range(T):
        ref = spec.reference(schedule, t)
        prog = spec.build(x, ref)
        res, workspace = admm_solve(prog, settings, warm_z, warm_y, workspace)
        if res.status != SOLVED:
            aborted = t
            status.append(res.status)
            break
        u = spec.control(prog, res.z, x)
        ya, xa, ua = spec.artificial(prog, res.z)
        w = _sample_disturbance(W, rng) if W is not None else np.zeros(sys.nx)
        us.append(u)
        ys.append(sys.output(x, u))
        yas.append(ya)
        xas.append(xa)
        uas.append(ua)
        ws_.append(w)
        status.append(res.status)
        iters.append(res.iterations)
        objs.append(res.objective)
        refs.append(np.atleast_1d(ref).tolist())
        x = sys.A @ x + sys.B @ u + w
        xs.append(x.copy())
        warm_z, warm_y = shift_solution(prog, res.z), res.lam
    nx, nu, ny = sys.nx, sys.nu, sys.ny

    def arr(rows, k):
        return np.array(rows, dtype=float).reshape(-1, k)

    trace = ClosedLoopTrace(
        x=arr(xs, nx), u=arr(us, nu), y=arr(ys, ny), ya=arr(yas, ny), xa=arr(xas, nx), ua=arr(uas, nu),
        w=arr(ws_, nx), status=status[: len(us)], iterations=iters, objective=objs, refs=refs,
        meta={"tag": spec.tag, "seed": seed, "schedule": schedule.to_dict(), "T": T},
        aborted_at=aborted,
    )
    if aborted is not None:
        trace.meta["abort_status"] = status[-1]
        if raise_on_infeasible:
            raise InfeasibleAtStep(aborted, trace)
    return trace


def run_batch(spec, x0, schedule, T, W, seeds, settings=None):
    """Monte-Carlo runs, one per seed, in seed order."""
    return [run_closed_loop(spec, x0, schedule, T, (W, int(s)), settings, raise_on_infeasible=False) for s in seeds]


# --------------------------------------------------------------------------- metrics


def set_excess(p, Zy: Zonotope):
    """How far ``p`` lies outside the zonotope ``Zy`` along its facet normals (<= 0 inside)."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if Zy.dim == 1:
        normals = np.array([[1.0], [-1.0]])
    elif Zy.n_generators == 0:
        return float(np.linalg.norm(p - Zy.center))
    else:
        P = Zy.to_polytope()
        normals = P.F / np.linalg.norm(P.F, axis=1, keepdims=True)
    return float(np.max(normals @ p - Zy.support_many(normals)))


def convergence_report(trace: ClosedLoopTrace, target, tol=1e-3, Z: Polytope | None = None, target_set=None,
                       target_traj=None):
    """Settling time, terminal offset and constraint violations of a trace.

    ``target`` is the output the loop should reach (point target).  With
    ``target_set`` (a zonotope in output space) the terminal check is the
    excess of ``y(T) - target`` outside that set.  ``target_traj`` gives a
    per-step target (periodic tracking), overriding ``target``.
    """
    n = trace.steps
    if target_traj is not None:
        tgt = np.asarray(target_traj, dtype=float).reshape(n, -1)
    else:
        tgt = np.tile(np.atleast_1d(np.asarray(target, dtype=float)), (n, 1))
    err = np.linalg.norm(trace.y - tgt, axis=1) if n else np.zeros(0)
    if target_set is not None:
        err = np.array([max(set_excess(trace.y[t] - tgt[t], target_set), 0.0) for t in range(n)])
    bad = np.flatnonzero(err > tol)
    settling = 0 if bad.size == 0 else int(bad[-1] + 1)
    if settling >= n and n:
        settling = None
    violations = 0
    worst = -np.inf
    if Z is not None and n:
        xu = np.hstack([trace.x[:n], trace.u])
        slack = xu @ Z.F.T - Z.g
        worst = float(np.max(slack))
        violations = int(np.sum(np.any(slack > 1e-9, axis=1)))
    return {
        "settling_time": settling,
        "terminal_offset": float(err[-1]) if n else None,
        "violations": violations,
        "worst_constraint_slack": worst,
        "steps": n,
        "aborted_at": trace.aborted_at,
    }


# --------------------------------------------------------------------------- domain of attraction


@dataclass
class DoAMap:
    axes: list
    feasible: np.ndarray
    tag: str
    undecided: int = 0

    @property
    def count(self):
        return int(np.sum(self.feasible))

    def points(self):
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow([f"x{i}" for i in range(len(self.axes))] + ["feasible"])
        for p, f in zip(self.points(), self.feasible.ravel()):
            wr.writerow([repr(float(v)) for v in p] + [int(f)])
        return buf.getvalue()

    def subset_of(self, other: "DoAMap"):
        return bool(np.all(~self.feasible | other.feasible))


def grid_axes(ranges, step):
    """Axes covering each ``(lo, hi)`` range exactly with spacing ``step``."""
    axes = []
    for lo, hi in ranges:
        k = int(round((hi - lo) / step))
        if k < 0 or abs(lo + k * step - hi) > 1e-9 * max(1.0, abs(hi)):
            raise MPCTError(f"range ({lo}, {hi}) is not a multiple of step {step}")
        axes.append(lo + step * np.arange(k + 1))
    return axes


def _lp_feasible(prog):
    n = prog.n
    res = lp_min(np.zeros(n), prog.F.toarray(), prog.g, prog.Aeq.toarray(), prog.beq, bounds=[(None, None)] * n)
    return res.status == "optimal"


def doa_scan(spec: ControllerSpec, ranges, step, ref, settings: SolverSettings | None = None) -> DoAMap:
    """Feasibility of the controller's program on a state grid for reference ``ref``.

    Each point runs the ADMM feasibility mode; points the iteration budget
    leaves undecided are settled by an LP.
    """
    axes = grid_axes(ranges, step)
    if len(axes) != spec.sys.nx:
        raise MPCTError("grid dimension must equal nx")
    settings = settings or SolverSettings(max_iter=4000, eps_abs=1e-7, eps_rel=1e-7, polish=False, adaptive_rho=True)
    shape = tuple(a.size for a in axes)
    feas = np.zeros(shape, dtype=bool)
    workspace = None
    undecided = 0
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1) if all(shape) else np.zeros((0, len(axes)))
    for i, p in enumerate(pts):
        prog = spec.build(p, ref)
        if prog.cones:
            raise MPCTError("feasibility scan supports QP formulations")
        res, workspace = feasibility(prog, settings, workspace)
        if res.status == SOLVED and prog.violation(res.z) <= 1e-6:
            ok = True
        elif res.status == PRIMAL_INFEASIBLE:
            ok = False
        else:
            undecided += 1
            ok = _lp_feasible(prog)
        feas.flat[i] = ok
    return DoAMap(axes, feas, spec.tag, undecided)

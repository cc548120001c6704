"""Program builders for the tracking MPC family and their steady-state oracles.

Every builder returns a :class:`~mpct.program.StructuredProgram` over

    z = [aux..., x_0, u_0, ..., x_{N-1}, u_{N-1}, x_N, reference blocks...]

with ``x_0 = x_now`` (or a tube constraint) and the prediction model as
equalities.  Reference blocks sit at the end and are listed in
``structure.ref_idx``; the Hessian splits as ``H = H_B + U V'`` where ``H_B``
holds the stage blocks plus the stage cost's own contribution on the
reference block, and ``U V'`` the cross couplings and offset weights.
"""
from __future__ import annotations

import copy

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from mpct.errors import DimensionError, EmptySet, MPCTError, UnreachableReference
from mpct.model import LinearSystem, Polytope, Zonotope, steady_state_manifold
from mpct.program import QP, SOCP, Cone, StructuredProgram, Structure, lowrank_factors
from mpct.solver.reference import dense_reference_solve, ipm_qp
from mpct.solver.types import SOLVED

STAN = "STAN"
LIN_MPCT = "LIN_MPCT"
EQU_MPCT = "EQU_MPCT"
ROBUST_MPCT = "ROBUST_MPCT"
PERIODIC_MPCT = "PERIODIC_MPCT"
HMPC = "HMPC"
ECON_MPCT = "ECON_MPCT"
TAGS = (STAN, LIN_MPCT, EQU_MPCT, ROBUST_MPCT, PERIODIC_MPCT, HMPC, ECON_MPCT)

ORACLE_TOL = 1e-10


# --------------------------------------------------------------------------- assembly helpers


class _Layout:
    def __init__(self):
        self.slices = {}
        self.n = 0

    def add(self, name, size):
        self.slices[name] = (self.n, self.n + size)
        self.n += size
        return self.n - size

    def __getitem__(self, name):
        return self.slices[name][0]

    def idx(self, *names):
        return np.concatenate([np.arange(*self.slices[k]) for k in names]).astype(int)


class _Rows:
    """Accumulates constraint rows as COO triplets."""

    def __init__(self, n):
        self.n = n
        self.r, self.c, self.v = [], [], []
        self.rhs = []
        self.m = 0

    def add(self, terms, rhs):
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        k = rhs.size
        for col, M in terms:
            M = np.asarray(M, dtype=float).reshape(k, -1)
            rr, cc = np.nonzero(M)
            self.r.extend((rr + self.m).tolist())
            self.c.extend((cc + col).tolist())
            self.v.extend(M[rr, cc].tolist())
        self.rhs.append(rhs)
        self.m += k

    def build(self):
        A = sp.csr_matrix((self.v, (self.r, self.c)), shape=(self.m, self.n))
        b = np.concatenate(self.rhs) if self.rhs else np.zeros(0)
        return A, b


class _Cost:
    """Sum of weighted squares ``||L z - r||^2_W`` kept as ``0.5 z'Hz + q'z + c``."""

    def __init__(self, n):
        self.n = n
        self.H = np.zeros((n, n))
        self.H_stage = np.zeros((n, n))
        self.q = np.zeros(n)
        self.c = 0.0

    def add(self, terms, r, W, stage=False):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        k = W.shape[0]
        L = np.zeros((k, self.n))
        for col, M in terms:
            M = np.atleast_2d(np.asarray(M, dtype=float))
            L[:, col : col + M.shape[1]] += M
        r = np.broadcast_to(np.asarray(r, dtype=float), (k,))
        HL = 2.0 * L.T @ W @ L
        self.H += HL
        if stage:
            self.H_stage += HL
        self.q -= 2.0 * L.T @ (W @ r)
        self.c += float(r @ W @ r)

    def linear(self, col, coef):
        coef = np.atleast_1d(np.asarray(coef, dtype=float))
        self.q[col : col + coef.size] += coef


def _structure(cost: _Cost, ref_idx):
    R = np.asarray(ref_idx, dtype=int)
    n = cost.n
    S = np.setdiff1d(np.arange(n), R)
    H = 0.5 * (cost.H + cost.H.T)
    H_B = np.zeros((n, n))
    H_B[np.ix_(S, S)] = H[np.ix_(S, S)]
    Hs = 0.5 * (cost.H_stage + cost.H_stage.T)
    H_B[np.ix_(R, R)] = Hs[np.ix_(R, R)]
    H_LR = H - H_B
    U, V = lowrank_factors(H_LR, R)
    return sp.csr_matrix(H), Structure(sp.csr_matrix(H_B), U, V, R)


def _poly_rows(rows: _Rows, P: Polytope, cols, sizes, scale=1.0, with_eq=None):
    """Add ``P.F [z_cols] <= scale * P.g`` (and its equalities into ``with_eq``)."""
    if P.F.shape[0]:
        terms, off = [], 0
        for col, k in zip(cols, sizes):
            terms.append((col, P.F[:, off : off + k]))
            off += k
        rows.add(terms, scale * P.g)
    if with_eq is not None and P.Feq.shape[0]:
        terms, off = [], 0
        for col, k in zip(cols, sizes):
            terms.append((col, P.Feq[:, off : off + k]))
            off += k
        with_eq.add(terms, P.geq)


def _as_polytope(S):
    return S.set if hasattr(S, "set") and isinstance(S.set, Polytope) else S


def _check_state(sys, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (sys.nx,):
        raise DimensionError(f"state has shape {x.shape}, expected ({sys.nx},)")
    return x


def _prediction(sys: LinearSystem, lay: _Layout, N):
    """Layout for x_0..x_N, u_0..u_{N-1} plus the model equalities."""
    nx, nu = sys.nx, sys.nu
    for k in range(N):
        lay.add(f"x_{k}", nx)
        lay.add(f"u_{k}", nu)
    lay.add(f"x_{N}", nx)


def _model_rows(sys, lay, N, eq: _Rows):
    I = np.eye(sys.nx)
    for k in range(N):
        eq.add([(lay[f"x_{k+1}"], I), (lay[f"x_{k}"], -sys.A), (lay[f"u_{k}"], -sys.B)], np.zeros(sys.nx))


def _stage_rows(sys, lay, N, Z: Polytope, ineq: _Rows, eq: _Rows):
    for k in range(N):
        _poly_rows(ineq, Z, [lay[f"x_{k}"], lay[f"u_{k}"]], [sys.nx, sys.nu], with_eq=eq)


def _steady_rows(sys, cols, eq: _Rows):
    eq.add([(cols[0], np.eye(sys.nx) - sys.A), (cols[1], -sys.B)], np.zeros(sys.nx))


def _finish(kind, lay, cost, eq, ineq, cones, ref_names, meta):
    Aeq, beq = eq.build()
    F, g = ineq.build()
    if ref_names:
        H, structure = _structure(cost, lay.idx(*ref_names))
    else:
        H, structure = sp.csr_matrix(0.5 * (cost.H + cost.H.T)), None
    return StructuredProgram(kind, H, cost.q.copy(), cost.c, Aeq, beq, F, g, cones, structure,
                             dict(lay.slices), meta)


# --------------------------------------------------------------------------- oracles


def _steady_qp(sys: LinearSystem, Zs: Polytope, Hz, qz, extra_eq=None):
    """Minimize ``0.5 w'Hz w + qz'w`` over steady states ``w = (x, u)`` in ``Zs``."""
    A = Zs.Feq
    b = Zs.geq
    if extra_eq is not None:
        A = np.vstack([A, extra_eq[0]])
        b = np.concatenate([b, extra_eq[1]])
    w, _, _, status, _ = ipm_qp(Hz, qz, A, b, Zs.F, Zs.g, tol=ORACLE_TOL)
    return w, status


def steady_state_for_ref(sys: LinearSystem, Z: Polytope, yr, sigma=None):
    """Minimum-norm strictly admissible steady state with output ``yr``.

    Raises :class:`UnreachableReference` when ``yr`` is outside the reachable
    output set.
    """
    sigma = 0.99 if sigma is None else sigma
    yr = np.atleast_1d(np.asarray(yr, dtype=float))
    Zs = steady_state_manifold(sys, Z, sigma)
    n = sys.nx + sys.nu
    w, status = _steady_qp(sys, Zs, 2 * np.eye(n), np.zeros(n), (np.hstack([sys.C, sys.D]), yr))
    if status != SOLVED:
        raise UnreachableReference(f"y_r = {yr.tolist()} is not a reachable setpoint")
    return w[: sys.nx], w[sys.nx :]


def target_from_output(sys: LinearSystem, yr):
    """Unconstrained minimum-norm steady state ``(x_r, u_r)`` with output ``yr`` (may be inadmissible)."""
    yr = np.atleast_1d(np.asarray(yr, dtype=float))
    M = np.block([[sys.A - np.eye(sys.nx), sys.B], [sys.C, sys.D]])
    w = np.linalg.lstsq(M, np.concatenate([np.zeros(sys.nx), yr]), rcond=None)[0]
    return w[: sys.nx], w[sys.nx :]


def optimal_reachable_reference(sys: LinearSystem, Z: Polytope, sigma, yr, S=None, norm=False):
    """Closest reachable output ``argmin_{y in Y_s} V_O(y - yr)``.

    ``V_O`` is ``||.||^2_S`` or, with ``norm=True``, ``||S^{1/2} (.)||_2``.
    Returns ``(ya, xa, ua)``.
    """
    yr = np.atleast_1d(np.asarray(yr, dtype=float))
    ny = sys.ny
    S = np.eye(ny) if S is None else np.atleast_2d(np.asarray(S, dtype=float))
    Zs = steady_state_manifold(sys, Z, sigma)
    CD = np.hstack([sys.C, sys.D])
    n = sys.nx + sys.nu
    if not norm:
        # small ridge on (x, u) picks one steady state when several share the output
        Hz = 2 * CD.T @ S @ CD + 1e-12 * np.eye(n)
        w, status = _steady_qp(sys, Zs, Hz, -2 * CD.T @ S @ yr)
        if status != SOLVED:
            raise EmptySet("oracle QP failed")
    else:
        L = np.linalg.cholesky(S).T
        Gs = np.zeros((ny + 1, n + 1))
        Gs[:ny, :n] = L @ CD
        Gs[ny, n] = 1.0
        hs = np.concatenate([-L @ yr, [0.0]])
        prog = StructuredProgram(
            SOCP, sp.csr_matrix(1e-12 * np.eye(n + 1)), np.r_[np.zeros(n), 1.0], 0.0,
            np.hstack([Zs.Feq, np.zeros((Zs.Feq.shape[0], 1))]), Zs.geq,
            np.hstack([Zs.F, np.zeros((Zs.F.shape[0], 1))]), Zs.g, [Cone(sp.csr_matrix(Gs), hs)],
        )
        res = dense_reference_solve(prog, tol=ORACLE_TOL)
        if res.status != SOLVED:
            raise EmptySet("oracle SOCP failed")
        w = res.z[:n]
    return CD @ w, w[: sys.nx], w[sys.nx :]


def optimal_steady_state(sys: LinearSystem, Z: Polytope, sigma, xr, ur, T, S_u):
    """Steady state in ``Z_s`` minimizing ``||x - xr||^2_T + ||u - ur||^2_{S_u}``."""
    Zs = steady_state_manifold(sys, Z, sigma)
    W = np.block([[np.atleast_2d(T), np.zeros((sys.nx, sys.nu))], [np.zeros((sys.nu, sys.nx)), np.atleast_2d(S_u)]])
    wr = np.concatenate([np.atleast_1d(xr), np.atleast_1d(ur)])
    w, status = _steady_qp(sys, Zs, 2 * W, -2 * W @ wr)
    if status != SOLVED:
        raise EmptySet("oracle QP failed")
    return w[: sys.nx], w[sys.nx :]


def optimal_periodic_reference(sys: LinearSystem, Z: Polytope, sigma, tau, yr_traj, S=None):
    """Closest reachable ``tau``-periodic output trajectory in the ``V_p`` sense.

    Returns ``(ya, xa, ua)`` with shapes ``(tau, ny)``, ``(tau + 1, nx)``, ``(tau, nu)``.
    """
    nx, nu, ny = sys.nx, sys.nu, sys.ny
    Y = np.asarray(yr_traj, dtype=float).reshape(tau, ny)
    S = np.eye(ny) if S is None else np.atleast_2d(np.asarray(S, dtype=float))
    lay = _Layout()
    for k in range(tau):
        lay.add(f"xa_{k}", nx)
        lay.add(f"ua_{k}", nu)
    lay.add(f"xa_{tau}", nx)
    n = lay.n
    eq, ineq, cost = _Rows(n), _Rows(n), _Cost(n)
    Zsig = Z.scale(sigma)
    for k in range(tau):
        eq.add([(lay[f"xa_{k+1}"], np.eye(nx)), (lay[f"xa_{k}"], -sys.A), (lay[f"ua_{k}"], -sys.B)], np.zeros(nx))
        _poly_rows(ineq, Zsig, [lay[f"xa_{k}"], lay[f"ua_{k}"]], [nx, nu], with_eq=eq)
        cost.add([(lay[f"xa_{k}"], sys.C), (lay[f"ua_{k}"], sys.D)], Y[k], S)
    eq.add([(lay["xa_0"], np.eye(nx)), (lay[f"xa_{tau}"], -np.eye(nx))], np.zeros(nx))
    Aeq, beq = eq.build()
    F, g = ineq.build()
    H = cost.H + 1e-12 * np.eye(n)
    z, _, _, status, _ = ipm_qp(H, cost.q, Aeq.toarray(), beq, F.toarray(), g, tol=ORACLE_TOL)
    if status != SOLVED:
        raise EmptySet("no reachable periodic trajectory")
    xa = np.array([z[lay[f"xa_{k}"] : lay[f"xa_{k}"] + nx] for k in range(tau + 1)])
    ua = np.array([z[lay[f"ua_{k}"] : lay[f"ua_{k}"] + nu] for k in range(tau)])
    ya = xa[:tau] @ sys.C.T + ua @ sys.D.T
    return ya, xa, ua


@dataclass
class EconomicCost:
    """Convex quadratic economic cost ``(w - theta)' H_e (w - theta)`` over ``w = (x, u)``."""

    H_e: np.ndarray

    def __post_init__(self):
        self.H_e = np.atleast_2d(np.asarray(self.H_e, dtype=float))
        if np.min(np.linalg.eigvalsh(0.5 * (self.H_e + self.H_e.T))) < -1e-12:
            raise MPCTError("economic cost must be convex")

    def __call__(self, x, u, theta):
        w = np.concatenate([np.atleast_1d(x), np.atleast_1d(u)]) - np.asarray(theta, dtype=float)
        return float(w @ self.H_e @ w)

    def to_dict(self):
        return {"H_e": self.H_e.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["H_e"], dtype=float))


def economic_setpoint(sys: LinearSystem, Z: Polytope, sigma, elleco: EconomicCost, theta):
    """Optimal economic setpoint ``argmin_{(x,u) in Z_s} elleco(x, u, theta)``."""
    Zs = steady_state_manifold(sys, Z, sigma)
    theta = np.asarray(theta, dtype=float)
    w, status = _steady_qp(sys, Zs, 2 * elleco.H_e, -2 * elleco.H_e @ theta)
    if status != SOLVED:
        raise EmptySet("economic setpoint problem failed")
    return w[: sys.nx], w[sys.nx :]


# --------------------------------------------------------------------------- builders


def _tracking_skeleton(sys, design, lead=()):
    """Layout shared by the tracking builders: leading blocks then the prediction."""
    N = design.N
    lay = _Layout()
    for name, size in lead:
        lay.add(name, size)
    _prediction(sys, lay, N)
    return lay


def _stage_costs(cost, sys, design, lay, ref_terms_x, ref_terms_u, N, r_x=None, r_u=None):
    """Add ``||x_k - xref_k||^2_Q + ||u_k - uref_k||^2_R`` for k < N.

    ``ref_terms_x(k)`` lists (column, matrix) pairs forming the state
    reference at step k (subtracted); same for inputs.
    """
    for k in range(N):
        tx = [(lay[f"x_{k}"], np.eye(sys.nx))] + [(c, -M) for c, M in ref_terms_x(k)]
        tu = [(lay[f"u_{k}"], np.eye(sys.nu))] + [(c, -M) for c, M in ref_terms_u(k)]
        cost.add(tx, 0.0 if r_x is None else r_x, design.Q, stage=True)
        cost.add(tu, 0.0 if r_u is None else r_u, design.R, stage=True)


def build_stan_mpc(sys: LinearSystem, design, Z: Polytope, Xf: Polytope, x_now, yr, sigma=None):
    """Regulation MPC toward the steady state of ``yr`` with terminal set ``Xf``.

    ``Xf`` constrains ``x_N`` directly; it must be an admissible invariant set
    around the target.
    """
    x_now = _check_state(sys, x_now)
    sigma = design.sigma if sigma is None else sigma
    xr, ur = steady_state_for_ref(sys, Z, yr, sigma)
    N, nx, nu = design.N, sys.nx, sys.nu
    lay = _tracking_skeleton(sys, design)
    n = lay.n
    eq, ineq, cost = _Rows(n), _Rows(n), _Cost(n)
    eq.add([(lay["x_0"], np.eye(nx))], x_now)
    _model_rows(sys, lay, N, eq)
    _stage_rows(sys, lay, N, Z, ineq, eq)
    _poly_rows(ineq, _as_polytope(Xf), [lay[f"x_{N}"]], [nx], with_eq=eq)
    _stage_costs(cost, sys, design, lay, lambda k: [], lambda k: [], N, xr, ur)
    cost.add([(lay[f"x_{N}"], np.eye(nx))], xr, design.P)
    return _finish(QP, lay, cost, eq, ineq, [], (), {"tag": STAN, "N": N, "x_r": xr.tolist(), "u_r": ur.tolist()})


def _add_reference(lay, sys):
    lay.add("xa", sys.nx)
    lay.add("ua", sys.nu)


def build_lin_mpct(sys: LinearSystem, design, Z: Polytope, Xt, x_now, yr, sigma=None):
    """MPC for tracking with terminal invariant set for tracking ``Xt`` over ``(x, xa, ua)``.

    ``yr`` enters only the linear cost term.
    """
    x_now = _check_state(sys, x_now)
    yr = np.atleast_1d(np.asarray(yr, dtype=float))
    sigma = design.sigma if sigma is None else sigma
    N, nx, nu = design.N, sys.nx, sys.nu
    lay = _tracking_skeleton(sys, design)
    _add_reference(lay, sys)
    n = lay.n
    eq, ineq, cost = _Rows(n), _Rows(n), _Cost(n)
    eq.add([(lay["x_0"], np.eye(nx))], x_now)
    _lin_constraints(sys, lay, N, Z, Xt, sigma, eq, ineq)
    _lin_cost(cost, sys, design, lay, N, yr)
    return _finish(QP, lay, cost, eq, ineq, [], ("xa", "ua"), {"tag": LIN_MPCT, "N": N})


def _lin_constraints(sys, lay, N, Z, Xt, sigma, eq, ineq):
    nx, nu = sys.nx, sys.nu
    _model_rows(sys, lay, N, eq)
    _stage_rows(sys, lay, N, Z, ineq, eq)
    _poly_rows(ineq, Z.scale(sigma), [lay["xa"], lay["ua"]], [nx, nu])
    _steady_rows(sys, (lay["xa"], lay["ua"]), eq)
    Xt = _as_polytope(Xt)
    # Xt's own equalities restate the steady-state condition already imposed
    _poly_rows(ineq, Polytope(Xt.F, Xt.g), [lay[f"x_{N}"], lay["xa"], lay["ua"]], [nx, nx, nu])


def _lin_cost(cost, sys, design, lay, N, yr):
    nx, nu = sys.nx, sys.nu
    _stage_costs(cost, sys, design, lay, lambda k: [(lay["xa"], np.eye(nx))], lambda k: [(lay["ua"], np.eye(nu))], N)
    cost.add([(lay[f"x_{N}"], np.eye(nx)), (lay["xa"], -np.eye(nx))], 0.0, design.P)
    cost.add([(lay["xa"], sys.C), (lay["ua"], sys.D)], yr, design.S)


def build_equ_mpct(sys: LinearSystem, design, Z: Polytope, x_now, xr, ur, sigma=None):
    """MPC for tracking with terminal equality ``x_N = xa``."""
    x_now = _check_state(sys, x_now)
    xr = np.atleast_1d(np.asarray(xr, dtype=float))
    ur = np.atleast_1d(np.asarray(ur, dtype=float))
    sigma = design.sigma if sigma is None else sigma
    N, nx, nu = design.N, sys.nx, sys.nu
    lay = _tracking_skeleton(sys, design)
    _add_reference(lay, sys)
    n = lay.n
    eq, ineq, cost = _Rows(n), _Rows(n), _Cost(n)
    eq.add([(lay["x_0"], np.eye(nx))], x_now)
    _equ_constraints(sys, lay, N, Z, sigma, eq, ineq)
    _stage_costs(cost, sys, design, lay, lambda k: [(lay["xa"], np.eye(nx))], lambda k: [(lay["ua"], np.eye(nu))], N)
    cost.add([(lay["xa"], np.eye(nx))], xr, design.T)
    cost.add([(lay["ua"], np.eye(nu))], ur, design.S_u)
    return _finish(QP, lay, cost, eq, ineq, [], ("xa", "ua"), {"tag": EQU_MPCT, "N": N})


def _equ_constraints(sys, lay, N, Z, sigma, eq, ineq):
    nx, nu = sys.nx, sys.nu
    _model_rows(sys, lay, N, eq)
    _stage_rows(sys, lay, N, Z, ineq, eq)
    _poly_rows(ineq, Z.scale(sigma), [lay["xa"], lay["ua"]], [nx, nu])
    _steady_rows(sys, (lay["xa"], lay["ua"]), eq)
    eq.add([(lay[f"x_{N}"], np.eye(nx)), (lay["xa"], -np.eye(nx))], np.zeros(nx))


def build_robust_mpct(sys: LinearSystem, design, phi: Zonotope, Z_bar: Polytope, Xt_bar, x_now, yr, sigma=None):
    """Tube-based MPC for tracking: nominal problem on tightened sets, ``x_now - x_0`` in ``phi``.

    ``phi`` may be an :class:`~mpct.setops.RpiApproximation` or a zonotope.
    Tube membership uses box variables ``lam``: ``x_now - x_0 = c + G lam``.
    """
    x_now = _check_state(sys, x_now)
    phi = getattr(phi, "set", phi)
    yr = np.atleast_1d(np.asarray(yr, dtype=float))
    sigma = design.sigma if sigma is None else sigma
    N, nx = design.N, sys.nx
    p = phi.n_generators
    lay = _tracking_skeleton(sys, design, lead=(("lam", p),))
    _add_reference(lay, sys)
    n = lay.n
    eq, ineq, cost = _Rows(n), _Rows(n), _Cost(n)
    terms = [(lay["x_0"], np.eye(nx))]
    if p:
        terms.append((lay["lam"], phi.G))
        ineq.add([(lay["lam"], np.eye(p))], np.ones(p))
        ineq.add([(lay["lam"], -np.eye(p))], np.ones(p))
    eq.add(terms, x_now - phi.center)
    _lin_constraints(sys, lay, N, Z_bar, Xt_bar, sigma, eq, ineq)
    _lin_cost(cost, sys, design, lay, N, yr)
    return _finish(QP, lay, cost, eq, ineq, [], ("xa", "ua"), {"tag": ROBUST_MPCT, "N": N})


def build_periodic_mpct(sys: LinearSystem, design, Z: Polytope, tau, x_now, yr_traj, sigma=None):
    """MPC for tracking with a ``tau``-periodic artificial reference and terminal ``x_N = xa_N``.

    ``yr_traj`` holds ``y_r(t), ..., y_r(t + tau - 1)``; requires ``N <= tau``.
    """
    x_now = _check_state(sys, x_now)
    sigma = design.sigma if sigma is None else sigma
    N, nx, nu, ny = design.N, sys.nx, sys.nu, sys.ny
    tau = int(tau)
    if tau < 1:
        raise MPCTError("period must be >= 1")
    if N > tau:
        raise MPCTError(f"horizon N={N} exceeds the period tau={tau}")
    Y = np.asarray(yr_traj, dtype=float).reshape(tau, ny)
    lay = _tracking_skeleton(sys, design)
    for k in range(tau):
        lay.add(f"xa_{k}", nx)
        lay.add(f"ua_{k}", nu)
    lay.add(f"xa_{tau}", nx)
    ref_names = [f"xa_{k}" for k in range(tau + 1)] + [f"ua_{k}" for k in range(tau)]
    n = lay.n
    eq, ineq, cost = _Rows(n), _Rows(n), _Cost(n)
    eq.add([(lay["x_0"], np.eye(nx))], x_now)
    _model_rows(sys, lay, N, eq)
    _stage_rows(sys, lay, N, Z, ineq, eq)
    Zsig = Z.scale(sigma)
    for k in range(tau):
        eq.add([(lay[f"xa_{k+1}"], np.eye(nx)), (lay[f"xa_{k}"], -sys.A), (lay[f"ua_{k}"], -sys.B)], np.zeros(nx))
        _poly_rows(ineq, Zsig, [lay[f"xa_{k}"], lay[f"ua_{k}"]], [nx, nu], with_eq=eq)
    eq.add([(lay["xa_0"], np.eye(nx)), (lay[f"xa_{tau}"], -np.eye(nx))], np.zeros(nx))
    eq.add([(lay[f"x_{N}"], np.eye(nx)), (lay[f"xa_{N}"], -np.eye(nx))], np.zeros(nx))
    _stage_costs(cost, sys, design, lay, lambda k: [(lay[f"xa_{k}"], np.eye(nx))],
                 lambda k: [(lay[f"ua_{k}"], np.eye(nu))], N)
    for k in range(tau):
        cost.add([(lay[f"xa_{k}"], sys.C), (lay[f"ua_{k}"], sys.D)], Y[k], design.S)
    return _finish(QP, lay, cost, eq, ineq, [], ref_names, {"tag": PERIODIC_MPCT, "N": N, "tau": tau})


def harmonic_point(k, omega, xe, xs, xc):
    """Value ``xe + xs sin(omega k) + xc cos(omega k)`` of a harmonic signal."""
    return np.asarray(xe) + np.asarray(xs) * np.sin(omega * k) + np.asarray(xc) * np.cos(omega * k)


HARMONIC_BLOCKS = ("xe", "xs", "xc", "ue", "us", "uc")


def harmonic_equations(sys: LinearSystem, omega):
    """Matrix ``M`` with ``M v = 0`` iff ``v = (xe, xs, xc, ue, us, uc)`` is a harmonic trajectory.

    The trajectory ``x_k = xe + xs sin(omega k) + xc cos(omega k)`` (same for
    ``u``) then satisfies ``x_{k+1} = A x_k + B u_k`` for every ``k``.
    """
    nx, nu = sys.nx, sys.nu
    I, A, B = np.eye(nx), sys.A, sys.B
    c, s = np.cos(omega), np.sin(omega)
    Z, Zu = np.zeros((nx, nx)), np.zeros((nx, nu))
    return np.block([
        [I - A, Z, Z, -B, Zu, Zu],
        [Z, c * I - A, -s * I, Zu, -B, Zu],
        [Z, s * I, c * I - A, Zu, Zu, -B],
    ])


def build_hmpc(sys: LinearSystem, design, bounds, x_now, xr, ur, sigma=None):
    """Harmonic MPC for tracking (SOCP).

    ``bounds = (Cz, Dz, y_low, y_high)`` defines ``y_low <= Cz x + Dz u <= y_high``
    with ``y_low < 0 < y_high``.
    """
    x_now = _check_state(sys, x_now)
    Cz, Dz, ylo, yhi = bounds
    Cz = np.atleast_2d(np.asarray(Cz, dtype=float))
    Dz = np.atleast_2d(np.asarray(Dz, dtype=float))
    ylo = np.atleast_1d(np.asarray(ylo, dtype=float))
    yhi = np.atleast_1d(np.asarray(yhi, dtype=float))
    if not (np.all(ylo < 0) and np.all(yhi > 0)):
        raise MPCTError("HMPC needs y_low < 0 < y_high")
    sigma = design.sigma if sigma is None else sigma
    w = float(design.omega)
    if w <= 0:
        raise MPCTError("omega must be positive")
    xr = np.atleast_1d(np.asarray(xr, dtype=float))
    ur = np.atleast_1d(np.asarray(ur, dtype=float))
    N, nx, nu = design.N, sys.nx, sys.nu
    nz = Cz.shape[0]
    lay = _tracking_skeleton(sys, design)
    for name, size in (("xe", nx), ("xs", nx), ("xc", nx), ("ue", nu), ("us", nu), ("uc", nu)):
        lay.add(name, size)
    n = lay.n
    eq, ineq, cost = _Rows(n), _Rows(n), _Cost(n)
    I = np.eye(nx)
    eq.add([(lay["x_0"], I)], x_now)
    _model_rows(sys, lay, N, eq)
    for k in range(N):
        ineq.add([(lay[f"x_{k}"], Cz), (lay[f"u_{k}"], Dz)], yhi)
        ineq.add([(lay[f"x_{k}"], -Cz), (lay[f"u_{k}"], -Dz)], -ylo)
    eq.add([(lay[f"x_{N}"], I), (lay["xe"], -I), (lay["xs"], -np.sin(w * N) * I), (lay["xc"], -np.cos(w * N) * I)],
           np.zeros(nx))
    M = harmonic_equations(sys, w)
    cols = [lay[name] for name in HARMONIC_BLOCKS]
    sizes = [nx] * 3 + [nu] * 3
    offs = np.concatenate([[0], np.cumsum(sizes)])
    eq.add([(c, M[:, offs[j] : offs[j + 1]]) for j, c in enumerate(cols)], np.zeros(3 * nx))
    cones = []
    for i in range(nz):
        for sgn, bound in ((1.0, yhi[i]), (-1.0, ylo[i])):
            G = np.zeros((3, n))
            G[0, lay["xs"] : lay["xs"] + nx] = Cz[i]
            G[0, lay["us"] : lay["us"] + nu] = Dz[i]
            G[1, lay["xc"] : lay["xc"] + nx] = Cz[i]
            G[1, lay["uc"] : lay["uc"] + nu] = Dz[i]
            # upper: t = sigma*yhi - y_e ; lower: t = y_e - sigma*ylo
            G[2, lay["xe"] : lay["xe"] + nx] = -sgn * Cz[i]
            G[2, lay["ue"] : lay["ue"] + nu] = -sgn * Dz[i]
            cones.append(Cone(sp.csr_matrix(G), np.array([0.0, 0.0, sgn * sigma * bound])))
    _stage_costs(
        cost, sys, design, lay,
        lambda k: [(lay["xe"], I), (lay["xs"], np.sin(w * k) * I), (lay["xc"], np.cos(w * k) * I)],
        lambda k: [(lay["ue"], np.eye(nu)), (lay["us"], np.sin(w * k) * np.eye(nu)), (lay["uc"], np.cos(w * k) * np.eye(nu))],
        N,
    )
    cost.add([(lay["xe"], I)], xr, design.T)
    cost.add([(lay["ue"], np.eye(nu))], ur, design.S_u)
    cost.add([(lay["xs"], I)], 0.0, design.T_h)
    cost.add([(lay["xc"], I)], 0.0, design.T_h)
    cost.add([(lay["us"], np.eye(nu))], 0.0, design.S_h)
    cost.add([(lay["uc"], np.eye(nu))], 0.0, design.S_h)
    return _finish(SOCP, lay, cost, eq, ineq, cones, ("xe", "xs", "xc", "ue", "us", "uc"),
                   {"tag": HMPC, "N": N, "omega": w})


def build_econ_mpct(sys: LinearSystem, design, Z: Polytope, elleco: EconomicCost, theta, x_now,
                    setpoint=None, sigma=None):
    """Economic MPC for tracking (SOCP: QP plus one epigraph cone).

    ``setpoint = (x*, u*)`` defaults to :func:`economic_setpoint` for ``theta``.
    Offset ``gamma ||xa - x*|| + ||xa - x*||^2_T + ||ua - u*||^2_{S_u}``.
    """
    x_now = _check_state(sys, x_now)
    sigma = design.sigma if sigma is None else sigma
    theta = np.asarray(theta, dtype=float)
    if setpoint is None:
        setpoint = economic_setpoint(sys, Z, sigma, elleco, theta)
    xs, us = (np.atleast_1d(np.asarray(v, dtype=float)) for v in setpoint)
    N, nx, nu = design.N, sys.nx, sys.nu
    lay = _tracking_skeleton(sys, design)
    _add_reference(lay, sys)
    lay.add("e", 1)
    n = lay.n
    eq, ineq, cost = _Rows(n), _Rows(n), _Cost(n)
    eq.add([(lay["x_0"], np.eye(nx))], x_now)
    _equ_constraints(sys, lay, N, Z, sigma, eq, ineq)
    ws = np.concatenate([xs, us])
    Ix = np.vstack([np.eye(nx), np.zeros((nu, nx))])
    Iu = np.vstack([np.zeros((nx, nu)), np.eye(nu)])
    for k in range(N):
        terms = [(lay[f"x_{k}"], Ix), (lay[f"u_{k}"], Iu), (lay["xa"], -Ix), (lay["ua"], -Iu)]
        cost.add(terms, theta - ws, elleco.H_e, stage=True)
    cost.add([(lay["xa"], np.eye(nx))], xs, design.T)
    cost.add([(lay["ua"], np.eye(nu))], us, design.S_u)
    cost.linear(lay["e"], [design.gamma])
    G = np.zeros((nx + 1, n))
    G[:nx, lay["xa"] : lay["xa"] + nx] = np.eye(nx)
    G[nx, lay["e"]] = 1.0
    cones = [Cone(sp.csr_matrix(G), np.concatenate([-xs, [0.0]]))]
    meta = {"tag": ECON_MPCT, "N": N, "x_star": xs.tolist(), "u_star": us.tolist()}
    return _finish(SOCP, lay, cost, eq, ineq, cones, ("xa", "ua", "e"), meta)


# --------------------------------------------------------------------------- controllers

FIRST_INPUT = "first_input"
TUBE = "tube"


@dataclass
class ControllerSpec:
    """A formulation bound to its system, design and precomputed sets.

    ``law`` is ``"tube"`` for the robust controller
    (``u = K (x - x_0*) + u_0*``) and ``"first_input"`` otherwise.
    The meaning of a schedule value depends on ``tag``: an output setpoint
    for STAN/LIN/ROBUST, an output setpoint mapped to a steady-state target
    for EQU/HMPC, a periodic output window for PERIODIC and the economic
    parameter ``theta`` for ECON.
    """

    tag: str
    sys: LinearSystem
    design: object
    Z: Polytope
    sets: dict
    extras: dict
    law: str = FIRST_INPUT

    def __post_init__(self):
        if self.tag not in TAGS:
            raise MPCTError(f"unknown formulation tag {self.tag!r}")
        expected = TUBE if self.tag == ROBUST_MPCT else FIRST_INPUT
        if self.law != expected:
            raise MPCTError(f"{self.tag} uses the {expected!r} control law")
        self._cache = {}
        self._progs = {}

    # reference handling
    def reference(self, schedule, t):
        if self.tag == PERIODIC_MPCT:
            return schedule.window(t, self.extras["tau"])
        return schedule.at(t)

    def stan_terminal_set(self, yr):
        key = ("Xf", tuple(np.atleast_1d(yr).tolist()))
        if key not in self._cache:
            from mpct.setops import terminal_set_regulation

            xr, ur = steady_state_for_ref(self.sys, self.Z, yr, self.design.sigma)
            wr = np.concatenate([xr, ur])
            shifted = Polytope(self.Z.F, self.Z.g - self.Z.F @ wr)
            O = terminal_set_regulation(self.sys, self.design.K, shifted).set
            self._cache[key] = Polytope(O.F, O.g + O.F @ xr)
        return self._cache[key]

    def econ_setpoint(self, theta):
        key = ("econ", tuple(np.atleast_1d(theta).tolist()))
        if key not in self._cache:
            self._cache[key] = economic_setpoint(self.sys, self.Z, self.design.sigma, self.extras["elleco"], theta)
        return self._cache[key]

    def build(self, x_now, ref) -> StructuredProgram:
        """Program for state ``x_now`` and reference ``ref``.

        Only the equality right-hand side depends on ``x_now`` (affinely), so
        from the second request for a reference on, the program is rebuilt
        from a cached copy and that affine map.
        """
        x_now = _check_state(self.sys, x_now)
        key = ("prog", np.asarray(ref, dtype=float).tobytes())
        hit = self._progs.get(key)
        if hit is None:
            self._progs[key] = 1
            return self._build(x_now, ref)
        if hit == 1:
            hit = self._affine(ref)
            self._progs[key] = hit
        if hit is False:
            return self._build(x_now, ref)
        base, E = hit
        prog = copy.copy(base)
        prog.beq = base.beq + E @ x_now
        return prog

    def _affine(self, ref):
        nx = self.sys.nx
        base = self._build(np.zeros(nx), ref)
        E = np.zeros((base.beq.size, nx))
        for i in range(nx):
            p = self._build(np.eye(nx)[i], ref)
            same = (np.array_equal(p.q, base.q) and np.array_equal(p.g, base.g)
                    and all(np.array_equal(a.h, b.h) for a, b in zip(p.cones, base.cones)))
            if not same:
                return False
            E[:, i] = p.beq - base.beq
        return base, E

    def _build(self, x_now, ref) -> StructuredProgram:
        s, d = self.sys, self.design
        if self.tag == STAN:
            return build_stan_mpc(s, d, self.Z, self.stan_terminal_set(ref), x_now, ref)
        if self.tag == LIN_MPCT:
            return build_lin_mpct(s, d, self.Z, self.sets["Xt"], x_now, ref)
        if self.tag == EQU_MPCT:
            xr, ur = target_from_output(s, ref)
            return build_equ_mpct(s, d, self.Z, x_now, xr, ur)
        if self.tag == ROBUST_MPCT:
            return build_robust_mpct(s, d, self.sets["rpi"], self.sets["Z_bar"], self.sets["Xt_bar"], x_now, ref)
        if self.tag == PERIODIC_MPCT:
            return build_periodic_mpct(s, d, self.Z, self.extras["tau"], x_now, ref)
        if self.tag == HMPC:
            xr, ur = target_from_output(s, ref)
            return build_hmpc(s, d, self.extras["bounds"], x_now, xr, ur)
        return build_econ_mpct(s, d, self.Z, self.extras["elleco"], ref, x_now, setpoint=self.econ_setpoint(ref))

    def control(self, prog: StructuredProgram, z, x_now):
        u0 = prog.block(z, "u_0")
        if self.law == TUBE:
            return self.design.K @ (np.asarray(x_now) - prog.block(z, "x_0")) + u0
        return u0.copy()

    def artificial(self, prog: StructuredProgram, z):
        """Artificial reference output and its state/input pair (NaN for STAN)."""
        s = self.sys
        if self.tag == STAN:
            xr = np.array(prog.meta["x_r"])
            ur = np.array(prog.meta["u_r"])
        elif self.tag == PERIODIC_MPCT:
            xr, ur = prog.block(z, "xa_0"), prog.block(z, "ua_0")
        elif self.tag == HMPC:
            xr, ur = prog.block(z, "xe"), prog.block(z, "ue")
        else:
            xr, ur = prog.block(z, "xa"), prog.block(z, "ua")
        return s.C @ xr + s.D @ ur, xr, ur

    def to_dict(self):
        d = {"tag": self.tag, "sys": self.sys.to_dict(), "design": self.design.to_dict(), "Z": self.Z.to_dict()}
        if "tau" in self.extras:
            d["tau"] = self.extras["tau"]
        return d


def shift_solution(prog: StructuredProgram, z):
    """Warm start for the next step: stage blocks move one step forward, the last repeats.

    Periodic reference blocks rotate by one sample.
    """
    z = np.asarray(z, dtype=float)
    out = z.copy()
    lay = prog.var_layout
    N = prog.meta.get("N")
    if N is None:
        return out

    def put(dst, src):
        a, b = lay[dst]
        c, e = lay[src]
        out[a:b] = z[c:e]

    for k in range(N):
        if f"x_{k+1}" in lay:
            put(f"x_{k}", f"x_{k+1}")
        if k + 1 < N:
            put(f"u_{k}", f"u_{k+1}")
    tau = prog.meta.get("tau")
    if tau:
        for k in range(tau):
            put(f"xa_{k}", f"xa_{k+1}" if k + 1 <= tau else "xa_1")
            put(f"ua_{k}", f"ua_{(k + 1) % tau}")
        put(f"xa_{tau}", "xa_1")
    return out


def make_controller(tag, sys: LinearSystem, design, Z: Polytope, *, W: Zonotope | None = None, tau=None,
                    bounds=None, elleco: EconomicCost | None = None, eps_alpha=0.1) -> ControllerSpec:
    """Compute the sets a formulation needs and bundle them into a :class:`ControllerSpec`."""
    from mpct import setops

    design = design.complete(sys)
    sets, extras = {}, {}
    law = FIRST_INPUT
    if tag == LIN_MPCT:
        sets["Xt"] = setops.invariant_set_for_tracking(sys, design.K, Z, design.sigma)
    elif tag == ROBUST_MPCT:
        if W is None:
            raise MPCTError("robust controller needs a disturbance set W")
        rpi = setops.rpi_outer_approx(sys.A + sys.B @ design.K, W, eps_alpha=eps_alpha)
        Z_bar = setops.tighten(Z, rpi.set, design.K)
        sets.update(rpi=rpi, Z_bar=Z_bar, W=W,
                    Xt_bar=setops.invariant_set_for_tracking(sys, design.K_bar, Z_bar, design.sigma))
        law = TUBE
    elif tag == PERIODIC_MPCT:
        if tau is None:
            raise MPCTError("periodic controller needs tau")
        extras["tau"] = int(tau)
    elif tag == HMPC:
        if bounds is None:
            raise MPCTError("HMPC needs output bounds (Cz, Dz, y_low, y_high)")
        extras["bounds"] = bounds
    elif tag == ECON_MPCT:
        if elleco is None:
            raise MPCTError("economic controller needs an economic cost")
        extras["elleco"] = elleco
    elif tag not in TAGS:
        raise MPCTError(f"unknown formulation tag {tag!r}")
    return ControllerSpec(tag, sys, design, Z, sets, extras, law)

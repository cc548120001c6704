"""ADMM for the structured QP/SOCP programs.

Constraints are stacked as ``l <= A_c z <= u`` (equalities and inequalities)
followed by cone blocks ``A_c z + h in K``.  Rows are equilibrated, equality
rows get a stiffer penalty, and the linear system

    K = H + sigma I + A_s' diag(rho) A_s

is factored once.  When the program names its reference variables
(``structure.ref_idx``), ``K`` is split into a banded block-diagonal part
(stage variables, reference variables) plus an exact low-rank coupling, and
each iteration costs one banded solve plus a rank-r Woodbury correction.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve
import scipy.sparse.linalg as spla
from scipy.optimize import lsq_linear

from mpct.errors import SingularCapacitance
from mpct.program import StructuredProgram, lowrank_factors
from mpct.solver import backend
from mpct.solver.banded import BandedFactor, SemiBandedSolver
from mpct.solver.types import MAX_ITER, SOLVED, SolveResult, SolverSettings, status_name

BIG = 1e20
_RHO_MIN, _RHO_MAX = 1e-6, 1e4


def _assemble(prog: StructuredProgram):
    n = prog.n
    blocks = [prog.Aeq, prog.F] + [c.G for c in prog.cones]
    A = sp.vstack(blocks, format="csr") if blocks else sp.csr_matrix((0, n))
    n_eq, n_in = prog.Aeq.shape[0], prog.F.shape[0]
    m_lin = n_eq + n_in
    m = A.shape[0]
    l = np.full(m, -BIG)
    u = np.full(m, BIG)
    l[:n_eq] = prog.beq
    u[:n_eq] = prog.beq
    u[n_eq:m_lin] = prog.g
    h = np.zeros(m)
    starts, dims = [], []
    pos = m_lin
    for c in prog.cones:
        starts.append(pos)
        dims.append(c.size)
        h[pos : pos + c.size] = c.h
        pos += c.size
    return A, l, u, h, n_eq, m_lin, np.array(starts, dtype=np.int32), np.array(dims, dtype=np.int32)


def _row_scaling(A, m_lin, starts, dims):
    norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    D = np.ones(A.shape[0])
    nz = norms > 0
    D[:m_lin][nz[:m_lin]] = 1.0 / norms[:m_lin][nz[:m_lin]]
    for a, d in zip(starts, dims):
        mx = norms[a : a + d].max()
        D[a : a + d] = 1.0 / mx if mx > 0 else 1.0
    return D


def _full_csr(M):
    """CSR copy storing every entry (explicit zeros), so matvecs cost m*n."""
    Md = np.asarray(M.todense() if sp.issparse(M) else M, dtype=float)
    r, c = Md.shape
    indptr = np.arange(r + 1, dtype=np.int32) * c
    indices = np.tile(np.arange(c, dtype=np.int32), r)
    return sp.csr_matrix((Md.ravel(), indices, indptr), shape=Md.shape)


class AdmmWorkspace:
    """Scaled data and the factored linear system for one program shape.

    Vectors (``q``, ``beq``, ``g``, cone offsets) can be swapped with
    :meth:`update` without refactoring, which is what receding-horizon
    simulation relies on.
    """

    def __init__(self, prog: StructuredProgram, settings: SolverSettings | None = None):
        self.settings = settings or SolverSettings()
        self.n = prog.n
        A, l, u, h, n_eq, m_lin, starts, dims = _assemble(prog)
        self.m = A.shape[0]
        self.n_eq, self.m_lin = n_eq, m_lin
        self.cone_start, self.cone_dim = starts, dims
        self.D = _row_scaling(A, m_lin, starts, dims)
        self.Dinv = 1.0 / self.D
        self.A = sp.csr_matrix(sp.diags(self.D) @ A)
        self.H = sp.csr_matrix(prog.H)
        self.ref_idx = None if prog.structure is None else np.asarray(prog.structure.ref_idx, dtype=int)
        self._key = self._signature(prog)
        self.mode = self._pick_mode()
        if self.mode == "dense":
            self.A_k = _full_csr(self.A)
            self.H_k = _full_csr(self.H)
        else:
            self.A_k, self.H_k = self.A, self.H
        self.At_k = sp.csr_matrix(self.A_k.T)
        self.update(prog)
        self.rho = self.settings.rho
        self._factor(self.rho)

    @staticmethod
    def _signature(prog):
        mats = [prog.H, prog.Aeq, prog.F] + [c.G for c in prog.cones]
        parts = []
        for M in mats:
            M = sp.csr_matrix(M)
            M.sort_indices()
            parts.append((M.shape, M.indptr.tobytes(), M.indices.tobytes(), M.data.tobytes()))
        ref = None if prog.structure is None else tuple(np.asarray(prog.structure.ref_idx).tolist())
        return hash((tuple(parts), ref))

    def matches(self, prog, settings=None):
        same_settings = settings is None or settings == self.settings
        return same_settings and prog.n == self.n and self._signature(prog) == self._key

    def _pick_mode(self):
        ls = self.settings.linsys
        if ls == "dense":
            return "dense"
        if self.ref_idx is not None and self.ref_idx.size:
            return "semibanded"
        return "rcm"

    def _rho_vec(self, rho):
        r = np.full(self.m, float(rho))
        r[: self.n_eq] = rho * self.settings.rho_eq_scale
        return r

    def _factor(self, rho):
        s = self.settings
        self.rho_vec = self._rho_vec(rho)
        K = (self.H + s.sigma * sp.eye(self.n) + self.A.T @ sp.diags(self.rho_vec) @ self.A).tocsr()
        self.K = K
        if self.mode == "dense":
            fac = BandedFactor(K, dense=True)
            U = V = np.zeros((self.n, 0))
        elif self.mode == "semibanded":
            R = self.ref_idx
            S = np.setdiff1d(np.arange(self.n), R)
            mask_S = np.zeros(self.n, bool)
            mask_S[S] = True
            Kc = K.tocoo()
            keep = mask_S[Kc.row] == mask_S[Kc.col]
            K_B = sp.csr_matrix((Kc.data[keep], (Kc.row[keep], Kc.col[keep])), shape=K.shape)
            K_LR = sp.csr_matrix((Kc.data[~keep], (Kc.row[~keep], Kc.col[~keep])), shape=K.shape)
            fac = BandedFactor(K_B)
            U, V = lowrank_factors(K_LR, R)
        else:
            fac = BandedFactor.rcm(K)
            U = V = np.zeros((self.n, 0))
        self.linsys = SemiBandedSolver(fac, U, V)

    def update(self, prog: StructuredProgram):
        """Load the vector data of ``prog`` (same matrices as the workspace)."""
        _, l, u, h, *_ = _assemble(prog)
        self.q = np.ascontiguousarray(prog.q, dtype=float)
        self.c = prog.c
        self.l = np.ascontiguousarray(np.where(l <= -BIG, -BIG, l * self.D))
        self.u = np.ascontiguousarray(np.where(u >= BIG, BIG, u * self.D))
        self.h = np.ascontiguousarray(h * self.D)

    @property
    def ops_per_iteration(self):
        """Multiply-add count of one iteration (linear solve, matvecs, vector updates)."""
        mv = 2 * self.A_k.nnz
        return int(self.linsys.solve_ops + mv + 8 * self.m + 6 * self.n)

    def _residuals(self, z, v, y):
        Az = self.A @ z
        Hz = self.H @ z
        Aty = self.A.T @ y
        rp = np.max(np.abs((Az - v) * self.Dinv), initial=0.0)
        rd = np.max(np.abs(Hz + self.q + Aty), initial=0.0)
        sp_ = max(np.max(np.abs(Az * self.Dinv), initial=0.0), np.max(np.abs(v * self.Dinv), initial=0.0))
        sd = max(np.max(np.abs(Hz), initial=0.0), np.max(np.abs(Aty), initial=0.0), np.max(np.abs(self.q), initial=0.0))
        return rp, rd, sp_, sd

    def solve(self, warm_z=None, warm_y=None, max_iter=None) -> SolveResult:
        s = self.settings
        k = backend.kernels()
        z = np.zeros(self.n) if warm_z is None else np.array(warm_z, dtype=float)
        y = np.zeros(self.m) if warm_y is None else np.array(warm_y, dtype=float) * self.Dinv
        v = self.A @ z
        v[: self.m_lin] = np.clip(v[: self.m_lin], self.l[: self.m_lin], self.u[: self.m_lin])
        max_iter = s.max_iter if max_iter is None else max_iter
        total = 0
        chunk = s.adaptive_interval if s.adaptive_rho else max_iter
        status, rp, rd = 2, np.inf, np.inf
        while total < max_iter:
            ls = self.linsys
            status, it, rp, rd = k.admm_loop(
                self.H_k.data, self.H_k.indices, self.H_k.indptr,
                self.A_k.data, self.A_k.indices, self.A_k.indptr,
                self.At_k.data, self.At_k.indices, self.At_k.indptr,
                self.q, self.l, self.u, self.m_lin, self.cone_start, self.cone_dim, self.h,
                self.rho_vec, self.Dinv,
                ls.factor.cbt, ls.factor.perm, ls.W, ls.Vt, np.ascontiguousarray(ls.cap_lu), ls.cap_piv,
                s.sigma, s.alpha, s.eps_abs, s.eps_rel, s.eps_pinf, s.eps_dinf,
                min(chunk, max_iter - total), s.check_every, z, v, y,
            )
            total += it
            if status != 2 or not s.adaptive_rho:
                break
            rp_, rd_, sp_, sd_ = self._residuals(z, v, y)
            ratio = np.sqrt((rp_ / max(sp_, 1e-30)) / max(rd_ / max(sd_, 1e-30), 1e-30))
            new_rho = float(np.clip(self.rho * ratio, _RHO_MIN, _RHO_MAX))
            if new_rho > 5 * self.rho or new_rho < 0.2 * self.rho:
                # the scaled dual y stays valid; v and z carry over unchanged
                old = (self.rho, self.rho_vec, self.K, self.linsys)
                try:
                    self.rho = new_rho
                    self._factor(new_rho)
                except SingularCapacitance:
                    self.rho, self.rho_vec, self.K, self.linsys = old
        lam = y * self.D
        polished = False
        if status == 1 and s.polish and self.m_lin == self.m:
            out = self._polish(z, lam, rp, rd)
            if out is not None:
                z, lam, rp, rd = out
                polished = True
        obj = float(0.5 * z @ (self.H @ z) + self.q @ z + self.c)
        return SolveResult(
            z=z, lam=lam, status=status_name(status), iterations=int(total),
            r_prim=float(rp), r_dual=float(rd), objective=obj,
            info={"backend": backend.name(), "mode": self.mode, "rho": self.rho,
                  "ops_per_iteration": self.ops_per_iteration, "rank": self.linsys.rank,
                  "bandwidth": self.linsys.factor.p, "polished": polished},
        )

    def history(self, n_iter, warm_z=None, warm_y=None):
        """Per-iteration ``(iteration, r_prim, r_dual, objective)`` rows at fixed rho.

        Steps the same kernel one iteration at a time, so the iterates are the
        ones :meth:`solve` would produce without adaptive rho.
        """
        s = self.settings
        k = backend.kernels()
        ls = self.linsys
        z = np.zeros(self.n) if warm_z is None else np.array(warm_z, dtype=float)
        y = np.zeros(self.m) if warm_y is None else np.array(warm_y, dtype=float) * self.Dinv
        v = self.A @ z
        v[: self.m_lin] = np.clip(v[: self.m_lin], self.l[: self.m_lin], self.u[: self.m_lin])
        rows = np.zeros((n_iter, 4))
        for i in range(n_iter):
            k.admm_loop(
                self.H_k.data, self.H_k.indices, self.H_k.indptr,
                self.A_k.data, self.A_k.indices, self.A_k.indptr,
                self.At_k.data, self.At_k.indices, self.At_k.indptr,
                self.q, self.l, self.u, self.m_lin, self.cone_start, self.cone_dim, self.h,
                self.rho_vec, self.Dinv,
                ls.factor.cbt, ls.factor.perm, ls.W, ls.Vt, np.ascontiguousarray(ls.cap_lu), ls.cap_piv,
                s.sigma, s.alpha, 0.0, 0.0, 0.0, 0.0, 1, 1, z, v, y,
            )
            rp, rd, _, _ = self._residuals(z, v, y)
            rows[i] = (i + 1, rp, rd, 0.5 * z @ (self.H @ z) + self.q @ z + self.c)
        return rows

    def _unscaled_residuals(self, z, lam, l, u, A):
        Az = A @ z
        rp = float(np.max(np.maximum(Az - u, l - Az), initial=0.0))
        rd = float(np.max(np.abs(self.H @ z + self.q + A.T @ lam), initial=0.0))
        return rp, rd

    _DENSE_POLISH = 600

    def _polish_data(self):
        if not hasattr(self, "_pd"):
            A = sp.csr_matrix(sp.diags(self.Dinv) @ self.A)
            dense = self.n + self.m <= self._DENSE_POLISH
            self._pd = (A, A.toarray() if dense else None, self.H.toarray() if dense else None)
        return self._pd

    def _polish(self, z, lam, rp0, rd0):
        """Re-solve the equality-constrained QP on the active set read off the ADMM duals."""
        A, A_dense, H_dense = self._polish_data()
        l, u = self.l * self.Dinv, self.u * self.Dinv
        eq = np.zeros(self.m, bool)
        eq[: self.n_eq] = True
        lo = ~eq & (lam < -1e-12) & (l > -BIG / 10)
        up = ~eq & (lam > 1e-12) & (u < BIG / 10)
        act = np.flatnonzero(eq | lo | up)
        b = np.where(lo, l, u)[act]
        d = self.settings.polish_delta
        n, na = self.n, act.size
        rhs = np.concatenate([-self.q, b])
        if A_dense is not None:
            Aa = A_dense[act]
            K0 = np.zeros((n + na, n + na))
            K0[:n, :n] = H_dense
            K0[:n, n:] = Aa.T
            K0[n:, :n] = Aa
            K = K0.copy()
            K[np.arange(n), np.arange(n)] += d
            K[np.arange(n, n + na), np.arange(n, n + na)] -= d
            try:
                lu = lu_factor(K)
            except (ValueError, np.linalg.LinAlgError):
                return None
            solve = lambda r: lu_solve(lu, r)
        else:
            Aa = A[act]
            K = sp.bmat([[self.H + d * sp.eye(n), Aa.T], [Aa, -d * sp.eye(na)]], format="csc")
            K0 = sp.bmat([[self.H, Aa.T], [Aa, None]], format="csc")
            try:
                solve = spla.splu(K).solve
            except RuntimeError:
                return None
        sol = solve(rhs)
        for _ in range(5):
            sol = sol + solve(rhs - K0 @ sol)
        if not np.all(np.isfinite(sol)):
            return None
        zp = sol[:n]
        lam_p = np.zeros(self.m)
        lam_p[act] = sol[n:]
        # multipliers must keep their signs on inequality rows; with dependent
        # active rows they are not unique, so refit them under sign bounds
        if np.any(lam_p[lo] > 1e-9) or np.any(lam_p[up] < -1e-9):
            Aa_d = Aa if isinstance(Aa, np.ndarray) else Aa.toarray()
            lb = np.where(up[act], 0.0, -np.inf)
            ub = np.where(lo[act], 0.0, np.inf)
            fit = lsq_linear(Aa_d.T, -(self.H @ zp + self.q), bounds=(lb, ub), tol=1e-14, lsmr_tol="auto")
            lam_p = np.zeros(self.m)
            lam_p[act] = fit.x
        rp, rd = self._unscaled_residuals(zp, lam_p, l, u, A)
        rp_a, rd_a = self._unscaled_residuals(z, lam, l, u, A)
        if rp <= max(rp_a, 1e-12) + 1e-12 and rd <= max(rd_a, 1e-12) + 1e-12:
            return zp, lam_p, rp, rd
        return None


def admm_solve(prog: StructuredProgram, settings: SolverSettings | None = None,
               warm_z=None, warm_y=None, workspace: AdmmWorkspace | None = None):
    """Solve ``prog`` with ADMM; reuses ``workspace`` when its matrices match.

    Returns ``(result, workspace)``.
    """
    settings = settings or SolverSettings()
    if workspace is not None and workspace.matches(prog, settings):
        workspace.update(prog)
    else:
        workspace = AdmmWorkspace(prog, settings)
    return workspace.solve(warm_z, warm_y), workspace


def admm_qp(prog, settings=None, **kw) -> SolveResult:
    if prog.cones:
        raise ValueError("program has cone constraints; use admm_socp")
    return admm_solve(prog, settings, **kw)[0]


def admm_socp(prog, settings=None, **kw) -> SolveResult:
    return admm_solve(prog, settings, **kw)[0]


def feasibility(prog: StructuredProgram, settings: SolverSettings | None = None, workspace=None):
    """Feasibility test with the cost removed.

    Returns ``(status, workspace)`` where status is ``Solved`` (feasible),
    ``PrimalInfeasible`` or ``MaxIter`` (undecided).
    """
    probe = StructuredProgram(
        prog.kind, sp.csr_matrix((prog.n, prog.n)), np.zeros(prog.n), 0.0,
        prog.Aeq, prog.beq, prog.F, prog.g, prog.cones, prog.structure, prog.var_layout, prog.meta,
    )
    res, ws = admm_solve(probe, settings, workspace=workspace)
    return res, ws


def history_csv(rows):
    """CSV text for :meth:`AdmmWorkspace.history` rows."""
    lines = ["iteration,r_prim,r_dual,objective"]
    lines += [f"{int(r[0])},{r[1]!r},{r[2]!r},{r[3]!r}" for r in rows]
    return "\n".join(lines) + "\n"


def admm_qp_extended(prog: StructuredProgram, settings: SolverSettings | None = None,
                     warm_z=None, warm_y=None) -> SolveResult:
    """Three-block Gauss-Seidel ADMM: stage block, reference block, then slack.

    The stage block system ``K[S, S]`` is banded and the reference block system
    ``K[R, R]`` is small and dense, so no Woodbury correction is needed.  Fixed
    points satisfy the same optimality conditions as :func:`admm_qp`.
    """
    settings = settings or SolverSettings()
    if prog.structure is None:
        raise ValueError("extended ADMM needs the reference index set")
    ws = AdmmWorkspace(prog, SolverSettings(**{**settings.to_dict(), "linsys": "banded"}))
    s = ws.settings
    n, m = ws.n, ws.m
    R = ws.ref_idx
    S = np.setdiff1d(np.arange(n), R)
    A, H = ws.A, ws.H
    A_S, A_R = sp.csr_matrix(A[:, S]), sp.csr_matrix(A[:, R])
    At_S, At_R = sp.csr_matrix(A_S.T), sp.csr_matrix(A_R.T)
    H_SS, H_SR = sp.csr_matrix(H[S][:, S]), sp.csr_matrix(H[S][:, R])
    H_RS, H_RR = sp.csr_matrix(H[R][:, S]), H[R][:, R].toarray()
    q_S, q_R = ws.q[S], ws.q[R]
    l, u, h = ws.l, ws.u, ws.h
    from mpct.solver._purepy import _project

    def factor(rho_scalar):
        rho = ws._rho_vec(rho_scalar)
        fac_S = BandedFactor((H_SS + s.sigma * sp.eye(S.size) + At_S @ sp.diags(rho) @ A_S).tocsr())
        cho_R = cho_factor(H_RR + s.sigma * np.eye(R.size) + (At_R @ sp.diags(rho) @ A_R).toarray())
        return rho, fac_S, cho_R

    rho_s = s.rho
    rho, fac_S, cho_R = factor(rho_s)
    z = np.zeros(n) if warm_z is None else np.array(warm_z, dtype=float)
    y = np.zeros(m) if warm_y is None else np.array(warm_y, dtype=float) * ws.Dinv
    zS, zR = z[S].copy(), z[R].copy()
    v = A @ z
    status, rp, rd = 2, np.inf, np.inf
    it = 0
    while it < s.max_iter:
        it += 1
        rhs = s.sigma * zS - q_S - H_SR @ zR - At_S @ (y + rho * (A_R @ zR - v))
        zS = fac_S.solve(rhs)
        ASz = A_S @ zS
        rhs = s.sigma * zR - q_R - H_RS @ zS - At_R @ (y + rho * (ASz - v))
        zR = cho_solve(cho_R, rhs)
        Az = ASz + A_R @ zR
        w = Az + y / rho
        _project(w, l, u, ws.m_lin, ws.cone_start, ws.cone_dim, h)
        v = w
        y = y + rho * (Az - v)
        if it % s.check_every and not (s.adaptive_rho and it % s.adaptive_interval == 0):
            continue
        z[S], z[R] = zS, zR
        rp, rd, sp_, sd_ = ws._residuals(z, v, y)
        if rp <= s.eps_abs + s.eps_rel * sp_ and rd <= s.eps_abs + s.eps_rel * sd_:
            status = 1
            break
        if s.adaptive_rho and it % s.adaptive_interval == 0:
            ratio = np.sqrt((rp / max(sp_, 1e-30)) / max(rd / max(sd_, 1e-30), 1e-30))
            new = float(np.clip(rho_s * ratio, _RHO_MIN, _RHO_MAX))
            if new > 5 * rho_s or new < 0.2 * rho_s:
                try:
                    rho, fac_S, cho_R = factor(new)
                    rho_s = new
                except np.linalg.LinAlgError:
                    pass
    z[S], z[R] = zS, zR
    lam = y * ws.D
    polished = False
    if status == 1 and s.polish and ws.m_lin == m:
        out = ws._polish(z, lam, rp, rd)
        if out is not None:
            z, lam, rp, rd = out
            polished = True
    obj = float(0.5 * z @ (H @ z) + ws.q @ z + ws.c)
    return SolveResult(z=z, lam=lam, status=SOLVED if status == 1 else MAX_ITER, iterations=it,
                       r_prim=float(rp), r_dual=float(rd), objective=obj,
                       info={"backend": "python", "mode": "extended", "rho": rho_s, "polished": polished})

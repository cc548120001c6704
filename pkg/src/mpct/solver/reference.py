"""Dense reference solvers used as independent oracles for ADMM.

QPs go through a dense Mehrotra predictor-corrector interior-point method;
programs with cones are handed to CVXOPT's cone QP solver.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from mpct.program import StructuredProgram
from mpct.solver.types import MAX_ITER, PRIMAL_INFEASIBLE, SOLVED, SolveResult


def independent_rows(A, b, tol=1e-10):
    """Drop linearly dependent rows of ``A x = b``; raise if they are inconsistent."""
    if A.shape[0] == 0:
        return A, b, True
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * max(d.max(), 1.0)))
    keep = np.sort(piv[:rank])
    A2, b2 = A[keep], b[keep]
    x = np.linalg.lstsq(A2, b2, rcond=None)[0]
    consistent = np.max(np.abs(A @ x - b)) <= 1e-8 * (1 + np.max(np.abs(b)))
    return A2, b2, consistent


def ipm_qp(H, q, A=None, b=None, G=None, h=None, tol=1e-10, max_iter=200):
    """Dense primal-dual interior point for ``min 0.5x'Hx + q'x, Ax = b, Gx <= h``.

    Returns ``(x, y, z, status, iterations)``.
    """
    n = q.size
    H = np.asarray(H, dtype=float)
    A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    A, b, consistent = independent_rows(A, b)
    if not consistent:
        return np.zeros(n), np.zeros(A.shape[0]), np.zeros(G.shape[0]), PRIMAL_INFEASIBLE, 0
    me, mi = A.shape[0], G.shape[0]
    x = np.zeros(n)
    y = np.zeros(me)
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(mi)
    scale = 1.0 + max(np.abs(q).max(initial=0), np.abs(b).max(initial=0), np.abs(h).max(initial=0))

    def step_len(v, dv):
        neg = dv < 0
        return min(1.0, np.min(-v[neg] / dv[neg])) if np.any(neg) else 1.0

    best = (np.inf, None)
    for it in range(1, max_iter + 1):
        rd = H @ x + q + A.T @ y + G.T @ z
        rp = A @ x - b
        ri = G @ x + s - h
        mu = s @ z / mi if mi else 0.0
        res = max(np.abs(rd).max(initial=0), np.abs(rp).max(initial=0), np.abs(ri).max(initial=0))
        if res <= tol * scale and mu <= tol:
            return x, y, z, SOLVED, it
        merit = max(res / scale, mu)
        if merit < best[0]:
            best = (merit, (x, y, z, it))
        # near the optimum z/s becomes extreme and the Newton steps lose accuracy;
        # stop once the merit has clearly turned around
        if mi and (mu > 1e14 * scale or merit > 1e3 * best[0]):
            break
        Wd = z / s
        Kx = H + G.T @ (Wd[:, None] * G)
        KKT = np.block([[Kx, A.T], [A, np.zeros((me, me))]])
        KKT[:n, :n] += 1e-13 * np.eye(n)
        try:
            lu = sla.lu_factor(KKT)
        except (ValueError, np.linalg.LinAlgError):
            break

        def direction(rc):
            rhs = np.concatenate([-rd - G.T @ ((z * ri - rc) / s), -rp])
            sol = sla.lu_solve(lu, rhs)
            dx, dy = sol[:n], sol[n:]
            ds = -ri - G @ dx
            dz = (-rc - z * ds) / s
            return dx, dy, ds, dz

        dx, dy, ds, dz = direction(s * z)
        if mi:
            a_aff = min(step_len(s, ds), step_len(z, dz))
            mu_aff = (s + a_aff * ds) @ (z + a_aff * dz) / mi
            sig = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dy, ds, dz = direction(s * z + ds * dz - sig * mu)
            a = 0.99 * min(step_len(s, ds), step_len(z, dz))
            a = min(a, 1.0)
        else:
            a = 1.0
        x, y, s, z = x + a * dx, y + a * dy, s + a * ds, z + a * dz
    if best[0] <= 1e2 * tol:
        x, y, z, it = best[1]
        return x, y, z, SOLVED, it
    rp_max = max(np.abs(A @ x - b).max(initial=0), np.max(G @ x - h, initial=0))
    status = PRIMAL_INFEASIBLE if rp_max > 1e-6 * scale else MAX_ITER
    return x, y, z, status, max_iter


def _cvxopt_socp(prog: StructuredProgram, tol):
    import cvxopt
    from cvxopt import solvers

    n = prog.n
    Aeq, beq, consistent = independent_rows(prog.Aeq.toarray(), prog.beq)
    if not consistent:
        return None, PRIMAL_INFEASIBLE, 0
    G_rows = [prog.F.toarray()]
    h_rows = [prog.g]
    for c in prog.cones:
        Gc = c.G.toarray()
        # CVXOPT: h - Gx in {t >= ||s||} with t first; ours is Gz + h = (s, t)
        G_rows.append(-np.vstack([Gc[-1:], Gc[:-1]]))
        h_rows.append(np.concatenate([c.h[-1:], c.h[:-1]]))
    G = np.vstack(G_rows)
    h = np.concatenate(h_rows)
    dims = {"l": prog.F.shape[0], "q": [c.size for c in prog.cones], "s": []}
    m = lambda M: cvxopt.matrix(np.asarray(M, dtype=float))
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": 200}
    sol = solvers.coneqp(
        m(prog.H.toarray()), m(prog.q.reshape(-1, 1)), m(G), m(h.reshape(-1, 1)), dims,
        m(Aeq) if Aeq.shape[0] else None, m(beq.reshape(-1, 1)) if Aeq.shape[0] else None, options=opts,
    )
    x = np.array(sol["x"]).ravel() if sol["x"] is not None else np.zeros(n)
    st = sol["status"]
    if st == "optimal":
        return x, SOLVED, sol["iterations"]
    if st == "primal infeasible":
        return x, PRIMAL_INFEASIBLE, sol["iterations"]
    return x, MAX_ITER, sol["iterations"]


def dense_reference_solve(prog: StructuredProgram, tol=1e-10) -> SolveResult:
    """Solve ``prog`` with a dense interior-point method (no structure exploited)."""
    if prog.cones:
        x, status, it = _cvxopt_socp(prog, tol)
        lam = np.zeros(0)
    else:
        x, y, zz, status, it = ipm_qp(prog.H.toarray(), prog.q, prog.Aeq.toarray(), prog.beq,
                                      prog.F.toarray(), prog.g, tol=tol)
        lam = np.concatenate([y, zz])
    x = np.zeros(prog.n) if x is None else x
    viol = prog.violation(x)
    return SolveResult(z=x, lam=lam, status=status, iterations=it, r_prim=viol, r_dual=float("nan"),
                       objective=prog.objective(x), info={"backend": "dense-ipm"})

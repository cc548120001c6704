"""Pure-Python/NumPy twin of the compiled kernels in ``_kernels.pyx``."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve_banded, solve_triangular

BIG = 1e19


def band_solve(cbt, b):
    """Solve (L L') x = b, ``cbt[j, i] = L[j + i, j]`` (row-major band storage)."""
    return cho_solve_banded((np.ascontiguousarray(cbt.T), True), np.asarray(b, dtype=float))


def _lu_solve(lu, piv, b):
    b = b.copy()
    for i, k in enumerate(piv):
        if k != i:
            b[i], b[k] = b[k], b[i]
    b = solve_triangular(lu, b, lower=True, unit_diagonal=True)
    return solve_triangular(lu, b, lower=False)


def _project(w, l, u, m_lin, cone_start, cone_dim, h):
    w[:m_lin] = np.minimum(np.maximum(w[:m_lin], l[:m_lin]), u[:m_lin])
    for a, d in zip(cone_start, cone_dim):
        s = w[a : a + d - 1] + h[a : a + d - 1]
        t = w[a + d - 1] + h[a + d - 1]
        ns = np.linalg.norm(s)
        if ns <= t:
            continue
        if ns <= -t:
            w[a : a + d] = -h[a : a + d]
            continue
        scale = 0.5 * (t + ns)
        w[a : a + d - 1] = scale * s / ns - h[a : a + d - 1]
        w[a + d - 1] = scale - h[a + d - 1]


def admm_loop(H_data, H_ind, H_ptr, A_data, A_ind, A_ptr, At_data, At_ind, At_ptr,
              q, l, u, m_lin, cone_start, cone_dim, h, rho, Dinv,
              cbt, perm, W, Vt, cap_lu, cap_piv,
              sigma, alpha, eps_abs, eps_rel, eps_pinf, eps_dinf, max_iter, check_every,
              z, v, y):
    n, m = z.size, v.size
    H = sp.csr_matrix((H_data, H_ind, H_ptr), shape=(n, n))
    A = sp.csr_matrix((A_data, A_ind, A_ptr), shape=(m, n))
    At = sp.csr_matrix((At_data, At_ind, At_ptr), shape=(n, m))
    r = W.shape[1]
    identity = np.array_equal(perm, np.arange(n))
    D = 1.0 / Dinv
    nq = np.max(np.abs(q), initial=0.0)
    cbt_T = (np.ascontiguousarray(cbt.T), True)

    def lin_solve(rhs):
        if identity:
            x = cho_solve_banded(cbt_T, rhs)
        else:
            x = np.empty(n)
            x[perm] = cho_solve_banded(cbt_T, rhs[perm])
        if r:
            x = x - W @ _lu_solve(cap_lu, cap_piv, Vt @ x)
        return x

    status, r_p, r_d = 2, np.inf, np.inf
    it = 0
    while it < max_iter:
        it += 1
        z_prev = z.copy()
        y_prev = y.copy()
        rhs = sigma * z - q + At @ (rho * v - y)
        zt = lin_solve(rhs)
        vt = A @ zt
        z[:] = alpha * zt + (1.0 - alpha) * z
        vt = alpha * vt + (1.0 - alpha) * v
        w = vt + y / rho
        _project(w, l, u, m_lin, cone_start, cone_dim, h)
        y[:] = y + rho * (vt - w)
        v[:] = w
        if it % check_every != 0 and it != max_iter:
            continue
        Az = A @ z
        Hz = H @ z
        Aty = At @ y
        r_p = np.max(np.abs((Az - v) * Dinv), initial=0.0)
        r_d = np.max(np.abs(Hz + q + Aty), initial=0.0)
        e_p = eps_abs + eps_rel * max(np.max(np.abs(Az * Dinv), initial=0.0), np.max(np.abs(v * Dinv), initial=0.0))
        e_d = eps_abs + eps_rel * max(np.max(np.abs(Hz), initial=0.0), np.max(np.abs(Aty), initial=0.0), nq)
        if r_p <= e_p and r_d <= e_d:
            status = 1
            break
        dy = y - y_prev
        ndy = np.max(np.abs(dy * D), initial=0.0)
        if ndy > 1e-30 and np.max(np.abs(At @ dy), initial=0.0) <= eps_pinf * ndy:
            ok = True
            supp = 0.0
            for i in range(m_lin):
                val = dy[i]
                if val > 0:
                    if u[i] * Dinv[i] >= BIG:
                        ok = ok and not (val * D[i] > eps_pinf * ndy)
                    else:
                        supp += u[i] * val
                elif val < 0:
                    if l[i] * Dinv[i] <= -BIG:
                        ok = ok and not (-val * D[i] > eps_pinf * ndy)
                    else:
                        supp += l[i] * val
            for a, d in zip(cone_start, cone_dim):
                ns = np.linalg.norm(dy[a : a + d - 1])
                if ns > -dy[a + d - 1] + eps_pinf * ndy * Dinv[a]:
                    ok = False
                supp -= dy[a : a + d] @ h[a : a + d]
            if ok and supp < -eps_pinf * ndy:
                status = 3
                break
        dz = z - z_prev
        ndz = np.max(np.abs(dz), initial=0.0)
        if ndz > 1e-30 and q @ dz < -eps_dinf * ndz and np.max(np.abs(H @ dz), initial=0.0) <= eps_dinf * ndz:
            Adz = A @ dz
            val = Adz[:m_lin] * Dinv[:m_lin]
            fin_u = u[:m_lin] * Dinv[:m_lin] < BIG
            fin_l = l[:m_lin] * Dinv[:m_lin] > -BIG
            ok = not np.any(fin_u & (val > eps_dinf * ndz)) and not np.any(fin_l & (val < -eps_dinf * ndz))
            for a, d in zip(cone_start, cone_dim):
                if np.linalg.norm(Adz[a : a + d - 1]) > Adz[a + d - 1] + eps_dinf * ndz * D[a]:
                    ok = False
            if ok:
                status = 4
                break
    return status, it, r_p, r_d

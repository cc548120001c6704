# Compiled ADMM inner loop and banded triangular solves.
# Mirrors mpct.solver._purepy operation for operation.
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

DEF BIG = 1e19


cdef inline void _band_solve(const double[:, ::1] cbt, double[::1] x) noexcept nogil:
    # cbt[j, i] = L[j + i, j]; solves L L' x = b in place
    cdef Py_ssize_t n = cbt.shape[0]
    cdef Py_ssize_t p = cbt.shape[1] - 1
    cdef Py_ssize_t i, j, kmax
    cdef double xj, s
    for j in range(n):
        x[j] = x[j] / cbt[j, 0]
        xj = x[j]
        kmax = p if p < n - 1 - j else n - 1 - j
        for i in range(1, kmax + 1):
            x[j + i] -= cbt[j, i] * xj
    for j in range(n - 1, -1, -1):
        s = x[j]
        kmax = p if p < n - 1 - j else n - 1 - j
        for i in range(1, kmax + 1):
            s -= cbt[j, i] * x[j + i]
        x[j] = s / cbt[j, 0]


def band_solve(double[:, ::1] cbt, b):
    """Solve (L L') x = b for a banded Cholesky factor in row-major band storage."""
    x = np.array(b, dtype=np.float64, copy=True)
    cdef double[::1] xv = x
    with nogil:
        _band_solve(cbt, xv)
    return x


cdef inline void _csr_mv(const double[::1] data, const int[::1] ind, const int[::1] ptr,
                         const double[::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(out.shape[0]):
        s = 0.0
        for k in range(ptr[i], ptr[i + 1]):
            s += data[k] * x[ind[k]]
        out[i] = s


cdef inline void _lu_solve(const double[:, ::1] lu, const int[::1] piv, double[::1] b) noexcept nogil:
    cdef Py_ssize_t r = lu.shape[0]
    cdef Py_ssize_t i, k
    cdef double t
    for i in range(r):
        k = piv[i]
        if k != i:
            t = b[i]
            b[i] = b[k]
            b[k] = t
    for i in range(r):
        t = b[i]
        for k in range(i):
            t -= lu[i, k] * b[k]
        b[i] = t
    for i in range(r - 1, -1, -1):
        t = b[i]
        for k in range(i + 1, r):
            t -= lu[i, k] * b[k]
        b[i] = t / lu[i, i]


cdef void _lin_solve(const double[:, ::1] cbt, const int[::1] perm,
                     const double[:, ::1] W, const double[:, ::1] Vt,
                     const double[:, ::1] cap_lu, const int[::1] cap_piv,
                     double[::1] rhs, double[::1] work, double[::1] t) noexcept nogil:
    cdef Py_ssize_t n = rhs.shape[0]
    cdef Py_ssize_t r = W.shape[1]
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(n):
        work[i] = rhs[perm[i]]
    _band_solve(cbt, work)
    for i in range(n):
        rhs[perm[i]] = work[i]
    if r == 0:
        return
    for k in range(r):
        s = 0.0
        for i in range(n):
            s += Vt[k, i] * rhs[i]
        t[k] = s
    _lu_solve(cap_lu, cap_piv, t)
    for i in range(n):
        s = 0.0
        for k in range(r):
            s += W[i, k] * t[k]
        rhs[i] -= s


cdef inline void _project(double[::1] w, const double[::1] l, const double[::1] u,
                          Py_ssize_t m_lin, const int[::1] cone_start, const int[::1] cone_dim,
                          const double[::1] h) noexcept nogil:
    cdef Py_ssize_t i, j, a, d
    cdef double ns, t, scale
    for i in range(m_lin):
        if w[i] < l[i]:
            w[i] = l[i]
        elif w[i] > u[i]:
            w[i] = u[i]
    for j in range(cone_start.shape[0]):
        a = cone_start[j]
        d = cone_dim[j]
        ns = 0.0
        for i in range(a, a + d - 1):
            ns += (w[i] + h[i]) * (w[i] + h[i])
        ns = sqrt(ns)
        t = w[a + d - 1] + h[a + d - 1]
        if ns <= t:
            continue
        if ns <= -t:
            for i in range(a, a + d):
                w[i] = -h[i]
            continue
        scale = 0.5 * (t + ns)
        for i in range(a, a + d - 1):
            w[i] = scale * (w[i] + h[i]) / ns - h[i]
        w[a + d - 1] = scale - h[a + d - 1]


def admm_loop(H_data, H_ind, H_ptr, A_data, A_ind, A_ptr, At_data, At_ind, At_ptr,
              double[::1] q, double[::1] l, double[::1] u, Py_ssize_t m_lin,
              int[::1] cone_start, int[::1] cone_dim, double[::1] h,
              double[::1] rho, double[::1] Dinv,
              double[:, ::1] cbt, int[::1] perm, double[:, ::1] W, double[:, ::1] Vt,
              double[:, ::1] cap_lu, int[::1] cap_piv,
              double sigma, double alpha, double eps_abs, double eps_rel,
              double eps_pinf, double eps_dinf, Py_ssize_t max_iter, Py_ssize_t check_every,
              double[::1] z, double[::1] v, double[::1] y):
    """Run OSQP-style ADMM iterations in place; returns (status, iters, r_prim, r_dual).

    status: 1 solved, 2 iteration cap, 3 primal infeasible, 4 dual infeasible.
    """
    cdef double[::1] Hd = np.ascontiguousarray(H_data, dtype=np.float64)
    cdef int[::1] Hi = np.ascontiguousarray(H_ind, dtype=np.int32)
    cdef int[::1] Hp = np.ascontiguousarray(H_ptr, dtype=np.int32)
    cdef double[::1] Ad = np.ascontiguousarray(A_data, dtype=np.float64)
    cdef int[::1] Ai = np.ascontiguousarray(A_ind, dtype=np.int32)
    cdef int[::1] Ap = np.ascontiguousarray(A_ptr, dtype=np.int32)
    cdef double[::1] Atd = np.ascontiguousarray(At_data, dtype=np.float64)
    cdef int[::1] Ati = np.ascontiguousarray(At_ind, dtype=np.int32)
    cdef int[::1] Atp = np.ascontiguousarray(At_ptr, dtype=np.int32)
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t r = W.shape[1]
    cdef double[::1] rhs = np.zeros(n)
    cdef double[::1] work = np.zeros(n)
    cdef double[::1] tvec = np.zeros(max(r, 1))
    cdef double[::1] tmp_m = np.zeros(m)
    cdef double[::1] vt = np.zeros(m)
    cdef double[::1] w = np.zeros(m)
    cdef double[::1] z_prev = np.zeros(n)
    cdef double[::1] y_prev = np.zeros(m)
    cdef double[::1] Hz = np.zeros(n)
    cdef double[::1] Aty = np.zeros(n)
    cdef double[::1] Az = np.zeros(m)
    cdef Py_ssize_t it, i, j, a, d
    cdef int status = 2
    cdef double r_p = np.inf, r_d = np.inf
    cdef double nAz, nv, nHz, nAty, nq, e_p, e_d, val, ndy, ndz, supp, ns, tt
    cdef bint ok
    it = 0
    with nogil:
        nq = 0.0
        for i in range(n):
            if fabs(q[i]) > nq:
                nq = fabs(q[i])
        while it < max_iter:
            it += 1
            for i in range(n):
                z_prev[i] = z[i]
            for i in range(m):
                y_prev[i] = y[i]
                tmp_m[i] = rho[i] * v[i] - y[i]
            _csr_mv(Atd, Ati, Atp, tmp_m, rhs)
            for i in range(n):
                rhs[i] = sigma * z[i] - q[i] + rhs[i]
            _lin_solve(cbt, perm, W, Vt, cap_lu, cap_piv, rhs, work, tvec)
            _csr_mv(Ad, Ai, Ap, rhs, vt)
            for i in range(n):
                z[i] = alpha * rhs[i] + (1.0 - alpha) * z[i]
            for i in range(m):
                vt[i] = alpha * vt[i] + (1.0 - alpha) * v[i]
                w[i] = vt[i] + y[i] / rho[i]
            _project(w, l, u, m_lin, cone_start, cone_dim, h)
            for i in range(m):
                y[i] = y[i] + rho[i] * (vt[i] - w[i])
                v[i] = w[i]
            if it % check_every != 0 and it != max_iter:
                continue
            # convergence
            _csr_mv(Ad, Ai, Ap, z, Az)
            _csr_mv(Hd, Hi, Hp, z, Hz)
            _csr_mv(Atd, Ati, Atp, y, Aty)
            r_p = 0.0
            nAz = 0.0
            nv = 0.0
            for i in range(m):
                val = fabs((Az[i] - v[i]) * Dinv[i])
                if val > r_p:
                    r_p = val
                if fabs(Az[i] * Dinv[i]) > nAz:
                    nAz = fabs(Az[i] * Dinv[i])
                if fabs(v[i] * Dinv[i]) > nv:
                    nv = fabs(v[i] * Dinv[i])
            r_d = 0.0
            nHz = 0.0
            nAty = 0.0
            for i in range(n):
                val = fabs(Hz[i] + q[i] + Aty[i])
                if val > r_d:
                    r_d = val
                if fabs(Hz[i]) > nHz:
                    nHz = fabs(Hz[i])
                if fabs(Aty[i]) > nAty:
                    nAty = fabs(Aty[i])
            e_p = eps_abs + eps_rel * (nAz if nAz > nv else nv)
            e_d = eps_abs + eps_rel * max(nHz, max(nAty, nq))
            if r_p <= e_p and r_d <= e_d:
                status = 1
                break
            # primal infeasibility certificate from the dual increment
            ndy = 0.0
            for i in range(m):
                tmp_m[i] = y[i] - y_prev[i]
                if fabs(tmp_m[i] / Dinv[i]) > ndy:
                    ndy = fabs(tmp_m[i] / Dinv[i])
            if ndy > 1e-30:
                _csr_mv(Atd, Ati, Atp, tmp_m, work)
                ok = True
                for i in range(n):
                    if fabs(work[i]) > eps_pinf * ndy:
                        ok = False
                        break
                if ok:
                    supp = 0.0
                    for i in range(m_lin):
                        val = tmp_m[i]
                        if val > 0:
                            if u[i] * Dinv[i] >= BIG:
                                if val / Dinv[i] > eps_pinf * ndy:
                                    ok = False
                            else:
                                supp += u[i] * val
                        elif val < 0:
                            if l[i] * Dinv[i] <= -BIG:
                                if -val / Dinv[i] > eps_pinf * ndy:
                                    ok = False
                            else:
                                supp += l[i] * val
                    for j in range(cone_start.shape[0]):
                        a = cone_start[j]
                        d = cone_dim[j]
                        ns = 0.0
                        for i in range(a, a + d - 1):
                            ns += tmp_m[i] * tmp_m[i]
                        ns = sqrt(ns)
                        if ns > -tmp_m[a + d - 1] + eps_pinf * ndy * Dinv[a]:
                            ok = False
                        for i in range(a, a + d):
                            supp -= tmp_m[i] * h[i]
                    if ok and supp < -eps_pinf * ndy:
                        status = 3
                        break
            # dual infeasibility certificate from the primal increment
            ndz = 0.0
            for i in range(n):
                rhs[i] = z[i] - z_prev[i]
                if fabs(rhs[i]) > ndz:
                    ndz = fabs(rhs[i])
            if ndz > 1e-30:
                val = 0.0
                for i in range(n):
                    val += q[i] * rhs[i]
                if val < -eps_dinf * ndz:
                    _csr_mv(Hd, Hi, Hp, rhs, work)
                    ok = True
                    for i in range(n):
                        if fabs(work[i]) > eps_dinf * ndz:
                            ok = False
                            break
                    if ok:
                        _csr_mv(Ad, Ai, Ap, rhs, tmp_m)
                        for i in range(m_lin):
                            val = tmp_m[i] * Dinv[i]
                            if u[i] * Dinv[i] < BIG and val > eps_dinf * ndz:
                                ok = False
                            if l[i] * Dinv[i] > -BIG and val < -eps_dinf * ndz:
                                ok = False
                        for j in range(cone_start.shape[0]):
                            a = cone_start[j]
                            d = cone_dim[j]
                            ns = 0.0
                            for i in range(a, a + d - 1):
                                ns += tmp_m[i] * tmp_m[i]
                            if sqrt(ns) > tmp_m[a + d - 1] + eps_dinf * ndz / Dinv[a]:
                                ok = False
                        if ok:
                            status = 4
                            break
    return status, it, r_p, r_d

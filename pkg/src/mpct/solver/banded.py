"""Banded Cholesky factors and the Woodbury semi-banded solve."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cholesky_banded, lu_factor
from scipy.sparse.csgraph import reverse_cuthill_mckee

from mpct.errors import SingularCapacitance
from mpct.program import bandwidth
from mpct.solver import backend


def band_storage(M, p):
    """Lower band storage ``ab[i, j] = M[j + i, j]`` of a symmetric matrix."""
    M = sp.coo_matrix(M)
    n = M.shape[0]
    ab = np.zeros((p + 1, n))
    low = M.row >= M.col
    ab[M.row[low] - M.col[low], M.col[low]] += M.data[low]
    return ab


class BandedFactor:
    """Cholesky factor of an SPD matrix in band storage, optionally after a symmetric permutation.

    ``dense=True`` stores the full lower triangle (bandwidth n-1), which is the
    dense reference path used for scaling comparisons.
    """

    def __init__(self, M, perm=None, dense=False):
        M = sp.csr_matrix(M)
        n = M.shape[0]
        self.n = n
        if perm is None:
            perm = np.arange(n)
        self.perm = np.ascontiguousarray(perm, dtype=np.int32)
        Mp = M[self.perm][:, self.perm]
        self.p = max(n - 1, 0) if dense else bandwidth(Mp)
        ab = band_storage(Mp, self.p)
        cb = cholesky_banded(ab, lower=True)
        self.cbt = np.ascontiguousarray(cb.T)
        self.M = M

    @classmethod
    def rcm(cls, M):
        """Factor after reverse Cuthill-McKee reordering (generic sparse path)."""
        M = sp.csr_matrix(M)
        perm = reverse_cuthill_mckee(M, symmetric_mode=True)
        return cls(M, perm=perm)

    @property
    def identity_perm(self):
        return bool(np.array_equal(self.perm, np.arange(self.n)))

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        k = backend.kernels()
        if b.ndim == 2:
            return np.column_stack([self.solve(col) for col in b.T]) if b.shape[1] else b.copy()
        if self.identity_perm:
            return k.band_solve(self.cbt, b)
        x = np.empty(self.n)
        x[self.perm] = k.band_solve(self.cbt, b[self.perm])
        return x

    @property
    def solve_ops(self):
        """Multiply-add count of one forward/backward solve."""
        n, p = self.n, self.p
        return int(2 * (n * (p + 1) - p * (p + 1) // 2)) + (0 if self.identity_perm else 2 * n)


class SemiBandedSolver:
    """Solve ``(M + U V') x = b`` with ``M`` banded, reusing ``M^{-1} U`` across calls."""

    def __init__(self, factor: BandedFactor, U, V):
        self.factor = factor
        self.U = np.asarray(U, dtype=float)
        self.V = np.asarray(V, dtype=float)
        r = self.U.shape[1]
        if r:
            self.W = factor.solve(self.U)
            cap = np.eye(r) + self.V.T @ self.W
            if not np.all(np.isfinite(cap)) or np.linalg.cond(cap) > 1e15:
                raise SingularCapacitance("capacitance matrix I + V'M^{-1}U is singular")
            self.cap_lu, piv = lu_factor(cap, check_finite=True)
            self.cap_piv = np.ascontiguousarray(piv, dtype=np.int32)
        else:
            self.W = np.zeros((factor.n, 0))
            self.cap_lu = np.zeros((0, 0))
            self.cap_piv = np.zeros(0, dtype=np.int32)
        self.W = np.ascontiguousarray(self.W)
        self.Vt = np.ascontiguousarray(self.V.T)

    @property
    def rank(self):
        return self.U.shape[1]

    def solve(self, b):
        y = self.factor.solve(b)
        if self.rank:
            from scipy.linalg import lu_solve

            y = y - self.W @ lu_solve((self.cap_lu, self.cap_piv), self.Vt @ y)
        return y

    @property
    def solve_ops(self):
        n, r = self.factor.n, self.rank
        return self.factor.solve_ops + 2 * n * r + r * r


def semibanded_solve(factor: BandedFactor, U, V, b):
    """Woodbury solve of ``(M + U V') x = b``: two banded solves and one small dense solve.

    ``x = M^{-1} b - M^{-1} U (I + V' M^{-1} U)^{-1} V' M^{-1} b``.
    """
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    y = factor.solve(b)
    if U.size == 0 or not np.any(U):
        return y
    MU = factor.solve(U)
    cap = np.eye(U.shape[1]) + V.T @ MU
    try:
        if np.linalg.cond(cap) > 1e14:
            raise np.linalg.LinAlgError
        t = np.linalg.solve(cap, V.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularCapacitance("capacitance matrix I + V'M^{-1}U is singular") from exc
    return y - MU @ t

"""Structured QP/SOCP container shared by the builders and the solvers.

Cost is ``0.5 z'Hz + q'z + c``; constraints are ``Aeq z = beq``,
``F z <= g`` and second-order cones ``||s|| <= t`` with ``(s, t) = G z + h``
(``t`` is the last component).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

QP = "QP"
SOCP = "SOCP"


def _csr(M, shape=None):
    if M is None:
        return sp.csr_matrix(shape)
    return sp.csr_matrix(M)


@dataclass(frozen=True)
class Cone:
    G: sp.csr_matrix
    h: np.ndarray

    @property
    def size(self):
        return self.G.shape[0]

    def residual(self, z):
        """Positive when the cone constraint is violated."""
        w = self.G @ z + self.h
        return float(np.linalg.norm(w[:-1]) - w[-1])


@dataclass
class Structure:
    """Semi-banded split ``H = H_B + U V'``.

    ``ref_idx`` lists the decision variables that carry the artificial
    reference (the low-rank coupling block).
    """

    H_B: sp.csr_matrix
    U: np.ndarray
    V: np.ndarray
    ref_idx: np.ndarray

    @property
    def rank(self):
        return self.U.shape[1]

    def dense(self):
        return self.H_B.toarray() + self.U @ self.V.T


def lowrank_factors(H_LR, ref_idx):
    """Exact factors (U, V) of a coupling matrix supported on ``ref_idx`` rows/columns.

    With ``S`` the complement of ``ref_idx``, ``C = H_LR[S, R]`` and
    ``M = H_LR[R, R]``: ``U = [P_S C, P_R]``, ``V = [P_R, P_S C + P_R M]``.
    """
    H_LR = sp.csr_matrix(H_LR)
    n = H_LR.shape[0]
    R = np.asarray(ref_idx, dtype=int)
    S = np.setdiff1d(np.arange(n), R)
    m = R.size
    Hd = H_LR.toarray()
    C = Hd[np.ix_(S, R)]
    M = Hd[np.ix_(R, R)]
    U = np.zeros((n, 2 * m))
    V = np.zeros((n, 2 * m))
    U[S, :m] = C
    U[R, m:] = np.eye(m)
    V[R, :m] = np.eye(m)
    V[S, m:] = C
    V[R, m:] = M
    return U, V


def bandwidth(M):
    M = sp.coo_matrix(M)
    if M.nnz == 0:
        return 0
    return int(np.max(np.abs(M.row - M.col)))


@dataclass
class StructuredProgram:
    kind: str
    H: sp.csr_matrix
    q: np.ndarray
    c: float = 0.0
    Aeq: sp.csr_matrix | None = None
    beq: np.ndarray | None = None
    F: sp.csr_matrix | None = None
    g: np.ndarray | None = None
    cones: list = field(default_factory=list)
    structure: Structure | None = None
    var_layout: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.q.size
        self.H = _csr(self.H)
        self.q = np.asarray(self.q, dtype=float)
        if self.Aeq is None:
            self.Aeq, self.beq = sp.csr_matrix((0, n)), np.zeros(0)
        if self.F is None:
            self.F, self.g = sp.csr_matrix((0, n)), np.zeros(0)
        self.Aeq = _csr(self.Aeq)
        self.F = _csr(self.F)
        self.beq = np.asarray(self.beq, dtype=float)
        self.g = np.asarray(self.g, dtype=float)

    @property
    def n(self):
        return self.q.size

    def block(self, z, name):
        a, b = self.var_layout[name]
        return np.asarray(z)[a:b]

    def objective(self, z):
        return float(0.5 * z @ (self.H @ z) + self.q @ z + self.c)

    def violation(self, z):
        """Largest constraint violation (equalities, inequalities, cones)."""
        v = 0.0
        if self.Aeq.shape[0]:
            v = max(v, float(np.max(np.abs(self.Aeq @ z - self.beq))))
        if self.F.shape[0]:
            v = max(v, float(np.max(self.F @ z - self.g)))
        for cone in self.cones:
            v = max(v, cone.residual(z))
        return v

    def structure_error(self):
        if self.structure is None:
            return 0.0
        return float(np.max(np.abs(self.structure.dense() - self.H.toarray())))

    def layout_covers(self):
        """True when the layout slices are disjoint and cover [0, n)."""
        spans = sorted(self.var_layout.values())
        pos = 0
        for a, b in spans:
            if a != pos or b < a:
                return False
            pos = b
        return pos == self.n

    def to_dict(self):
        def coo(M):
            M = sp.coo_matrix(M)
            return {"shape": list(M.shape), "row": M.row.tolist(), "col": M.col.tolist(), "val": M.data.tolist()}

        d = {
            "schema": 1,
            "kind": self.kind,
            "n": self.n,
            "H": coo(self.H),
            "q": self.q.tolist(),
            "c": self.c,
            "Aeq": coo(self.Aeq),
            "beq": self.beq.tolist(),
            "F": coo(self.F),
            "g": self.g.tolist(),
            "cones": [{"G": coo(k.G), "h": k.h.tolist()} for k in self.cones],
            "var_layout": {k: list(v) for k, v in self.var_layout.items()},
            "meta": {k: v for k, v in self.meta.items() if isinstance(v, (int, float, str, bool, list))},
        }
        if self.structure is not None:
            d["structure"] = {
                "H_B": coo(self.structure.H_B),
                "U": self.structure.U.tolist(),
                "V": self.structure.V.tolist(),
                "ref_idx": self.structure.ref_idx.tolist(),
            }
        return d

    @classmethod
    def from_dict(cls, d):
        def mat(m):
            return sp.csr_matrix((m["val"], (m["row"], m["col"])), shape=tuple(m["shape"]))

        structure = None
        if "structure" in d:
            s = d["structure"]
            n = d["n"]
            structure = Structure(
                mat(s["H_B"]),
                np.array(s["U"], dtype=float).reshape(n, -1),
                np.array(s["V"], dtype=float).reshape(n, -1),
                np.array(s["ref_idx"], dtype=int),
            )
        return cls(
            kind=d["kind"],
            H=mat(d["H"]),
            q=np.array(d["q"], dtype=float),
            c=d["c"],
            Aeq=mat(d["Aeq"]),
            beq=np.array(d["beq"], dtype=float),
            F=mat(d["F"]),
            g=np.array(d["g"], dtype=float),
            cones=[Cone(mat(k["G"]), np.array(k["h"], dtype=float)) for k in d["cones"]],
            structure=structure,
            var_layout={k: tuple(v) for k, v in d["var_layout"].items()},
            meta=d.get("meta", {}),
        )

"""Invariant-set machinery for terminal and tube ingredients."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from mpct._lp import lp_min
from mpct.errors import EmptySet, EmptyTightened, MPCTError, NoContainment, NotConverged, NotSchur
from mpct.model import DEFAULT_SIGMA, LinearSystem, Polytope, Zonotope

DEFAULT_MAX_ITER = 50
DEFAULT_EPS_ALPHA = 0.1
DEFAULT_RPI_CAP = 200
REDUNDANCY_TOL = 1e-8


def spectral_radius(M):
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass
class InvariantSetReport:
    set: Polytope
    iterations: int
    converged: bool
    removed_redundant: int
    # reduced full-dimensional representation used by the recursion, if any:
    # the set equals {lift @ w : w in reduced}
    reduced: Polytope | None = None
    lift: np.ndarray | None = None
    A_cl: np.ndarray | None = None

    def sample(self, n, seed=0):
        if self.reduced is None:
            return self.set.sample(n, seed=seed)
        W = self.reduced.sample(n, seed=seed)
        return W @ self.lift.T

    def to_dict(self):
        d = {
            "set": self.set.to_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "removed_redundant": self.removed_redundant,
        }
        if self.reduced is not None:
            d["reduced"] = self.reduced.to_dict()
            d["lift"] = self.lift.tolist()
        if self.A_cl is not None:
            d["A_cl"] = np.asarray(self.A_cl).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            Polytope.from_dict(d["set"]),
            d["iterations"],
            d["converged"],
            d["removed_redundant"],
            Polytope.from_dict(d["reduced"]) if "reduced" in d else None,
            np.array(d["lift"]) if "lift" in d else None,
            np.array(d["A_cl"]) if "A_cl" in d else None,
        )


@dataclass
class RpiApproximation:
    set: Zonotope
    s: int
    alpha: float

    @property
    def scaling(self):
        return 1.0 / (1.0 - self.alpha)

    def to_dict(self):
        return {"set": self.set.to_dict(), "s": self.s, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d):
        return cls(Zonotope.from_dict(d["set"]), d["s"], d["alpha"])


def _redundant(f, gi, P):
    res = lp_min(-f, np.vstack([P.F, f]), np.concatenate([P.g, [gi + 1.0]]), P.Feq, P.geq)
    if res.status == "infeasible":
        raise EmptySet("iterate became empty")
    return res.status == "optimal" and -res.value <= gi + REDUNDANCY_TOL


def max_invariant_set(A_cl, G: Polytope, max_iter=DEFAULT_MAX_ITER, raise_on_fail=True) -> InvariantSetReport:
    """Maximal positively invariant set of ``z+ = A_cl z`` inside ``G``.

    Runs ``O_{k+1} = O_k ∩ {z : A_cl z in O_k}`` from ``O_0 = G``; a step that
    contributes no non-redundant row is the fixpoint.
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    if A_cl.shape != (G.dim, G.dim):
        raise MPCTError("A_cl must be square and match the constraint dimension")
    if G.Feq.shape[0]:
        raise MPCTError("max_invariant_set expects a full-dimensional constraint set")
    Omega, removed = G.remove_redundant()
    for k in range(1, max_iter + 1):
        cand = Polytope(Omega.F @ A_cl, Omega.g) if np.any(Omega.F @ A_cl) else None
        new_F, new_g = [], []
        if cand is not None:
            for f, gi in zip(cand.F, cand.g):
                if not _redundant(f, gi, Omega):
                    new_F.append(f)
                    new_g.append(gi)
        elif np.any(Omega.g < 0):
            raise EmptySet("origin-free constraint set under nilpotent map")
        if not new_F:
            return InvariantSetReport(Omega, k, True, removed)
        Omega = Polytope(np.vstack([Omega.F, new_F]), np.concatenate([Omega.g, new_g]))
        Omega, r = Omega.remove_redundant()
        removed += r
    report = InvariantSetReport(Omega, max_iter, False, removed)
    if raise_on_fail:
        raise NotConverged(report)
    return report


def invariant_set_for_tracking(
    sys: LinearSystem, K, Z: Polytope, sigma=DEFAULT_SIGMA, max_iter=DEFAULT_MAX_ITER, raise_on_fail=True
) -> InvariantSetReport:
    """Invariant set for tracking over ``(x, xa, ua)``.

    The artificial reference is parametrized as ``(xa, ua) = M theta`` with
    ``M`` an orthonormal basis of the steady-state subspace, so the recursion
    runs on the full-dimensional extended state ``(x, theta)``.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    nx, nu = sys.nx, sys.nu
    AK = sys.A + sys.B @ K
    if spectral_radius(AK) >= 1.0:
        raise NotSchur(f"rho(A+BK) = {spectral_radius(AK):.6g} >= 1")
    M = sys.steady_state_basis()
    Mx, Mu = M[:nx], M[nx:]
    nt = M.shape[1]
    A_ext = np.block([[AK, -sys.B @ K @ Mx + sys.B @ Mu], [np.zeros((nt, nx)), np.eye(nt)]])
    # (x, K(x - xa) + ua) in Z
    S_in = np.block([[np.eye(nx), np.zeros((nx, nt))], [K, -K @ Mx + Mu]])
    # (xa, ua) in sigma Z
    S_ref = np.hstack([np.zeros((nx + nu, nx)), M])
    G = Z.preimage(S_in).intersect(Z.scale(sigma).preimage(S_ref))
    G = Polytope(G.F, G.g)
    rep = max_invariant_set(A_ext, G, max_iter=max_iter, raise_on_fail=False)
    lift = np.block([[np.eye(nx), np.zeros((nx, nt))], [np.zeros((nx + nu, nx)), M]])
    # lifted H-rep over (x, xa, ua): theta = M^T (xa, ua) and steady-state equality
    back = np.block([[np.eye(nx), np.zeros((nx, nx + nu))], [np.zeros((nt, nx)), M.T]])
    E = np.hstack([np.zeros((nx, nx)), np.eye(nx) - sys.A, -sys.B])
    full = Polytope(rep.set.F @ back, rep.set.g, E, np.zeros(nx))
    out = InvariantSetReport(full, rep.iterations, rep.converged, rep.removed_redundant, rep.set, lift, A_ext)
    if not out.converged and raise_on_fail:
        raise NotConverged(out)
    return out


def terminal_set_regulation(sys: LinearSystem, K, Z: Polytope, max_iter=DEFAULT_MAX_ITER, raise_on_fail=True):
    """Maximal admissible invariant set for ``u = K x`` tracking the origin."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    AK = sys.A + sys.B @ K
    if spectral_radius(AK) >= 1.0:
        raise NotSchur("A+BK is not Schur")
    G = Z.preimage(np.vstack([np.eye(sys.nx), K]))
    return max_invariant_set(AK, Polytope(G.F, G.g), max_iter=max_iter, raise_on_fail=raise_on_fail)


def _zonotope_in_scaled(Z1: Zonotope, W_poly: Polytope, alpha):
    """Check Z1 ⊆ alpha W via support functions on the facets of W."""
    return np.all(Z1.support_many(W_poly.F) <= alpha * W_poly.g + 1e-12)


def rpi_outer_approx(A_K, W: Zonotope, eps_alpha=DEFAULT_EPS_ALPHA, cap=DEFAULT_RPI_CAP) -> RpiApproximation:
    """Outer RPI approximation ``(1-alpha)^{-1} ⊕_{i<s} A_K^i W``.

    ``s`` is the smallest horizon with ``A_K^s W ⊆ alpha W`` and
    ``alpha <= eps_alpha``; the result then satisfies ``A_K φ ⊕ W ⊆ φ``.
    """
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    if spectral_radius(A_K) >= 1.0:
        raise NotSchur("A_K is not Schur")
    if W.n_generators == 0:
        if np.any(W.center):
            raise MPCTError("W must contain the origin")
        return RpiApproximation(Zonotope(np.zeros(W.dim)), 0, 0.0)
    W_poly = W.to_polytope()
    if np.any(W_poly.g <= 0):
        raise MPCTError("W must contain the origin in its interior")
    Ak = np.eye(W.dim)
    for s in range(1, cap + 1):
        Ak = A_K @ Ak
        img = W.linear_map(Ak)
        alpha = float(np.max(img.support_many(W_poly.F) / W_poly.g))
        alpha = max(alpha, 0.0)
        if alpha <= eps_alpha:
            terms = [W.linear_map(np.linalg.matrix_power(A_K, i)) for i in range(s)]
            acc = terms[0]
            for t in terms[1:]:
                acc = acc.minkowski_sum(t)
            return RpiApproximation(acc.scale(1.0 / (1.0 - alpha)), s, alpha)
    raise NoContainment(f"no s <= {cap} with A_K^s W ⊆ {eps_alpha} W")


def tighten(Z: Polytope, phi: Zonotope, K) -> Polytope:
    """Pontryagin difference ``Z ⊖ (φ × Kφ)`` via row-wise support functions.

    ``Z`` lives in (x, u) space and ``φ`` in x space; the product is the
    Cartesian one, so a row ``a'x + b'u <= g`` loses ``h_φ(a) + h_φ(K'b)``.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    nx = phi.dim
    Fx, Fu = Z.F[:, :nx], Z.F[:, nx:]
    h = phi.support_many(Fx) + phi.support_many(Fu @ K)
    g = Z.g - h
    if np.any(g <= 0):
        raise EmptyTightened("tube support exceeds constraint margin")
    Zt = Polytope(Z.F, g, Z.Feq, Z.geq)
    if Zt.is_empty():
        raise EmptyTightened("tightened constraint set is empty")
    return Zt


def save_report(report, path):
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)

"""Core data model: linear systems, polytopes, zonotopes, reference schedules.

Everything here is immutable after construction. Arrays stored on the
objects are flagged read-only so that instances can be shared freely.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from mpct._lp import lp_min
from mpct.errors import DimensionError, EmptySet, MPCTError, NotControllable

DEFAULT_TOL = 1e-9
DEFAULT_SIGMA = 0.99


def _frozen(a, ndim):
    arr = np.array(a, dtype=float, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
    if ndim == 1:
        arr = arr.reshape(-1)
    if arr.ndim != ndim:
        raise DimensionError(f"expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("non-finite entry")
    arr.setflags(write=False)
    return arr


def controllability_index(A, B, tol=1e-9):
    """Smallest k with rank [B, AB, ..., A^{k-1} B] = nx, or None if uncontrollable."""
    nx = A.shape[0]
    blocks = []
    Ak_B = B
    for k in range(1, nx + 1):
        blocks.append(Ak_B)
        if np.linalg.matrix_rank(np.hstack(blocks), tol=tol * max(1.0, np.abs(A).max(), np.abs(B).max())) == nx:
            return k
        Ak_B = A @ Ak_B
    return None


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Discrete-time LTI model ``x+ = A x + B u``, ``y = C x + D u``.

    Construction fails with :class:`NotControllable` when (A, B) is not
    controllable; the controllability index is stored as ``nu_index``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    nu_index: int = field(init=False)

    def __post_init__(self):
        A = _frozen(self.A, 2)
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B = _frozen(B, 2)
        C = _frozen(self.C, 2)
        D = np.array(self.D, dtype=float)
        if D.ndim < 2:
            D = D.reshape(C.shape[0], B.shape[1])
        D = _frozen(D, 2)
        nx = A.shape[0]
        if A.shape != (nx, nx) or B.shape[0] != nx or C.shape[1] != nx:
            raise DimensionError("inconsistent A/B/C shapes")
        if D.shape != (C.shape[0], B.shape[1]):
            raise DimensionError("D must be ny x nu")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        idx = controllability_index(A, B)
        if idx is None:
            raise NotControllable("(A, B) is not controllable")
        object.__setattr__(self, "nu_index", idx)

    @property
    def nx(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.B.shape[1]

    @property
    def ny(self):
        return self.C.shape[0]

    def step(self, x, u, w=None):
        xn = self.A @ x + self.B @ u
        return xn if w is None else xn + w

    def output(self, x, u):
        return self.C @ x + self.D @ u

    def steady_state_basis(self):
        """Orthonormal basis M of the steady-state subspace {(x,u): (I-A)x - Bu = 0}."""
        E = np.hstack([np.eye(self.nx) - self.A, -self.B])
        return null_space(E)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("A", "B", "C", "D")}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["A"]), np.array(d["B"]), np.array(d["C"]), np.array(d["D"]))


class Polytope:
    """H-representation ``{z : F z <= g, Feq z = geq}``.

    Zero rows of ``F`` are dropped on construction when trivially satisfied
    and reported as :class:`EmptySet` otherwise.
    """

    def __init__(self, F, g, Feq=None, geq=None):
        F = np.array(F, dtype=float)
        g = np.array(g, dtype=float).reshape(-1)
        if F.ndim == 1:
            F = F.reshape(1, -1)
        if F.shape[0] != g.size:
            raise DimensionError("F and g row counts differ")
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(g))):
            raise DimensionError("non-finite polytope data")
        d = F.shape[1]
        if Feq is None:
            Feq = np.zeros((0, d))
            geq = np.zeros(0)
        Feq = np.array(Feq, dtype=float).reshape(-1, d)
        geq = np.array(geq, dtype=float).reshape(-1)
        if Feq.shape[0] != geq.size:
            raise DimensionError("Feq and geq row counts differ")
        norms = np.linalg.norm(F, axis=1)
        zero = norms == 0
        if np.any(g[zero] < 0):
            raise EmptySet("zero constraint row with negative right-hand side")
        F, g = F[~zero], g[~zero]
        for arr in (F, g, Feq, geq):
            arr.setflags(write=False)
        self.F, self.g, self.Feq, self.geq = F, g, Feq, geq

    @property
    def dim(self):
        return self.F.shape[1]

    @property
    def n_rows(self):
        return self.F.shape[0]

    def __repr__(self):
        return f"Polytope(dim={self.dim}, rows={self.n_rows}, eq_rows={self.Feq.shape[0]})"

    @classmethod
    def box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        d = lower.size
        I = np.eye(d)
        return cls(np.vstack([I, -I]), np.concatenate([upper, -lower]))

    @classmethod
    def from_output_bounds(cls, Cz, Dz, y_low, y_high):
        """Constraint set ``{(x,u): y_low <= Cz x + Dz u <= y_high}``."""
        M = np.hstack([np.atleast_2d(Cz), np.atleast_2d(Dz)])
        return cls(np.vstack([M, -M]), np.concatenate([np.asarray(y_high, float), -np.asarray(y_low, float)]))

    def contains(self, z, tol=DEFAULT_TOL):
        z = np.asarray(z, dtype=float)
        ok = np.all(self.F @ z <= self.g + tol)
        if self.Feq.shape[0]:
            ok = ok and np.all(np.abs(self.Feq @ z - self.geq) <= tol)
        return bool(ok)

    def support(self, q):
        """h_P(q) = max_{z in P} q'z, computed by LP."""
        res = lp_min(-np.asarray(q, dtype=float), self.F, self.g, self.Feq, self.geq)
        if res.status == "infeasible":
            raise EmptySet("support of an empty polytope")
        if res.status == "unbounded":
            return np.inf
        if res.status != "optimal":
            raise MPCTError("LP failure while evaluating support")
        return -res.value

    def argmax(self, q):
        res = lp_min(-np.asarray(q, dtype=float), self.F, self.g, self.Feq, self.geq)
        if res.status != "optimal":
            raise EmptySet(f"LP status {res.status}")
        return res.x

    def is_empty(self):
        res = lp_min(np.zeros(self.dim), self.F, self.g, self.Feq, self.geq)
        return res.status == "infeasible"

    def is_bounded(self):
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = 1.0
            if not np.isfinite(self.support(e)) or not np.isfinite(self.support(-e)):
                return False
        return True

    def chebyshev_center(self):
        """Center and radius of the largest ball inside P (relative to its affine hull)."""
        F, g = self.F, self.g
        norms = np.linalg.norm(F, axis=1)
        n = self.dim
        c = np.zeros(n + 1)
        c[-1] = -1.0
        Fa = np.hstack([F, norms[:, None]])
        Feq = np.hstack([self.Feq, np.zeros((self.Feq.shape[0], 1))])
        bounds = [(None, None)] * n + [(0, None)]
        if not F.shape[0]:
            bounds[-1] = (0, 0)
        res = lp_min(c, Fa, g, Feq, self.geq, bounds=bounds)
        if res.status == "infeasible":
            raise EmptySet("empty polytope")
        if res.status == "unbounded":
            return np.zeros(n), np.inf
        return res.x[:n], float(res.x[-1])

    def has_interior(self, tol=DEFAULT_TOL):
        _, r = self.chebyshev_center()
        return r > tol

    def scale(self, sigma):
        """sigma * P for sigma >= 0."""
        return Polytope(self.F, sigma * self.g, self.Feq, sigma * self.geq)

    def intersect(self, other):
        if other.dim != self.dim:
            raise DimensionError("dimension mismatch in intersection")
        return Polytope(
            np.vstack([self.F, other.F]),
            np.concatenate([self.g, other.g]),
            np.vstack([self.Feq, other.Feq]),
            np.concatenate([self.geq, other.geq]),
        )

    def with_equalities(self, Feq, geq):
        Feq = np.atleast_2d(np.asarray(Feq, dtype=float))
        return Polytope(self.F, self.g, np.vstack([self.Feq, Feq]), np.concatenate([self.geq, np.asarray(geq, float)]))

    def preimage(self, M, offset=None):
        """{z : M z + offset in P}."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        off = np.zeros(self.dim) if offset is None else np.asarray(offset, dtype=float)
        return Polytope(self.F @ M, self.g - self.F @ off, self.Feq @ M, self.geq - self.Feq @ off)

    def product(self, other):
        """Cartesian product P x O."""
        d1, d2 = self.dim, other.dim
        F = np.block([[self.F, np.zeros((self.n_rows, d2))], [np.zeros((other.n_rows, d1)), other.F]])
        Feq = np.block(
            [
                [self.Feq, np.zeros((self.Feq.shape[0], d2))],
                [np.zeros((other.Feq.shape[0], d1)), other.Feq],
            ]
        )
        return Polytope(F, np.concatenate([self.g, other.g]), Feq, np.concatenate([self.geq, other.geq]))

    def normalized(self):
        norms = np.linalg.norm(self.F, axis=1)
        return Polytope(self.F / norms[:, None], self.g / norms, self.Feq, self.geq)

    def remove_redundant(self, tol=1e-8):
        """Drop inequality rows implied by the others (one LP per row)."""
        P = self.normalized()
        F, g = np.array(P.F), np.array(P.g)
        # duplicate rows first, cheap and removes most of the work
        key = np.round(np.hstack([F, g[:, None]]), 12)
        _, first = np.unique(key, axis=0, return_index=True)
        keep_idx = sorted(first)
        F, g = F[keep_idx], g[keep_idx]
        keep = np.ones(F.shape[0], dtype=bool)
        for i in range(F.shape[0]):
            others = keep.copy()
            others[i] = False
            Fi = np.vstack([F[others], F[i]])
            gi = np.concatenate([g[others], [g[i] + 1.0]])
            res = lp_min(-F[i], Fi, gi, P.Feq, P.geq)
            if res.status == "infeasible":
                raise EmptySet("empty polytope during redundancy removal")
            if res.status == "optimal" and -res.value <= g[i] + tol:
                keep[i] = False
        return Polytope(F[keep], g[keep], P.Feq, P.geq), int((~keep).sum())

    def vertices(self):
        """Brute-force vertex enumeration (small dimension only, equality part unsupported)."""
        if self.Feq.shape[0]:
            raise MPCTError("vertex enumeration requires an inequality-only polytope")
        d = self.dim
        verts = []
        for rows in itertools.combinations(range(self.n_rows), d):
            M = self.F[list(rows)]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            v = np.linalg.solve(M, self.g[list(rows)])
            if self.contains(v, tol=1e-9):
                verts.append(v)
        if not verts:
            return np.zeros((0, d))
        V = np.array(verts)
        _, idx = np.unique(np.round(V, 9), axis=0, return_index=True)
        return V[sorted(idx)]

    def affine_parametrization(self):
        """Return (z0, N) with {Feq z = geq} = {z0 + N t}."""
        if not self.Feq.shape[0]:
            return np.zeros(self.dim), np.eye(self.dim)
        z0 = np.linalg.lstsq(self.Feq, self.geq, rcond=None)[0]
        if np.max(np.abs(self.Feq @ z0 - self.geq), initial=0.0) > 1e-9:
            raise EmptySet("inconsistent equality constraints")
        return z0, null_space(self.Feq)

    def sample(self, n, seed=0, burn=50, thin=5):
        """Hit-and-run samples from P (uniform in the limit), deterministic in ``seed``."""
        rng = np.random.default_rng(seed)
        z0, N = self.affine_parametrization()
        if N.shape[1] == 0:
            return np.tile(z0, (n, 1))
        Pr = self.preimage(N, z0)
        Pr = Polytope(Pr.F, Pr.g)
        t, r = Pr.chebyshev_center()
        if not np.isfinite(r):
            raise MPCTError("cannot sample an unbounded polytope")
        out = np.empty((n, self.dim))
        k = N.shape[1]
        total = burn + n * thin
        j = 0
        for it in range(total):
            d = rng.standard_normal(k)
            d /= np.linalg.norm(d)
            Fd = Pr.F @ d
            slack = Pr.g - Pr.F @ t
            slack = np.maximum(slack, 0.0)
            with np.errstate(divide="ignore"):
                ratios = slack / Fd
            hi = np.min(ratios[Fd > 1e-14], initial=np.inf)
            lo = np.max(ratios[Fd < -1e-14], initial=-np.inf)
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise MPCTError("cannot sample an unbounded polytope")
            t = t + rng.uniform(lo, hi) * d
            if it >= burn and (it - burn) % thin == 0 and j < n:
                out[j] = z0 + N @ t
                j += 1
        return out

    def to_dict(self):
        d = {"F": self.F.tolist(), "g": self.g.tolist()}
        if self.Feq.shape[0]:
            d["Feq"] = self.Feq.tolist()
            d["geq"] = self.geq.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        F = np.array(d["F"], dtype=float)
        g = np.array(d["g"], dtype=float)
        if F.size == 0:
            F = F.reshape(0, len(d["Feq"][0]) if d.get("Feq") else 0)
        return cls(F, g, d.get("Feq"), d.get("geq"))


class Zonotope:
    """center ⊕ sum_i [-1, 1] g_i, generators stored as columns of ``G``."""

    def __init__(self, center, generators=None):
        c = np.array(center, dtype=float).reshape(-1)
        if generators is None:
            G = np.zeros((c.size, 0))
        else:
            G = np.array(generators, dtype=float)
            if G.ndim == 1:
                G = G.reshape(c.size, -1)
        if G.shape[0] != c.size:
            raise DimensionError("generator dimension mismatch")
        if G.shape[1]:
            G = G[:, np.linalg.norm(G, axis=0) > 0]
        c.setflags(write=False)
        G.setflags(write=False)
        self.center, self.G = c, G

    @property
    def dim(self):
        return self.center.size

    @property
    def n_generators(self):
        return self.G.shape[1]

    def __repr__(self):
        return f"Zonotope(dim={self.dim}, generators={self.n_generators})"

    @classmethod
    def from_box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        return cls((lower + upper) / 2, np.diag((upper - lower) / 2))

    def support(self, q):
        q = np.asarray(q, dtype=float)
        return float(q @ self.center + np.abs(q @ self.G).sum())

    def support_many(self, Q):
        """Row-wise support values for directions stacked in ``Q``."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        return Q @ self.center + np.abs(Q @ self.G).sum(axis=1)

    def linear_map(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return Zonotope(M @ self.center, M @ self.G)

    def scale(self, s):
        return Zonotope(s * self.center, s * self.G)

    def minkowski_sum(self, other):
        return Zonotope(self.center + other.center, np.hstack([self.G, other.G]))

    def interval_hull(self):
        r = np.abs(self.G).sum(axis=1)
        return self.center - r, self.center + r

    def contains(self, z, tol=DEFAULT_TOL):
        """Exact membership: exists lam in [-1,1]^p with c + G lam = z."""
        z = np.asarray(z, dtype=float)
        p = self.n_generators
        if p == 0:
            return bool(np.all(np.abs(z - self.center) <= tol))
        # minimize ||lam||_inf subject to G lam = z - c
        c = np.zeros(p + 1)
        c[-1] = 1.0
        F = np.vstack([np.hstack([np.eye(p), -np.ones((p, 1))]), np.hstack([-np.eye(p), -np.ones((p, 1))])])
        res = lp_min(c, F, np.zeros(2 * p), np.hstack([self.G, np.zeros((self.dim, 1))]), z - self.center)
        if res.status != "optimal":
            # fall back to the least-squares residual for near-degenerate generator sets
            lam = np.linalg.lstsq(self.G, z - self.center, rcond=None)[0]
            return bool(np.max(np.abs(lam)) <= 1 + tol and np.allclose(self.G @ lam, z - self.center, atol=tol))
        return bool(res.value <= 1.0 + tol)

    def extreme_points(self, n=None, seed=0):
        """Points c + G s for sign vectors s; all of them when p is small, else ``n`` random ones."""
        p = self.n_generators
        if p == 0:
            return self.center.reshape(1, -1)
        if n is None and p <= 12:
            signs = np.array(list(itertools.product([-1.0, 1.0], repeat=p)))
        else:
            rng = np.random.default_rng(seed)
            signs = rng.choice([-1.0, 1.0], size=(n or 4096, p))
        return self.center + signs @ self.G.T

    def sample(self, n, seed=0):
        rng = np.random.default_rng(seed)
        lam = rng.uniform(-1.0, 1.0, size=(n, self.n_generators))
        return self.center + lam @ self.G.T

    def to_polytope(self):
        """Exact H-representation (facets from (d-1)-subsets of generators)."""
        d, p = self.dim, self.n_generators
        G = self.G
        if p == 0:
            I = np.eye(d)
            return Polytope(np.vstack([I, -I]), np.concatenate([self.center, -self.center]))
        if np.linalg.matrix_rank(G) < d:
            raise MPCTError("degenerate zonotope has no full-dimensional H-representation")
        normals = []
        if d == 1:
            normals = [np.array([1.0])]
        else:
            for comb in itertools.combinations(range(p), d - 1):
                sub = G[:, comb]
                n = np.array([(-1) ** i * np.linalg.det(np.delete(sub, i, axis=0)) for i in range(d)])
                nn = np.linalg.norm(n)
                if nn > 1e-12:
                    normals.append(n / nn)
        N = np.array(normals)
        _, idx = np.unique(np.round(np.vstack([N, -N]), 10), axis=0, return_index=True)
        F = np.vstack([N, -N])[sorted(idx)]
        return Polytope(F, self.support_many(F))

    def to_dict(self):
        return {"center": self.center.tolist(), "generators": self.G.T.tolist()}

    @classmethod
    def from_dict(cls, d):
        c = np.array(d["center"], dtype=float)
        gens = np.array(d.get("generators", []), dtype=float).reshape(-1, c.size)
        return cls(c, gens.T)


@dataclass(frozen=True)
class ReferenceSchedule:
    """Piecewise-constant setpoints or a periodic output trajectory.

    ``times``/``values`` describe switches: ``values[i]`` applies from
    ``times[i]`` until the next switch. A periodic schedule stores ``period``
    samples in ``samples`` (shape ``(period, ny)``).
    """

    kind: str
    times: tuple = ()
    values: tuple = ()
    period: int = 0
    samples: tuple = ()

    def __post_init__(self):
        if self.kind == "piecewise":
            if not self.times or len(self.times) != len(self.values):
                raise MPCTError("piecewise schedule needs matching times/values")
            if any(b <= a for a, b in zip(self.times, self.times[1:])):
                raise MPCTError("switch times must be strictly increasing")
        elif self.kind == "periodic":
            if self.period < 1 or len(self.samples) != self.period:
                raise MPCTError("periodic schedule needs exactly `period` samples")
        else:
            raise MPCTError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, y):
        return cls("piecewise", (0,), (tuple(np.atleast_1d(np.asarray(y, float)).tolist()),))

    @classmethod
    def piecewise(cls, times, values):
        vals = tuple(tuple(np.atleast_1d(np.asarray(v, float)).tolist()) for v in values)
        return cls("piecewise", tuple(int(t) for t in times), vals)

    @classmethod
    def periodic(cls, samples):
        S = np.asarray(samples, dtype=float)
        if S.ndim == 1:
            S = S.reshape(-1, 1)
        return cls("periodic", period=S.shape[0], samples=tuple(map(tuple, S.tolist())))

    def at(self, t):
        if self.kind == "periodic":
            return np.array(self.samples[t % self.period])
        idx = 0
        for i, ti in enumerate(self.times):
            if t >= ti:
                idx = i
        return np.array(self.values[idx])

    def window(self, t, length=None):
        """Samples y_r(t), ..., y_r(t + length - 1) (length defaults to the period)."""
        length = self.period if length is None else length
        return np.array([self.at(t + k) for k in range(length)])

    def to_dict(self):
        if self.kind == "periodic":
            return {"kind": "periodic", "samples": [list(s) for s in self.samples]}
        return {"kind": "piecewise", "times": list(self.times), "values": [list(v) for v in self.values]}

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "periodic":
            return cls.periodic(d["samples"])
        return cls.piecewise(d["times"], d["values"])


def _check_constraint_set(Z, d):
    if Z.dim != d:
        raise DimensionError(f"constraint set has dimension {Z.dim}, expected {d}")


def steady_state_manifold(sys: LinearSystem, Z: Polytope, sigma: float = DEFAULT_SIGMA) -> Polytope:
    """Strictly admissible steady states ``{(x,u) in sigma Z : x = A x + B u}``."""
    if not 0.0 <= sigma < 1.0:
        raise MPCTError("sigma must lie in [0, 1)")
    _check_constraint_set(Z, sys.nx + sys.nu)
    E = np.hstack([np.eye(sys.nx) - sys.A, -sys.B])
    Zs = Z.scale(sigma).with_equalities(E, np.zeros(sys.nx))
    if Zs.is_empty():
        raise EmptySet("no steady state inside sigma Z")
    return Zs


class SupportOracle:
    """Support function of a linear image ``{M z : z in P}`` evaluated by LP."""

    def __init__(self, P: Polytope, M):
        self.P = P
        self.M = np.atleast_2d(np.asarray(M, dtype=float))

    @property
    def dim(self):
        return self.M.shape[0]

    def support(self, q):
        return self.P.support(self.M.T @ np.asarray(q, dtype=float))


def fourier_motzkin(F, g, n_keep, tol=1e-10):
    """Project {w : F w <= g} onto its first ``n_keep`` coordinates."""
    F = np.array(F, dtype=float)
    g = np.array(g, dtype=float)
    while F.shape[1] > n_keep:
        j = F.shape[1] - 1
        col = F[:, j]
        pos, neg, zero = col > tol, col < -tol, np.abs(col) <= tol
        rows_F, rows_g = [F[zero, :j]], [g[zero]]
        for i in np.flatnonzero(pos):
            for k in np.flatnonzero(neg):
                a, b = -col[k], col[i]
                rows_F.append((a * F[i, :j] + b * F[k, :j])[None, :])
                rows_g.append(np.array([a * g[i] + b * g[k]]))
        F = np.vstack(rows_F) if rows_F else np.zeros((0, j))
        g = np.concatenate(rows_g) if rows_g else np.zeros(0)
        if F.shape[0]:
            P, _ = Polytope(F, g).remove_redundant()
            F, g = np.array(P.F), np.array(P.g)
    return F, g


def output_set(sys: LinearSystem, Zs: Polytope):
    """Reachable setpoints ``{C x + D u : (x,u) in Zs}``.

    Exact :class:`Polytope` for ny <= 2 (Fourier-Motzkin on the
    steady-state parametrization), otherwise a :class:`SupportOracle`.
    """
    M = np.hstack([sys.C, sys.D])
    if sys.ny > 2:
        return SupportOracle(Zs, M)
    z0, N = Zs.affine_parametrization()
    # lifted variables (y, t): y - M N t = M z0, Fz (z0 + N t) <= g
    L = M @ N
    k = N.shape[1]
    ny = sys.ny
    F = np.vstack(
        [
            np.hstack([np.eye(ny), -L]),
            np.hstack([-np.eye(ny), L]),
            np.hstack([np.zeros((Zs.n_rows, ny)), Zs.F @ N]),
        ]
    )
    g = np.concatenate([M @ z0, -(M @ z0), Zs.g - Zs.F @ z0])
    if k == 0:
        y = M @ z0
        return Polytope.box(y, y)
    Fy, gy = fourier_motzkin(F, g, ny)
    P = Polytope(Fy, gy)
    if P.is_empty():
        raise EmptySet("empty output set")
    return P

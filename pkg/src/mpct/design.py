"""Terminal ingredients (Riccati/Lyapunov) and assumption validators."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from mpct.errors import NoStabilizingSolution, NotSchur
from mpct.model import DEFAULT_SIGMA, LinearSystem
from mpct.setops import InvariantSetReport, spectral_radius


def _sym(M):
    return 0.5 * (M + M.T)


def dare_residual(A, B, Q, R, P):
    BtPA = B.T @ P @ A
    return A.T @ P @ A - P - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q


def dare_lqr(A, B, Q, R, tol=1e-10, max_iter=100):
    """Stabilizing DARE solution and LQR gain by the structured doubling algorithm.

    Returns ``(P, K)`` with ``K = -(R + B'PB)^{-1} B'PA``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    Ak, Gk, Hk = A.copy(), B @ np.linalg.solve(R, B.T), Q.copy()
    I = np.eye(n)
    for _ in range(max_iter):
        W = I + Gk @ Hk
        try:
            WiA = np.linalg.solve(W, Ak)
            WiG = np.linalg.solve(W, Gk)
        except np.linalg.LinAlgError as exc:
            raise NoStabilizingSolution("doubling step became singular") from exc
        H_next = _sym(Hk + Ak.T @ Hk @ WiA)
        Gk = _sym(Gk + Ak @ WiG @ Ak.T)
        Ak = Ak @ WiA
        step = np.max(np.abs(H_next - Hk))
        Hk = H_next
        if not np.all(np.isfinite(Hk)):
            break
        if step <= 1e-14 * max(1.0, np.max(np.abs(Hk))):
            break
    P = Hk
    if not np.all(np.isfinite(P)):
        raise NoStabilizingSolution("doubling iteration diverged")
    # one Newton-Kleinman polish step keeps the residual at machine level
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if spectral_radius(A + B @ K) < 1.0:
        P2 = lyapunov_terminal_cost(A, B, K, Q, R)
        if np.max(np.abs(dare_residual(A, B, Q, R, P2))) < np.max(np.abs(dare_residual(A, B, Q, R, P))):
            P = P2
            K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    res = np.max(np.abs(dare_residual(A, B, Q, R, P)))
    if res > tol * max(1.0, np.max(np.abs(P))):
        raise NoStabilizingSolution(f"DARE residual stalled at {res:.3e}")
    rho = spectral_radius(A + B @ K)
    if rho >= 1.0:
        raise NoStabilizingSolution(f"DARE solution is not stabilizing (spectral radius {rho:.6g})")
    return P, K


def lyapunov_terminal_cost(A, B, K, Q, R):
    """Solve ``P - A_K' P A_K = Q + K' R K`` through the vectorized linear system."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    AK = A + B @ K
    if spectral_radius(AK) >= 1.0:
        raise NotSchur("A+BK is not Schur")
    n = A.shape[0]
    Qe = Q + K.T @ R @ K
    # row-major vec: vec(AK' P AK) = kron(AK', AK') vec(P)
    M = np.eye(n * n) - np.kron(AK.T, AK.T)
    P = np.linalg.solve(M, Qe.reshape(-1)).reshape(n, n)
    return _sym(P)


@dataclass
class TrackingDesign:
    """Weights, gains and horizon shared by the tracking formulations.

    Optional matrices default from the required ones in :meth:`complete`.
    """

    Q: np.ndarray
    R: np.ndarray
    N: int
    S: np.ndarray | None = None  # output offset weight
    T: np.ndarray | None = None  # state offset weight (terminal-equality variants)
    S_u: np.ndarray | None = None  # input offset weight
    T_h: np.ndarray | None = None
    S_h: np.ndarray | None = None
    P: np.ndarray | None = None
    K: np.ndarray | None = None
    K_bar: np.ndarray | None = None
    sigma: float = DEFAULT_SIGMA
    omega: float = 0.3
    gamma: float = 0.0
    offset_norm: float = 0.0  # weight of the optional 2-norm offset term

    @classmethod
    def from_lqr(cls, sys: LinearSystem, Q, R, N, **kw):
        """Design with ``P``/``K`` from the DARE, other weights from ``kw`` or defaults."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        R = np.atleast_2d(np.asarray(R, dtype=float))
        P, K = dare_lqr(sys.A, sys.B, Q, R)
        d = cls(Q=Q, R=R, N=N, P=P, K=K, **kw)
        return d.complete(sys)

    def complete(self, sys: LinearSystem):
        nx, nu, ny = sys.nx, sys.nu, sys.ny
        if self.S is None:
            self.S = np.eye(ny)
        if self.T is None:
            self.T = np.eye(nx)
        if self.S_u is None:
            self.S_u = np.eye(nu)
        if self.T_h is None:
            self.T_h = np.eye(nx)
        if self.S_h is None:
            self.S_h = np.eye(nu)
        if self.K is None or self.P is None:
            P, K = dare_lqr(sys.A, sys.B, self.Q, self.R)
            self.P = P if self.P is None else self.P
            self.K = K if self.K is None else self.K
        if self.K_bar is None:
            self.K_bar = self.K
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (list, tuple)):
                setattr(self, f.name, np.atleast_2d(np.asarray(v, dtype=float)))
        return self

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in fields(cls):
            if f.name not in d or d[f.name] is None:
                continue
            v = d[f.name]
            kw[f.name] = np.atleast_2d(np.asarray(v, dtype=float)) if isinstance(v, list) else v
        return cls(**kw)


@dataclass
class Check:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def certified(self):
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def add(self, name, passed, margin, detail=""):
        self.checks.append(Check(name, bool(passed), float(margin), detail))

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {
            "certified": self.certified,
            "checks": [vars(c) for c in self.checks],
        }


def pbh_observability_margin(A, Q):
    """Smallest singular value of [A - λI; Q^{1/2}] over the eigenvalues λ of A."""
    w, V = np.linalg.eigh(_sym(np.atleast_2d(Q)))
    Qh = (V * np.sqrt(np.clip(w, 0, None))) @ V.T
    n = A.shape[0]
    margin = np.inf
    for lam in np.linalg.eigvals(A):
        M = np.vstack([A - lam * np.eye(n), Qh])
        margin = min(margin, np.linalg.svd(M, compute_uv=False)[-1])
    return float(margin)


def _check_gain_and_cost(report, sys, Q, R, K, P, prefix=""):
    AK = sys.A + sys.B @ K
    rho = spectral_radius(AK)
    report.add(prefix + "schur_gain", rho < 1.0, 1.0 - rho, f"rho(A+BK)={rho:.6g}")
    L = AK.T @ P @ AK - P + Q + K.T @ R @ K
    lmax = float(np.max(np.linalg.eigvalsh(_sym(L))))
    report.add(prefix + "lyapunov_inequality", lmax <= 1e-8, -lmax, f"max eig={lmax:.3e}")
    pmin = float(np.min(np.linalg.eigvalsh(_sym(P))))
    report.add(prefix + "terminal_weight_pd", pmin > 0, pmin)


def _check_invariance(report, sys, K, Z, Xt, n_samples, seed, name="terminal_set_invariance"):
    if Xt is None:
        return
    report.add("terminal_set_converged", Xt.converged, 0.0, f"iterations={Xt.iterations}")
    pts = Xt.sample(n_samples, seed=seed)
    nx = sys.nx
    worst = -np.inf
    worst_adm = -np.inf
    for p in pts:
        x, xa, ua = p[:nx], p[nx : 2 * nx], p[2 * nx :]
        u = K @ (x - xa) + ua
        nxt = np.concatenate([sys.A @ x + sys.B @ u, xa, ua])
        worst = max(worst, np.max(Xt.set.F @ nxt - Xt.set.g, initial=-np.inf))
        worst_adm = max(worst_adm, np.max(Z.F @ np.concatenate([x, u]) - Z.g))
    report.add(name, worst <= 1e-7, -worst, f"{len(pts)} samples")
    report.add("terminal_set_admissible", worst_adm <= 1e-7, -worst_adm)


def validate_assumption1(sys: LinearSystem, design: TrackingDesign, Xt: InvariantSetReport | None = None,
                         Z=None, n_samples=1000, seed=0) -> ValidationReport:
    """Advisory check of the nominal design conditions; never raises on failure."""
    rep = ValidationReport()
    m = pbh_observability_margin(sys.A, design.Q)
    rep.add("observability", m > 1e-9, m, "PBH rank test on (Q^1/2, A)")
    rep.add("horizon", design.N >= sys.nu_index, design.N - sys.nu_index, f"N={design.N}, nu={sys.nu_index}")
    _check_gain_and_cost(rep, sys, design.Q, design.R, design.K, design.P)
    smin = float(np.min(np.linalg.eigvalsh(_sym(np.atleast_2d(design.S)))))
    rep.add("offset_cost_pd", smin > 0, smin, "S positive definite gives a unique optimal reachable reference")
    if design.offset_norm > 0 and smin <= 0:
        rep.add("offset_uniqueness", False, 0.0, "pure norm offset may have non-unique minimizers")
    if Xt is not None and Z is not None:
        _check_invariance(rep, sys, design.K, Z, Xt, n_samples, seed)
    return rep


def validate_assumption2(sys: LinearSystem, design: TrackingDesign, W, rpi, Xt_bar=None, Z_bar=None,
                         n_samples=1000, seed=0) -> ValidationReport:
    """Tube-design conditions: gains, RPI property, terminal ingredients on tightened constraints."""
    rep = ValidationReport()
    m = pbh_observability_margin(sys.A, design.Q)
    rep.add("observability", m > 1e-9, m)
    rmin = float(np.min(np.linalg.eigvalsh(_sym(design.R))))
    rep.add("input_weight_pd", rmin > 0, rmin)
    smin = float(np.min(np.linalg.eigvalsh(_sym(np.atleast_2d(design.S)))))
    rep.add("offset_cost_pd", smin > 0, smin)
    rho = spectral_radius(sys.A + sys.B @ design.K)
    rep.add("schur_tube_gain", rho < 1, 1 - rho)
    _check_gain_and_cost(rep, sys, design.Q, design.R, design.K_bar, design.P, prefix="terminal_")
    # RPI: A_K e + w in phi for extreme e, w
    AK = sys.A + sys.B @ design.K
    E = rpi.set.extreme_points(n=256, seed=seed)
    Wp = W.extreme_points(n=64, seed=seed + 1)
    P = rpi.set
    worst = 0.0
    F = None
    if P.n_generators and np.linalg.matrix_rank(P.G) == P.dim and P.n_generators <= 24:
        F = P.to_polytope()
    for e in E:
        for w in Wp:
            z = AK @ e + w
            if F is not None:
                worst = max(worst, float(np.max(F.F @ z - F.g)))
            elif not P.contains(z, tol=1e-9):
                worst = max(worst, 1.0)
    rep.add("rpi_containment", worst <= 1e-9, -worst, f"{len(E)}x{len(Wp)} extreme-point pairs")
    if Xt_bar is not None and Z_bar is not None:
        _check_invariance(rep, sys, design.K_bar, Z_bar, Xt_bar, n_samples, seed)
    return rep


def validate_economic(sys, design, Zs, x_star, u_star) -> ValidationReport:
    """Checks tied to the economic formulation (linear lower bound, interior setpoint)."""
    rep = ValidationReport()
    rep.add("horizon", design.N >= sys.nu_index, design.N - sys.nu_index)
    rep.add("offset_linear_lower_bound", design.gamma > 0, design.gamma,
            "gamma > 0 required for the linear lower bound on the offset cost")
    z = np.concatenate([x_star, u_star])
    slack = float(np.min(Zs.g - Zs.F @ z))
    rep.add("setpoint_interior", slack > 1e-9, slack)
    return rep

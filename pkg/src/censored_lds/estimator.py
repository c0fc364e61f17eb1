"""Online second-order estimation of censored linear responses.

Pipeline: least-squares warmup on the first half of the pairs gives a
confidence ellipsoid ``K = {A : ||A - A0||_{Sigma0} <= 1}``; a single
time-ordered pass over the second half then runs projected online Newton
steps whose gradients switch between a censor-aware sample (drawn from the
truncated Gaussian) and the censor-oblivious mean, depending on a survival
Test.

Norm convention throughout: ``||A||_S^2 = tr(A S A^T)`` for an n-by-d ``A``
and a d-by-d ``S``.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .sets import ObservableSet
from .simulator import (
    CensoredTrajectory,
    InsufficientPairsError,
    PairedDataset,
    extract_pairs,
    split_pairs,
)
from .truncated import TestConfig, rejection_sample, test_survival

logger = logging.getLogger(__name__)

__all__ = [
    "Branch",
    "ConfidenceEllipsoid",
    "SonSgConfig",
    "RunDiagnostics",
    "EstimationReport",
    "ProjectionError",
    "BoundInapplicableError",
    "WarmupError",
    "sigma_norm_sq",
    "warmup",
    "test_and_switch_grad",
    "project_ellipsoid",
    "son_sg",
    "check_generic_bound",
    "generic_bound_tolerance",
    "check_potential",
    "ols",
    "learn_censored_lds",
]


class ProjectionError(RuntimeError):
    pass


class BoundInapplicableError(ValueError):
    pass


class WarmupError(ValueError):
    pass


class Branch(enum.IntEnum):
    CENSOR_AWARE = 0
    CENSOR_OBLIVIOUS = 1
    EXHAUSTED = 2


def sigma_norm_sq(A, S) -> float:
    A = np.atleast_2d(A)
    return float(np.einsum("ij,jk,ik->", A, S, A))


@dataclass(frozen=True)
class ConfidenceEllipsoid:
    A0: np.ndarray
    Sigma0: np.ndarray

    def __post_init__(self):
        A0 = np.atleast_2d(np.array(self.A0, dtype=float))
        S0 = np.atleast_2d(np.array(self.Sigma0, dtype=float))
        if S0.shape != (A0.shape[1], A0.shape[1]):
            raise ValueError("Sigma0 must be d-by-d for an n-by-d center")
        if not np.allclose(S0, S0.T, rtol=1e-10, atol=1e-12):
            raise ValueError("Sigma0 must be symmetric")
        S0 = 0.5 * (S0 + S0.T)
        if np.linalg.eigvalsh(S0)[0] < 0:
            raise ValueError("Sigma0 must be positive semidefinite")
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "Sigma0", S0)

    def dist_sq(self, A) -> float:
        return sigma_norm_sq(np.atleast_2d(A) - self.A0, self.Sigma0)

    def contains(self, A, tol: float = 0.0) -> bool:
        return math.sqrt(max(self.dist_sq(A), 0.0)) <= 1.0 + tol

    @property
    def omega(self) -> float:
        """Smallest eigenvalue of Sigma0, i.e. the largest w with Sigma0 >= w I."""
        return float(np.linalg.eigvalsh(self.Sigma0)[0])


@dataclass(frozen=True)
class SonSgConfig:
    """Estimator constants.

    ``eta = (2/alpha)**c_eta``, ``gamma = (alpha/2)**c_gamma`` and the warmup
    scale ``s = c_s * (sqrt(ln(1/alpha)) + 1)``.  ``T`` is the horizon used
    for the Test sample size; ``None`` means "use the trajectory length".
    """

    alpha: float = 0.5
    c_eta: int = 1
    c_gamma: int = 2
    c_s: float = 2.0
    T: int | None = None
    max_attempts: int | None = None
    projection_tol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if int(self.c_eta) != self.c_eta or self.c_eta < 0:
            raise ValueError("c_eta must be a nonnegative integer")
        if self.c_s <= 0:
            raise ValueError("c_s must be positive")
        if self.max_attempts is not None and self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.projection_tol <= 0:
            raise ValueError("projection_tol must be positive")
        self.test_config(self.T or 2)  # validates c_gamma

    @property
    def eta(self) -> float:
        return (2.0 / self.alpha) ** self.c_eta

    @property
    def gamma(self) -> float:
        return (self.alpha / 2.0) ** self.c_gamma

    @property
    def s(self) -> float:
        return self.c_s * (math.sqrt(math.log(1.0 / self.alpha)) + 1.0)

    def test_config(self, horizon: int | None = None) -> TestConfig:
        return TestConfig(self.alpha, self.c_gamma, int(self.T or horizon or 2))

    def attempts(self, horizon: int | None = None) -> int:
        if self.max_attempts is not None:
            return int(self.max_attempts)
        return self.test_config(horizon).default_max_attempts()

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "c_eta": self.c_eta,
            "c_gamma": self.c_gamma,
            "c_s": self.c_s,
            "T": self.T,
            "max_attempts": self.max_attempts,
            "projection_tol": self.projection_tol,
        }


@dataclass
class RunDiagnostics:
    """Per-iteration trace of one online pass.

    Ground-truth columns (``inner``, ``resid_sq``) are NaN when no A_star
    was supplied.
    """

    eta: float
    t: np.ndarray
    branch: np.ndarray
    g_norm: np.ndarray
    inner: np.ndarray
    resid_sq: np.ndarray
    e2_terms: np.ndarray
    potential_terms: np.ndarray
    lam: np.ndarray
    Sigma0: np.ndarray
    Sigma_N: np.ndarray
    inverse_refreshes: int = 0
    max_inverse_drift: float = 0.0
    max_iterate_dist: float = 0.0

    @property
    def N(self) -> int:
        return self.t.size

    @property
    def E1(self) -> float:
        return float(np.sum(2.0 * self.eta * self.inner - self.resid_sq))

    @property
    def E2(self) -> float:
        return float(np.sum(self.e2_terms))

    def branch_counts(self) -> dict[str, int]:
        return {b.name.lower(): int(np.count_nonzero(self.branch == b)) for b in Branch}

    def time_ordered(self) -> bool:
        return bool(np.all(np.diff(self.t) > 0))


def warmup(P0: PairedDataset, cfg: SonSgConfig) -> ConfidenceEllipsoid:
    """Least squares on the warmup pairs; Sigma0 is their scaled second moment."""
    X, Y = P0.x, P0.y
    m, d = X.shape
    if m < d:
        raise WarmupError(f"insufficient warmup excitation: {m} pairs for dimension {d}")
    G = X.T @ X
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond >= 1e12:
        raise WarmupError(f"insufficient warmup excitation: covariate condition number {cond:.3g}")
    A0 = np.linalg.solve(G, X.T @ Y).T
    return ConfidenceEllipsoid(A0, G / (cfg.s * m))


def test_and_switch_grad(mu, x, y, s: ObservableSet, test_cfg: TestConfig, rng: np.random.Generator,
                         max_attempts: int | None = None) -> tuple[np.ndarray, Branch]:
    """Switching stochastic gradient ``(z - y) x^T``.

    ``z`` is a truncated-Gaussian sample when the survival Test passes and
    rejection sampling succeeds, otherwise ``z = mu``.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    z = mu
    branch = Branch.CENSOR_OBLIVIOUS
    if test_survival(mu, s, test_cfg, rng):
        attempts = test_cfg.default_max_attempts() if max_attempts is None else max_attempts
        out = rejection_sample(mu, s, rng, attempts)
        if out.exhausted:
            branch = Branch.EXHAUSTED
        else:
            z = out.value
            branch = Branch.CENSOR_AWARE
    return np.outer(z - np.asarray(y, dtype=float), np.asarray(x, dtype=float)), branch


def project_ellipsoid(A_tilde, Sigma_i, K: ConfidenceEllipsoid, tol: float = 1e-10,
                      max_doublings: int = 200, max_bisections: int = 2000) -> tuple[np.ndarray, float]:
    """Project ``A_tilde`` onto K in the Sigma_i norm.

    Outside K the minimizer is ``A(lam) = (A_tilde Sigma_i + lam A0 Sigma0)
    (Sigma_i + lam Sigma0)^{-1}`` with ``lam > 0`` the root of
    ``phi(lam) = ||A(lam) - A0||_{Sigma0} - 1``, found by bisection.
    """
    A_tilde = np.atleast_2d(np.asarray(A_tilde, dtype=float))
    if math.sqrt(max(K.dist_sq(A_tilde), 0.0)) <= 1.0:
        return A_tilde, 0.0
    S, S0, A0 = Sigma_i, K.Sigma0, K.A0
    B = A_tilde @ S
    C = A0 @ S0

    def point(lam):
        # A (S + lam S0) = B + lam C; both matrices are symmetric
        return np.linalg.solve(S + lam * S0, (B + lam * C).T).T

    def phi(lam):
        A = point(lam)
        return math.sqrt(max(sigma_norm_sq(A - A0, S0), 0.0)) - 1.0, A

    lo, f_lo = 0.0, math.sqrt(K.dist_sq(A_tilde)) - 1.0
    hi = 1.0
    f_hi, A_hi = phi(hi)
    for _ in range(max_doublings):
        if f_hi < 0:
            break
        if f_hi > f_lo + 1e-12 * (1 + abs(f_lo)):
            raise ProjectionError("projection residual not monotone in the multiplier")
        lo, f_lo = hi, f_hi
        hi *= 2.0
        f_hi, A_hi = phi(hi)
    else:
        raise ProjectionError("projection bracket failure")
    if abs(f_hi) <= tol:
        return A_hi, hi
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        f_mid, A_mid = phi(mid)
        if not (f_hi - 1e-12 <= f_mid <= f_lo + 1e-12):
            raise ProjectionError("projection residual not monotone in the multiplier")
        if abs(f_mid) <= tol:
            return A_mid, mid
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi, A_hi = mid, f_mid, A_mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    # interval collapsed at machine precision; hi is the feasible side
    return A_hi, hi


def son_sg(K: ConfidenceEllipsoid, data: PairedDataset, cfg: SonSgConfig, rng: np.random.Generator,
           ground_truth=None, horizon: int | None = None) -> tuple[np.ndarray, RunDiagnostics]:
    """One time-ordered pass of projected online Newton steps with switching gradients.

    ``horizon`` sets the Test sample size when ``cfg.T`` is unset; it
    defaults to the number of pairs.  ``ground_truth`` is used only to
    fill the diagnostic columns, never by the update itself.
    """
    X, Y, sets = data.x, data.y, data.sets
    N = data.M
    if N == 0:
        raise InsufficientPairsError("insufficient pairs: no data for the online pass", 0)
    n, d = K.A0.shape
    if X.shape[1] != d or Y.shape[1] != n:
        raise ValueError("data dimensions do not match the ellipsoid")
    test_cfg = cfg.test_config(horizon or N)
    max_attempts = cfg.attempts(horizon or N)
    eta = cfg.eta
    A_star = None if ground_truth is None else np.atleast_2d(np.asarray(ground_truth, dtype=float))

    A = K.A0.copy()
    Sigma = K.Sigma0.copy()
    Sigma_inv = np.linalg.inv(Sigma)
    since_refresh = 0
    refreshes = 0
    max_drift = 0.0
    max_dist = K.dist_sq(A)

    branch = np.empty(N, dtype=np.int8)
    g_norm = np.empty(N)
    inner = np.full(N, np.nan)
    resid_sq = np.full(N, np.nan)
    e2 = np.empty(N)
    pot = np.empty(N)
    lam = np.empty(N)
    eye = np.eye(d)

    for i in range(N):
        x, y = X[i], Y[i]
        g, br = test_and_switch_grad(A @ x, x, y, sets[i], test_cfg, rng, max_attempts)
        branch[i] = br
        if A_star is not None:
            D = A - A_star
            inner[i] = float(np.sum(g * D))
            r = D @ x
            resid_sq[i] = float(r @ r)

        Sigma = Sigma + np.outer(x, x)
        u = Sigma_inv @ x
        Sigma_inv = Sigma_inv - np.outer(u, u) / (1.0 + x @ u)
        since_refresh += 1
        drift = float(np.linalg.norm(Sigma_inv @ Sigma - eye))
        max_drift = max(max_drift, drift)
        if since_refresh >= d or drift > 1e-8:
            Sigma_inv = np.linalg.inv(Sigma)
            Sigma_inv = 0.5 * (Sigma_inv + Sigma_inv.T)
            since_refresh = 0
            refreshes += 1

        gS = g @ Sigma_inv
        g_norm[i] = float(np.linalg.norm(g))
        e2[i] = float(np.sum(gS * g))
        pot[i] = float(x @ Sigma_inv @ x)
        A, lam[i] = project_ellipsoid(A - eta * gS, Sigma, K, cfg.projection_tol)
        max_dist = max(max_dist, K.dist_sq(A))

    diag = RunDiagnostics(
        eta=eta,
        t=data.t.copy(),
        branch=branch,
        g_norm=g_norm,
        inner=inner,
        resid_sq=resid_sq,
        e2_terms=e2,
        potential_terms=pot,
        lam=lam,
        Sigma0=K.Sigma0.copy(),
        Sigma_N=Sigma,
        inverse_refreshes=refreshes,
        max_inverse_drift=max_drift,
        max_iterate_dist=math.sqrt(max(max_dist, 0.0)),
    )
    return A, diag


def generic_bound_tolerance(diag: RunDiagnostics) -> float:
    return 1e-6 * (1.0 + abs(diag.E1) + diag.eta ** 2 * diag.E2)


def check_generic_bound(diag: RunDiagnostics, A_hat, A_star, K: ConfidenceEllipsoid,
                        Sigma_N=None) -> float:
    """Slack of ``||A_hat - A*||^2_{Sigma_N} <= 1 - E1 + eta^2 E2``.

    Nonnegative (up to ``generic_bound_tolerance``) on every run whose
    ellipsoid contains A*, whatever the gradients were.
    """
    if not K.contains(A_star):
        raise BoundInapplicableError("bound inapplicable: A_star lies outside the confidence ellipsoid")
    if np.any(np.isnan(diag.inner)):
        raise BoundInapplicableError("bound inapplicable: run was made without ground truth")
    Sigma_N = diag.Sigma_N if Sigma_N is None else Sigma_N
    rhs = 1.0 - diag.E1 + diag.eta ** 2 * diag.E2
    return rhs - sigma_norm_sq(np.atleast_2d(A_hat) - np.atleast_2d(A_star), Sigma_N)


def check_potential(diag: RunDiagnostics, Sigma_N=None, omega: float | None = None) -> bool:
    """sum_i x_i^T Sigma_i^{-1} x_i <= d (ln det(Sigma_N)/d + ln(1/omega))."""
    Sigma_N = diag.Sigma_N if Sigma_N is None else Sigma_N
    if omega is None:
        omega = float(np.linalg.eigvalsh(diag.Sigma0)[0])
    if omega <= 0:
        raise ValueError("omega must be positive")
    if np.linalg.eigvalsh(diag.Sigma0)[0] < omega * (1 - 1e-12):
        raise ValueError("Sigma0 is not >= omega * I")
    d = Sigma_N.shape[0]
    sign, logdet = np.linalg.slogdet(Sigma_N)
    rhs = logdet + d * math.log(1.0 / omega)
    return bool(sign > 0 and float(np.sum(diag.potential_terms)) <= rhs + 1e-8)


def ols(X, Y) -> np.ndarray:
    """Least-squares ``A`` minimizing sum ||y - A x||^2."""
    X = np.atleast_2d(X)
    return np.linalg.lstsq(X, np.atleast_2d(Y), rcond=None)[0].T


@dataclass
class EstimationReport:
    config: dict
    n_pairs: int
    n_warmup: int
    n_online: int
    branch_counts: dict
    warmup_condition: float
    sigma0_min_eig: float
    ellipsoid: ConfidenceEllipsoid
    diagnostics: RunDiagnostics
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        diag = self.diagnostics
        out = {
            "config": self.config,
            "n_pairs": self.n_pairs,
            "n_warmup": self.n_warmup,
            "n_online": self.n_online,
            "branch_counts": self.branch_counts,
            "warmup_condition": self.warmup_condition,
            "sigma0_min_eig": self.sigma0_min_eig,
            "A0": self.ellipsoid.A0.tolist(),
            "eta": diag.eta,
            "E2": diag.E2,
            "inverse_refreshes": diag.inverse_refreshes,
            "max_inverse_drift": diag.max_inverse_drift,
            "max_projection_multiplier": float(np.max(diag.lam)) if diag.N else 0.0,
            "projections_active": int(np.count_nonzero(diag.lam > 0)),
            "max_iterate_dist": diag.max_iterate_dist,
        }
        if not np.any(np.isnan(diag.inner)):
            out["E1"] = diag.E1
        out["checks"] = self.checks
        return out


def learn_censored_lds(traj: CensoredTrajectory, cfg: SonSgConfig, rng: np.random.Generator | int,
                       ground_truth=None) -> tuple[np.ndarray, EstimationReport]:
    """Pairs -> split -> warmup ellipsoid -> online pass.

    Accepts a full trajectory but only ever reads its censored view.
    When ``ground_truth`` is given, the report also carries the generic
    bound slack and the potential check.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(int(rng))
    view = traj if traj.censored else traj.censored_view()
    P = extract_pairs(view)
    d = view.d
    if P.M < max(2, 2 * d):
        raise InsufficientPairsError(f"insufficient pairs: M={P.M}, need at least {max(2, 2 * d)}", P.M)
    P0, P1 = split_pairs(P)
    K = warmup(P0, cfg)
    A_hat, diag = son_sg(K, P1, cfg, rng, ground_truth=ground_truth, horizon=view.T)
    checks = {
        "potential": check_potential(diag),
        "iterates_in_K": diag.max_iterate_dist <= 1.0 + 1e-6,
        "time_ordered": diag.time_ordered(),
    }
    if ground_truth is not None:
        inside = K.contains(ground_truth)
        checks["A_star_in_K"] = inside
        if inside:
            slack = check_generic_bound(diag, A_hat, ground_truth, K)
            checks["generic_bound_slack"] = slack
            checks["generic_bound"] = slack >= -generic_bound_tolerance(diag)
    report = EstimationReport(
        config=cfg.to_dict(),
        n_pairs=P.M,
        n_warmup=P0.M,
        n_online=P1.M,
        branch_counts=diag.branch_counts(),
        warmup_condition=float(np.linalg.cond(P0.x.T @ P0.x)),
        sigma0_min_eig=K.omega,
        ellipsoid=K,
        diagnostics=diag,
        checks=checks,
    )
    return A_hat, report

"""Truncated-Gaussian utilities: the survival Test, rejection sampling,
Monte-Carlo moment oracles and exact one-dimensional formulas.

All samplers take a ``numpy.random.Generator``.  Normal variates come from
``Generator.standard_normal`` (ziggurat on PCG64 by default), so a seed
fixes the whole draw sequence.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .sets import ObservableSet

logger = logging.getLogger(__name__)

K_CAP = 1_000_000

__all__ = [
    "TestConfig",
    "SampleOutcome",
    "MCMoments",
    "MassTooSmallError",
    "survival_fraction",
    "test_survival",
    "rejection_sample",
    "mc_truncated_moments",
    "truncnorm_1d_exact",
    "truncnorm_1d_cdf",
    "truncnorm_1d_union_exact",
    "survival_lower_bound",
    "truncated_mean_radius",
]


class MassTooSmallError(RuntimeError):
    pass


@dataclass(frozen=True)
class TestConfig:
    """Parameters of the survival Test.

    gamma = (alpha/2)**c_gamma and k = ceil((4/gamma) * ln T), capped at
    ``K_CAP`` with a warning.
    """

    __test__ = False  # not a pytest class

    alpha: float
    c_gamma: int
    horizon: int

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.c_gamma) != self.c_gamma or self.c_gamma < 1:
            # c_gamma = 0 would give gamma = 1 and a Test that can never pass
            raise ValueError(f"c_gamma must be a positive integer, got {self.c_gamma}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon}")
        object.__setattr__(self, "c_gamma", int(self.c_gamma))
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def gamma(self) -> float:
        return (self.alpha / 2.0) ** self.c_gamma

    @property
    def k_uncapped(self) -> int:
        return max(1, math.ceil(4.0 / self.gamma * math.log(self.horizon)))

    @property
    def k(self) -> int:
        k = self.k_uncapped
        if k > K_CAP:
            warnings.warn(
                f"Test sample size {k} capped at {K_CAP}; survival Test is less "
                "conservative than the theory assumes",
                RuntimeWarning,
                stacklevel=2,
            )
            return K_CAP
        return k

    def default_max_attempts(self) -> int:
        return max(1, math.ceil(10.0 / self.gamma * math.log(max(self.horizon, 2))))


@dataclass(frozen=True)
class SampleOutcome:
    value: np.ndarray | None
    attempts: int

    @property
    def exhausted(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class MCMoments:
    mean: np.ndarray
    covariance: np.ndarray
    acceptance_rate: float
    ci_halfwidth: np.ndarray
    accepted: int
    attempted: int


def _as_mean(mu, s: ObservableSet) -> np.ndarray:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mu.shape != (s.dim,):
        raise ValueError(f"mean has shape {mu.shape}, set has dimension {s.dim}")
    return mu


def survival_fraction(mu, s: ObservableSet, k: int, rng: np.random.Generator) -> float:
    """Fraction of k draws from N(mu, I) that land in ``s``."""
    mu = _as_mean(mu, s)
    xi = mu + rng.standard_normal((k, mu.size))
    return float(np.count_nonzero(s.contains_many(xi))) / k


def test_survival(mu, s: ObservableSet, cfg: TestConfig, rng: np.random.Generator) -> bool:
    """Return True when the empirical survival of N(mu, I) in ``s`` is at least 2*gamma.

    Consumes exactly ``cfg.k * len(mu)`` standard normal variates.
    """
    return survival_fraction(mu, s, cfg.k, rng) >= 2.0 * cfg.gamma


test_survival.__test__ = False  # keep pytest from collecting the import


def rejection_sample(
    mu, s: ObservableSet, rng: np.random.Generator, max_attempts: int, chunk: int = 64
) -> SampleOutcome:
    """Draw from N(mu, I) restricted to ``s`` by rejection.

    Proposals are drawn in blocks; ``attempts`` counts proposals up to and
    including the first accepted one.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    mu = _as_mean(mu, s)
    done = 0
    block = max(1, min(chunk, max_attempts))
    while done < max_attempts:
        m = min(block, max_attempts - done)
        z = mu + rng.standard_normal((m, mu.size))
        hits = np.flatnonzero(s.contains_many(z))
        if hits.size:
            j = int(hits[0])
            return SampleOutcome(z[j].copy(), done + j + 1)
        done += m
        block *= 2
    return SampleOutcome(None, max_attempts)


def mc_truncated_moments(
    mu, s: ObservableSet, n_samples: int, rng: np.random.Generator, batch: int | None = None
) -> MCMoments:
    """Monte-Carlo mean and covariance of N(mu, I) conditioned on ``s``.

    Draws proposals in batches of ``n_samples`` until ``n_samples`` are
    accepted or ``100 * n_samples`` proposals were spent.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    mu = _as_mean(mu, s)
    batch = n_samples if batch is None else batch
    budget = 100 * n_samples
    kept = []
    n_acc = 0
    attempted = 0
    while n_acc < n_samples and attempted < budget:
        m = min(batch, budget - attempted)
        z = mu + rng.standard_normal((m, mu.size))
        z = z[s.contains_many(z)]
        kept.append(z)
        n_acc += z.shape[0]
        attempted += m
    if n_acc < 100:
        raise MassTooSmallError(
            f"mass too small for MC oracle: {n_acc} acceptances in {attempted} draws"
        )
    Z = np.concatenate(kept)
    mean = Z.mean(axis=0)
    cov = np.atleast_2d(np.cov(Z, rowvar=False))
    std = np.sqrt(np.diag(cov))
    return MCMoments(
        mean=mean,
        covariance=cov,
        acceptance_rate=n_acc / attempted,
        ci_halfwidth=3.0 * std / math.sqrt(n_acc),
        accepted=n_acc,
        attempted=attempted,
    )


def _log_mass(alpha: float, beta: float) -> float:
    """log(Phi(beta) - Phi(alpha)) for alpha < beta, without cancellation."""
    if alpha > 0:
        # mirror into the lower tail where log_ndtr is accurate
        alpha, beta = -beta, -alpha
    la = special.log_ndtr(alpha)
    lb = special.log_ndtr(beta)
    if la == -np.inf:
        return float(lb)
    return float(lb + np.log1p(-np.exp(la - lb)))


def _log_pdf(z: float) -> float:
    return -0.5 * z * z - 0.5 * math.log(2.0 * math.pi)


def truncnorm_1d_exact(mu: float, a: float, b: float) -> tuple[float, float, float]:
    """Mass, mean and variance of N(mu, 1) restricted to [a, b]."""
    if not a < b:
        raise ValueError("need a < b")
    alpha, beta = a - mu, b - mu
    log_z = _log_mass(alpha, beta)
    if log_z < math.log(1e-300):
        raise MassTooSmallError("numerically empty interval")
    # phi(alpha)/Z and phi(beta)/Z via logs; at infinite ends both phi and z*phi vanish
    ra = math.exp(_log_pdf(alpha) - log_z) if math.isfinite(alpha) else 0.0
    rb = math.exp(_log_pdf(beta) - log_z) if math.isfinite(beta) else 0.0
    za = alpha * ra if math.isfinite(alpha) else 0.0
    zb = beta * rb if math.isfinite(beta) else 0.0
    shift = ra - rb
    var = 1.0 + za - zb - shift * shift
    return math.exp(log_z), mu + shift, max(var, 0.0)


def truncnorm_1d_cdf(x, mu: float, a: float, b: float):
    """CDF of N(mu, 1) restricted to [a, b]."""
    x = np.clip(np.asarray(x, dtype=float), a, b)
    lo = special.ndtr(a - mu)
    num = special.ndtr(x - mu) - lo
    den = special.ndtr(b - mu) - lo
    return num / den


def truncnorm_1d_union_exact(mu: float, intervals) -> tuple[float, float, float]:
    """Mass, mean and variance of N(mu, 1) restricted to a union of disjoint intervals."""
    pieces = [truncnorm_1d_exact(mu, a, b) for a, b in intervals]
    mass = sum(p[0] for p in pieces)
    if mass <= 0:
        raise MassTooSmallError("numerically empty interval")
    w = [p[0] / mass for p in pieces]
    mean = sum(wi * p[1] for wi, p in zip(w, pieces))
    second = sum(wi * (p[2] + (p[1] - mean) ** 2) for wi, p in zip(w, pieces))
    return mass, mean, second


def survival_lower_bound(alpha: float, r: float) -> float:
    """Lower bound on N(mu, I; S) given N(mu*, I; S) >= alpha and ||mu - mu*|| <= r."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if r < 0:
        raise ValueError("r must be nonnegative")
    return alpha / 2.0 * math.exp(-r * r / 2.0 - r * math.sqrt(2.0 * math.log(1.0 / alpha)))


def truncated_mean_radius(gamma: float) -> float:
    """sqrt(2 ln(1/gamma)) + 1: distance bound between a truncated mean and mu."""
    return math.sqrt(2.0 * math.log(1.0 / gamma)) + 1.0

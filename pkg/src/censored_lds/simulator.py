"""Censored linear-dynamics simulation, pair extraction and system metrics.

The model is ``x_{t+1} = A x_t + w_t`` with standard normal ``w_t``; the
state ``x_t`` is observed iff it lies in ``S_t``, and ``S_{t+1}`` is chosen
by a :class:`~censored_lds.sets.SetSchedule` from ``(t, x_t)`` alone.
Time indices are 1-based in the public API (``t = 1..T+1``), matching the
row numbering of trajectory files.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .sets import ObservableSet, SetSchedule

logger = logging.getLogger(__name__)

__all__ = [
    "SystemSpec",
    "CensoredTrajectory",
    "PairedDataset",
    "EmpiricalConstants",
    "InsufficientPairsError",
    "StateDivergedError",
    "scaled_identity",
    "scaled_rotation",
    "random_diagonalizable",
    "simulate",
    "extract_pairs",
    "split_pairs",
    "gramian",
    "error_gramian_norm",
    "measure_constants",
    "spectral_stats",
    "state_norm_bound",
]


class InsufficientPairsError(ValueError):
    def __init__(self, message: str, n_pairs: int):
        super().__init__(message)
        self.n_pairs = n_pairs


class StateDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SystemSpec:
    A_star: np.ndarray
    x0: np.ndarray | None = None
    stable: bool = True

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A_star, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A_star must be square, got shape {A.shape}")
        x0 = np.zeros(A.shape[0]) if self.x0 is None else np.array(self.x0, dtype=float).ravel()
        if x0.shape != (A.shape[0],):
            raise ValueError("x0 dimension does not match A_star")
        A.setflags(write=False)
        x0.setflags(write=False)
        object.__setattr__(self, "A_star", A)
        object.__setattr__(self, "x0", x0)
        if self.stable:
            rho = float(np.max(np.abs(np.linalg.eigvals(A))))
            if rho >= 1:
                warnings.warn(f"A_star has spectral radius {rho:.4g} >= 1", RuntimeWarning, stacklevel=2)

    @property
    def d(self) -> int:
        return self.A_star.shape[0]


def scaled_identity(d: int, rho: float) -> np.ndarray:
    return rho * np.eye(d)


def scaled_rotation(rho: float, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return rho * np.array([[c, -s], [s, c]])


def random_diagonalizable(d: int, rho: float, rng: np.random.Generator, cond_max: float = 10.0) -> np.ndarray:
    """Random real ``U D U^{-1}`` with max |eigenvalue| exactly ``rho``."""
    for _ in range(1000):
        U = rng.standard_normal((d, d))
        if np.linalg.cond(U) <= cond_max:
            break
    else:  # pragma: no cover - astronomically unlikely for small d
        U = np.eye(d)
    eig = rng.uniform(-1.0, 1.0, size=d)
    eig *= rho / np.max(np.abs(eig))
    return U @ np.diag(eig) @ np.linalg.inv(U)


@dataclass
class CensoredTrajectory:
    """States ``x_1..x_{T+1}`` with observation flags and per-step sets.

    Arrays are indexed from 0, so ``states[t - 1]`` is ``x_t``.  In a
    censored view the unobserved rows of ``states`` are NaN.
    """

    states: np.ndarray
    observed: np.ndarray
    sets: list
    seed: int | None = None
    censored: bool = False

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.observed = np.asarray(self.observed, dtype=bool)
        n = self.states.shape[0]
        if self.observed.shape != (n,) or len(self.sets) != n:
            raise ValueError("states, observed and sets must have one entry per step")
        if n < 2:
            raise ValueError("trajectory needs at least two states")

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1

    @property
    def d(self) -> int:
        return self.states.shape[1]

    def censored_view(self) -> "CensoredTrajectory":
        states = self.states.copy()
        states[~self.observed] = np.nan
        return CensoredTrajectory(states, self.observed.copy(), list(self.sets), self.seed, censored=True)

    def beta_hat(self) -> float:
        """|O| / T over t = 1..T."""
        return float(np.count_nonzero(self.observed[: self.T])) / self.T


@dataclass
class PairedDataset:
    """Consecutive observed pairs ``(x_t, x_{t+1})`` with ``S_{t+1}``, in time order."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    sets: list = field(default_factory=list)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=int).ravel()
        M = self.t.size
        x = np.asarray(self.x, dtype=float)
        d = x.shape[1] if x.ndim == 2 else 0
        self.x = x.reshape(M, d)
        self.y = np.asarray(self.y, dtype=float).reshape(M, -1) if M else np.zeros((0, d))
        if len(self.sets) != M or self.y.shape[0] != M:
            raise ValueError("pair arrays have inconsistent lengths")
        if M > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("pairs must be strictly increasing in t")

    @property
    def M(self) -> int:
        return self.t.size

    def __len__(self) -> int:
        return self.M

    def __getitem__(self, idx: slice) -> "PairedDataset":
        return PairedDataset(self.t[idx], self.x[idx], self.y[idx], self.sets[idx])


@dataclass
class EmpiricalConstants:
    beta_hat: float
    alpha_hat: float
    survival: np.ndarray
    obs_t: np.ndarray
    mc_samples: int
    B_counts: dict

    def B_count(self, a: float) -> int:
        return int(np.count_nonzero(self.survival < a))


def simulate(spec: SystemSpec, schedule: SetSchedule, T: int, rng: np.random.Generator | int,
             seed: int | None = None) -> CensoredTrajectory:
    """Run the censored system for ``T`` steps, producing ``x_1..x_{T+1}``.

    ``rng`` may be a Generator or an integer seed.  All ``(T + 1) * d`` noise
    variates are drawn up front, so the trajectory is a pure function of
    the seed.
    """
    if T < 2:
        raise ValueError("T must be >= 2")
    if schedule.dim != spec.d:
        raise ValueError(f"schedule dimension {schedule.dim} != system dimension {spec.d}")
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    A = spec.A_star
    d = spec.d
    w = rng.standard_normal((T + 1, d))
    states = np.empty((T + 1, d))
    sets: list[ObservableSet] = [schedule.initial]
    x = A @ spec.x0 + w[0]
    states[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, T + 1):
            # S_{t+1} is fixed from (t, x_t) before x_{t+1} is formed
            sets.append(schedule.rule(t, x))
            x = A @ x + w[t]
            states[t] = x
    if not np.all(np.isfinite(states)):
        raise StateDivergedError("state diverged")
    observed = np.array([s.contains(xt) for s, xt in zip(sets, states)], dtype=bool)
    return CensoredTrajectory(states, observed, sets, seed)


def extract_pairs(traj: CensoredTrajectory) -> PairedDataset:
    """All ``t`` in ``1..T`` with ``t`` and ``t+1`` observed, in time order."""
    obs = traj.observed
    idx = np.flatnonzero(obs[:-1] & obs[1:])
    return PairedDataset(
        t=idx + 1,
        x=traj.states[idx],
        y=traj.states[idx + 1],
        sets=[traj.sets[i + 1] for i in idx],
    )


def split_pairs(P: PairedDataset) -> tuple[PairedDataset, PairedDataset]:
    """First floor(M/2) pairs for warmup, the rest for the online pass."""
    if P.M < 2:
        raise InsufficientPairsError(f"insufficient pairs: M={P.M}", P.M)
    h = P.M // 2
    return P[:h], P[h:]


def gramian(A, T: int) -> np.ndarray:
    """sum_{s<T} A^s (A^s)^T via Gamma_{t+1} = I + A Gamma_t A^T.

    Stops early once an increment is below 1e-12 relative to the running sum.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    G = np.eye(d)
    for _ in range(T - 1):
        with np.errstate(over="ignore", invalid="ignore"):
            G_next = np.eye(d) + A @ G @ A.T
        if not np.all(np.isfinite(G_next)):
            raise OverflowError("Gramian overflowed; A is likely unstable")
        if np.linalg.norm(G_next - G) < 1e-12 * np.linalg.norm(G_next):
            return 0.5 * (G_next + G_next.T)
        G = G_next
    return 0.5 * (G + G.T)


def error_gramian_norm(A_hat, A_star, Gamma) -> float:
    """sqrt(tr((A_hat - A_star)^T (A_hat - A_star) Gamma))."""
    E = np.atleast_2d(np.asarray(A_hat, dtype=float) - np.asarray(A_star, dtype=float))
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    return math.sqrt(max(float(np.trace(E @ Gamma @ E.T)), 0.0))


def measure_constants(
    traj: CensoredTrajectory,
    spec: SystemSpec,
    alpha_grid: Sequence[float] = (0.01, 0.05, 0.1),
    mc_samples: int = 1000,
    rng: np.random.Generator | None = None,
) -> EmpiricalConstants:
    """Estimate beta, alpha and |B(a)| on a full (uncensored) trajectory.

    For each observed ``t <= T``, the survival N(A x_t, I; S_{t+1}) is
    estimated from ``mc_samples`` draws.  Steps with no hits report half the
    resolution floor (``0.5 / mc_samples``) rather than zero.
    """
    if mc_samples < 1000:
        raise ValueError("mc_samples must be >= 1000")
    if traj.censored:
        raise ValueError("constants need the full trajectory, not a censored view")
    rng = np.random.default_rng() if rng is None else rng
    T = traj.T
    obs_t = np.flatnonzero(traj.observed[:T])
    A = spec.A_star
    surv = np.empty(obs_t.size)
    mus = traj.states[obs_t] @ A.T
    # group steps sharing one set object so static schedules vectorize
    groups: dict[int, list[int]] = {}
    for j, i in enumerate(obs_t):
        groups.setdefault(id(traj.sets[i + 1]), []).append(j)
    chunk = max(1, 2_000_000 // (mc_samples * traj.d))
    for members in groups.values():
        s = traj.sets[obs_t[members[0]] + 1]
        for lo in range(0, len(members), chunk):
            js = members[lo:lo + chunk]
            z = mus[js][:, None, :] + rng.standard_normal((len(js), mc_samples, traj.d))
            hits = s.contains_many(z.reshape(-1, traj.d)).reshape(len(js), mc_samples)
            surv[js] = hits.mean(axis=1)
    surv[surv == 0] = 0.5 / mc_samples
    alpha_hat = float(surv.min()) if surv.size else float("nan")
    counts = {float(a): int(np.count_nonzero(surv < a)) for a in alpha_grid}
    return EmpiricalConstants(traj.beta_hat(), alpha_hat, surv, obs_t + 1, mc_samples, counts)


def spectral_stats(A) -> tuple[float, float]:
    """Spectral radius and condition number of the eigenvector matrix.

    Non-diagonalizable (numerically defective) inputs report cond = inf.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    try:
        vals, U = np.linalg.eig(A)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    rho = float(np.max(np.abs(vals)))
    sv = np.linalg.svd(U, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        return rho, math.inf
    return rho, float(sv[0] / sv[-1])


def state_norm_bound(A) -> float:
    """d * cond(U)^2 / (1 - rho): scale bound on E||x_t||^2 for stable A."""
    rho, cond = spectral_stats(A)
    d = np.atleast_2d(A).shape[0]
    if rho >= 1:
        return math.inf
    return d * cond ** 2 / (1.0 - rho)

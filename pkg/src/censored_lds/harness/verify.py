"""Property and acceptance suites with fixed seeds.

Each suite returns a :class:`SuiteResult` carrying the measured quantities
and a verdict against fixed thresholds.  ``FAST_SUITES`` are what
``censored-lds verify`` runs by default; the three grid experiments
(scaling, bias separation, uncensored parity) take minutes and run with
``--all``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from ..estimator import (
    BoundInapplicableError,
    ConfidenceEllipsoid,
    SonSgConfig,
    check_generic_bound,
    check_potential,
    generic_bound_tolerance,
    learn_censored_lds,
    ols,
    project_ellipsoid,
    sigma_norm_sq,
)
from ..sets import (
    AxisBox,
    FullSpace,
    HalfSpace,
    TwoSlab,
    UnionOfHalfSpaces,
    make_chasing_schedule,
    make_static_schedule,
)
from ..simulator import (
    InsufficientPairsError,
    SystemSpec,
    error_gramian_norm,
    extract_pairs,
    gramian,
    measure_constants,
    random_diagonalizable,
    scaled_rotation,
    simulate,
)
from ..truncated import (
    mc_truncated_moments,
    rejection_sample,
    survival_fraction,
    survival_lower_bound,
    truncated_mean_radius,
    truncnorm_1d_cdf,
    truncnorm_1d_union_exact,
)
from .config import ExperimentConfig
from .experiment import run_experiment

__all__ = ["SuiteResult", "SUITES", "FAST_SUITES", "run_suites", "projection_oracle"]


@dataclass
class SuiteResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


# ---------------------------------------------------------------------------
# grid experiments

SCALING_ROTATION = 0.3


def scaling_config(seeds=range(20), horizons=(4000, 16000, 64000), parallelism=1) -> ExperimentConfig:
    return ExperimentConfig(
        system={"generator": "scaled_rotation", "rho": 0.9, "theta": SCALING_ROTATION},
        schedule={"type": "static", "set": {"type": "box", "lower": [-2.0, -2.0], "upper": [2.0, 2.0]}},
        horizons=tuple(horizons),
        seeds=tuple(seeds),
        estimator=SonSgConfig(alpha=0.2, c_eta=1, c_gamma=2, c_s=2.0),
        baselines={"ols_pairs": True, "oracle_ols": True},
        constants={"enabled": False},
        parallelism=parallelism,
        name="box-censored rotation",
    )


def suite_scaling(seeds=range(20), parallelism=1) -> SuiteResult:
    """Median error ratio per 4x horizon step in [0.35, 0.75]; censoring within the tuned band."""
    t0 = time.time()
    cfg = scaling_config(seeds, parallelism=parallelism)
    report = run_experiment(cfg)
    spec = cfg.build_system()
    sched = cfg.build_schedule()
    alpha_hats, beta_hats = [], []
    for T in cfg.horizons:
        # constants on the first seed of each horizon; alpha_hat is a minimum, so the longest run is the binding one
        traj = simulate(spec, sched, T, cfg.seeds[0])
        c = measure_constants(traj, spec, (0.05,), 1000, np.random.default_rng([cfg.seeds[0], 2]))
        alpha_hats.append(c.alpha_hat)
        beta_hats.append(c.beta_hat)
    beta_all = [c["beta_hat"] for c in report.cells if c.get("ok")]
    ratios = report.ratios()
    elapsed = time.time() - t0
    passed = (
        not report.failed
        and len(ratios) == len(cfg.horizons) - 1
        and all(0.35 <= r <= 0.75 for r in ratios)
        and all(0.2 <= b <= 0.8 for b in beta_all)
        and min(alpha_hats) >= 0.05
        and elapsed < 300
    )
    medians = [a["son_sg"]["median"] for a in report.aggregates]
    return SuiteResult(
        "scaling", passed,
        {"ratios": ratios, "medians": medians, "alpha_hat": alpha_hats, "beta_hat_range": [min(beta_all), max(beta_all)],
         "seconds": elapsed, "failed_cells": len(report.failed), "report": report},
        f"median ratios {', '.join(f'{r:.3f}' for r in ratios)} (want [0.35, 0.75]); "
        f"alpha_hat min {min(alpha_hats):.3f}; beta_hat in [{min(beta_all):.3f}, {max(beta_all):.3f}]; "
        f"{elapsed:.0f}s (want < 300s)",
    )


def suite_bias_separation(seeds=range(30), T=100_000) -> SuiteResult:
    """OLS on observed pairs is biased by more than 0.03; SON-SG median error is under half that bias."""
    t0 = time.time()
    a_star = 0.5
    spec = SystemSpec([[a_star]])
    sched = make_static_schedule(HalfSpace([1.0], 0.5))
    cfg = SonSgConfig(alpha=0.4, c_eta=1, c_gamma=2, c_s=2.0)
    ols_est, son_err = [], []
    for s in seeds:
        traj = simulate(spec, sched, T, s)
        P = extract_pairs(traj)
        ols_est.append(float(ols(P.x, P.y)[0, 0]))
        A_hat, _ = learn_censored_lds(traj, cfg, np.random.default_rng([s, 1]))
        son_err.append(abs(float(A_hat[0, 0]) - a_star))
    bias = float(np.mean(ols_est)) - a_star
    med = float(np.median(son_err))
    passed = abs(bias) > 0.03 and med < abs(bias) / 2
    return SuiteResult(
        "bias_separation", passed, {"ols_bias": bias, "son_sg_median_abs_error": med},
        f"OLS bias {bias:+.4f} (want |.| > 0.03); SON-SG median |err| {med:.4f} (want < {abs(bias) / 2:.4f})",
        time.time() - t0,
    )


def suite_uncensored_parity(seeds=range(20), T=20_000) -> SuiteResult:
    """Without censoring, SON-SG median error is within 3x of full-data OLS."""
    t0 = time.time()
    A = scaled_rotation(0.9, SCALING_ROTATION)
    spec = SystemSpec(A)
    sched = make_static_schedule(FullSpace(2))
    G = gramian(A, T)
    cfg = SonSgConfig(alpha=0.9, c_eta=1, c_gamma=2, c_s=2.0)
    son, full = [], []
    for s in seeds:
        traj = simulate(spec, sched, T, s)
        A_hat, _ = learn_censored_lds(traj, cfg, np.random.default_rng([s, 1]))
        son.append(error_gramian_norm(A_hat, A, G))
        full.append(error_gramian_norm(ols(traj.states[:-1], traj.states[1:]), A, G))
    ratio = float(np.median(son) / np.median(full))
    return SuiteResult(
        "uncensored_parity", ratio <= 3.0,
        {"son_sg_median": float(np.median(son)), "ols_median": float(np.median(full)), "ratio": ratio},
        f"median error ratio SON-SG / full-data OLS {ratio:.3f} (want <= 3)",
        time.time() - t0,
    )


# ---------------------------------------------------------------------------
# per-run invariants on randomized censored runs


def _random_schedule(kind: int, d: int, rng: np.random.Generator, scale: float):
    if kind == 0:
        n = rng.standard_normal(d)
        n /= np.linalg.norm(n)
        return make_static_schedule(HalfSpace(n, rng.uniform(-1.0, 0.3) * scale))
    if kind == 1:
        half = rng.uniform(1.0, 2.0, size=d) * scale
        return make_static_schedule(AxisBox(-half, half))
    if kind == 2:
        return make_chasing_schedule(rng.uniform(-2.5, -1.0, size=d) * scale)
    if kind == 3:
        return make_static_schedule(TwoSlab(d, int(rng.integers(d)), rng.uniform(0.2, 1.0) * scale))
    normals = rng.standard_normal((2, d))
    return make_static_schedule(UnionOfHalfSpaces(normals, rng.uniform(0.0, 1.0, size=2) * scale))


@lru_cache(maxsize=4)
def randomized_runs(n_runs: int = 100, seed: int = 2024) -> tuple:
    """Censored runs with A* inside the warmup ellipsoid.

    Returns (records, skipped) where each record holds the slack, its
    tolerance and the potential verdict.
    """
    rng = np.random.default_rng(seed)
    records = []
    skipped = 0
    i = 0
    while len(records) < n_runs:
        i += 1
        d = (1, 2, 3)[i % 3]
        A = random_diagonalizable(d, float(rng.uniform(0.3, 0.9)), rng, cond_max=5.0)
        scale = math.sqrt(float(np.trace(gramian(A, 500))) / d)
        sched = _random_schedule(int(rng.integers(5)), d, rng, scale)
        cfg = SonSgConfig(
            alpha=float(rng.choice([0.2, 0.3, 0.5])),
            c_eta=int(rng.integers(0, 3)),
            c_gamma=int(rng.integers(1, 3)),
            c_s=float(rng.choice([1.0, 2.0, 4.0])),
            max_attempts=int(rng.choice([2, 1000])),
        )
        T = int(rng.integers(400, 1500))
        traj = simulate(SystemSpec(A), sched, T, int(rng.integers(2**31)))
        try:
            A_hat, rep = learn_censored_lds(traj, cfg, np.random.default_rng([seed, i]), ground_truth=A)
        except (InsufficientPairsError, ValueError):
            skipped += 1
            continue
        K = rep.ellipsoid
        diag = rep.diagnostics
        try:
            slack = check_generic_bound(diag, A_hat, A, K)
        except BoundInapplicableError:
            skipped += 1
            continue
        records.append({
            "d": d,
            "N": diag.N,
            "slack": slack,
            "tol": generic_bound_tolerance(diag),
            "potential": check_potential(diag, omega=K.omega),
            "branches": diag.branch_counts(),
        })
    return tuple(records), skipped


def suite_generic_bound(n_runs: int = 100) -> SuiteResult:
    t0 = time.time()
    records, skipped = randomized_runs(n_runs)
    bad = [r for r in records if r["slack"] < -r["tol"]]
    worst = min(r["slack"] / r["tol"] for r in records)
    branches = {k: sum(r["branches"][k] for r in records) for k in records[0]["branches"]}
    return SuiteResult(
        "generic_bound", not bad,
        {"violations": len(bad), "worst_slack_over_tol": worst, "skipped": skipped, "branches": branches},
        f"{len(bad)} violations in {len(records)} runs (skipped {skipped} with A* outside K or too few pairs); "
        f"branches {branches}",
        time.time() - t0,
    )


def suite_potential(n_runs: int = 100) -> SuiteResult:
    t0 = time.time()
    records, skipped = randomized_runs(n_runs)
    bad = sum(1 for r in records if not r["potential"])
    return SuiteResult("potential", bad == 0, {"violations": bad},
                       f"{bad} violations in {len(records)} runs", time.time() - t0)


# ---------------------------------------------------------------------------
# truncated-Gaussian suites


def suite_sampler_ks(n_cases: int = 10, n_samples: int = 10_000, seed: int = 7) -> SuiteResult:
    t0 = time.time()
    rng = np.random.default_rng(seed)
    worst = 0.0
    cases = []
    while len(cases) < n_cases:
        mu = float(rng.uniform(-2, 2))
        a = float(rng.uniform(-2.5, 1.5))
        b = math.inf if rng.random() < 0.3 else a + float(rng.uniform(0.3, 3.0))
        lower = -math.inf if rng.random() < 0.2 and math.isfinite(b) else a
        mass = stats.norm.cdf(b - mu) - stats.norm.cdf(lower - mu)
        if mass < 0.05:
            continue
        box = AxisBox([lower], [b])
        draws = np.empty(n_samples)
        for j in range(n_samples):
            out = rejection_sample([mu], box, rng, 10_000)
            draws[j] = out.value[0]
        ks = stats.kstest(draws, lambda x: truncnorm_1d_cdf(x, mu, lower, b)).statistic
        worst = max(worst, ks)
        cases.append((mu, lower, b, float(ks)))
    return SuiteResult("sampler_ks", worst < 0.02, {"cases": cases, "max_ks": worst},
                       f"max KS statistic {worst:.4f} over {n_cases} cases (want < 0.02)", time.time() - t0)


def suite_truncated_mean(n_cases: int = 200, gamma: float = 1 / 16, seed: int = 11, n_samples: int = 20_000) -> SuiteResult:
    """Truncated mean within sqrt(2 ln(1/gamma)) + 1 of mu whenever the mass is >= gamma."""
    t0 = time.time()
    rng = np.random.default_rng(seed)
    bound = truncated_mean_radius(gamma)
    worst = -math.inf
    bad = 0
    n = 0
    while n < n_cases:
        d = int(rng.integers(1, 6))
        mu = rng.normal(0, 2, size=d)
        normal = rng.standard_normal(d)
        normal /= np.linalg.norm(normal)
        S = HalfSpace(normal, float(normal @ mu + rng.uniform(-2.0, 2.5)))
        m = mc_truncated_moments(mu, S, n_samples, rng)
        if m.acceptance_rate < gamma:
            continue
        n += 1
        dist = float(np.linalg.norm(m.mean - mu))
        ci = float(np.linalg.norm(m.ci_halfwidth))
        worst = max(worst, dist - bound)
        bad += dist > bound + ci
    return SuiteResult("truncated_mean", bad == 0, {"violations": bad, "max_excess": worst, "bound": bound},
                       f"{bad} violations in {n_cases} cases; max ||nu - mu|| - bound = {worst:.3f}",
                       time.time() - t0)


def suite_survival_bound(n_cases: int = 200, alpha: float = 0.1, seed: int = 13, n_samples: int = 100_000) -> SuiteResult:
    """Survival at a shifted mean stays above (alpha/2) exp(-r^2/2 - r sqrt(2 ln(1/alpha)))."""
    t0 = time.time()
    rng = np.random.default_rng(seed)
    bad = 0
    n = 0
    min_ratio = math.inf
    while n < n_cases:
        d = int(rng.integers(1, 6))
        mu_star = rng.normal(0, 1, size=d)
        normal = rng.standard_normal(d)
        normal /= np.linalg.norm(normal)
        S = HalfSpace(normal, float(normal @ mu_star + rng.uniform(-1.5, 1.5)))
        if survival_fraction(mu_star, S, n_samples, rng) < alpha:
            continue
        direction = rng.standard_normal(d)
        r = float(rng.uniform(0.0, 2.5))
        mu = mu_star + r * direction / np.linalg.norm(direction)
        p = survival_fraction(mu, S, n_samples, rng)
        ci = 3.0 * math.sqrt(max(p * (1 - p), 1.0 / n_samples) / n_samples)
        lb = survival_lower_bound(alpha, r)
        n += 1
        bad += p < lb - ci
        min_ratio = min(min_ratio, p / lb)
    return SuiteResult("survival_bound", bad == 0, {"violations": bad, "min_ratio": min_ratio},
                       f"{bad} violations in {n_cases} cases; min measured/bound = {min_ratio:.3f}",
                       time.time() - t0)


def two_slab_axis_moments(d: int) -> tuple[float, float]:
    """Exact survival mass and axis variance of N(mu, I) on TwoSlab(gap=sqrt(d)) with mu at the gap midpoint."""
    g = math.sqrt(d)
    mass, _, var = truncnorm_1d_union_exact(g / 2, [(-math.inf, 0.0), (g, math.inf)])
    return mass, var


def suite_two_slab() -> SuiteResult:
    t0 = time.time()
    mass4, var4 = two_slab_axis_moments(4)
    mass64, var64 = two_slab_axis_moments(64)
    ratio = var64 / var4
    passed = ratio >= 8 and mass64 < 1e-4
    return SuiteResult(
        "two_slab_variance", passed,
        {"var_d4": var4, "var_d64": var64, "ratio": ratio, "mass_d64": mass64},
        f"var(d=64)/var(d=4) = {var64:.4f}/{var4:.4f} = {ratio:.3f} (want >= 8); "
        f"mass(d=64) = {mass64:.3e} (want < 1e-4)",
        time.time() - t0,
    )


# ---------------------------------------------------------------------------
# simulator suites


def half_line_level(a_star: float, beta: float) -> float:
    """Threshold lambda with stationary P(x >= lambda) = beta for the scalar system."""
    return float(stats.norm.isf(beta) / math.sqrt(1.0 - a_star ** 2))


def suite_pair_count(n_seeds: int = 100, T: int = 10_000) -> SuiteResult:
    """M >= alpha_hat * beta_hat * T / 2 in at least 95% of seeds."""
    t0 = time.time()
    hits = 0
    for s in range(n_seeds):
        a_star = (0.3, 0.5, 0.9)[s % 3]
        lam = half_line_level(a_star, 0.3)
        spec = SystemSpec([[a_star]])
        traj = simulate(spec, make_static_schedule(HalfSpace([1.0], lam)), T, s)
        c = measure_constants(traj, spec, (0.01,), 1000, np.random.default_rng([s, 2]))
        M = extract_pairs(traj).M
        hits += M >= c.alpha_hat * c.beta_hat * T / 2
    frac = hits / n_seeds
    return SuiteResult("pair_count", frac >= 0.95, {"fraction": frac},
                       f"M >= alpha*beta*T/2 in {hits}/{n_seeds} seeds (want >= 95%)", time.time() - t0)


def suite_half_line(T: int = 10_000, seeds=range(5)) -> SuiteResult:
    """Static half-line with beta ~ 0.1 has almost no low-survival steps."""
    t0 = time.time()
    rows = []
    ok = True
    for a_star in (0.3, 0.9):
        lam = half_line_level(a_star, 0.1)
        spec = SystemSpec([[a_star]])
        for s in seeds:
            traj = simulate(spec, make_static_schedule(HalfSpace([1.0], lam)), T, s)
            c = measure_constants(traj, spec, (0.01,), 1000, np.random.default_rng([s, 2]))
            frac = c.B_count(0.01) / T
            rows.append({"a_star": a_star, "seed": s, "beta_hat": c.beta_hat, "alpha_hat": c.alpha_hat, "B_frac": frac})
            ok &= frac < 0.01
    worst = max(r["B_frac"] for r in rows)
    betas = [r["beta_hat"] for r in rows]
    return SuiteResult("half_line_example", ok, {"rows": rows, "max_B_frac": worst},
                       f"max |B(0.01)|/T = {worst:.4f} (want < 0.01); beta_hat in "
                       f"[{min(betas):.3f}, {max(betas):.3f}]; min alpha_hat "
                       f"{min(r['alpha_hat'] for r in rows):.3f}", time.time() - t0)


# ---------------------------------------------------------------------------
# projection


def projection_oracle(A_tilde, Sigma_i, K: ConfidenceEllipsoid, iters: int = 200_000, tol: float = 1e-14):
    """Accelerated projected gradient in whitened coordinates ``B = (A - A0) L0``.

    With ``Sigma0 = L0 L0^T`` the constraint is the unit Frobenius ball in B,
    whose projection is a rescaling, so no multiplier search is involved.
    """
    L0 = np.linalg.cholesky(K.Sigma0)
    L0_inv = np.linalg.inv(L0)
    H = L0_inv @ Sigma_i @ L0_inv.T
    step = 1.0 / (2.0 * np.linalg.eigvalsh(H)[-1])
    C = (A_tilde - K.A0) @ L0  # unconstrained optimum in B coordinates

    def proj(B):
        nrm = np.linalg.norm(B)
        return B / nrm if nrm > 1 else B

    B = proj(C)
    Y = B.copy()
    t = 1.0
    for _ in range(iters):
        grad = 2.0 * (Y - C) @ H
        B_next = proj(Y - step * grad)
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        Y = B_next + (t - 1) / t_next * (B_next - B)
        if np.linalg.norm(B_next - B) < tol:
            B = B_next
            break
        B, t = B_next, t_next
    return K.A0 + B @ L0_inv


def _random_spd(rng, d, lo=0.2, hi=5.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Q @ np.diag(rng.uniform(lo, hi, size=d)) @ Q.T


def suite_projection(n_cases: int = 50, seed: int = 5) -> SuiteResult:
    t0 = time.time()
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    worst_kkt = 0.0
    active = 0
    for _ in range(n_cases):
        K = ConfidenceEllipsoid(rng.normal(size=(2, 2)), _random_spd(rng, 2))
        S = _random_spd(rng, 2)
        A_t = K.A0 + rng.normal(scale=2.0, size=(2, 2))
        A, lam = project_ellipsoid(A_t, S, K, 1e-10)
        ref = projection_oracle(A_t, S, K)
        worst_gap = max(worst_gap, math.sqrt(sigma_norm_sq(A - ref, S)))
        if lam > 0:
            active += 1
            stat = (A - A_t) @ S + lam * (A - K.A0) @ K.Sigma0
            scale = np.linalg.norm((A - A_t) @ S) + np.linalg.norm(lam * (A - K.A0) @ K.Sigma0) + 1e-300
            kkt = max(np.linalg.norm(stat) / scale, abs(math.sqrt(K.dist_sq(A)) - 1.0))
        else:
            kkt = max(0.0, math.sqrt(K.dist_sq(A)) - 1.0) + np.linalg.norm(A - A_t)
        worst_kkt = max(worst_kkt, kkt)
    passed = worst_gap < 1e-4 and worst_kkt < 1e-6
    return SuiteResult("projection", passed, {"max_gap": worst_gap, "max_kkt": worst_kkt, "active": active},
                       f"max Sigma-norm gap to oracle {worst_gap:.2e} (want < 1e-4); max KKT residual "
                       f"{worst_kkt:.2e} (want < 1e-6); {active}/{n_cases} active", time.time() - t0)


SUITES = {
    "scaling": suite_scaling,
    "bias_separation": suite_bias_separation,
    "uncensored_parity": suite_uncensored_parity,
    "generic_bound": suite_generic_bound,
    "potential": suite_potential,
    "sampler_ks": suite_sampler_ks,
    "truncated_mean": suite_truncated_mean,
    "survival_bound": suite_survival_bound,
    "two_slab_variance": suite_two_slab,
    "pair_count": suite_pair_count,
    "half_line_example": suite_half_line,
    "projection": suite_projection,
}

FAST_SUITES = (
    "generic_bound",
    "potential",
    "sampler_ks",
    "truncated_mean",
    "survival_bound",
    "two_slab_variance",
    "pair_count",
    "half_line_example",
    "projection",
)


def run_suites(names=FAST_SUITES, echo=print) -> list[SuiteResult]:
    results = []
    for name in names:
        t0 = time.time()
        res = SUITES[name]()
        res.seconds = res.seconds or time.time() - t0
        if echo:
            echo(res.line())
        results.append(res)
    return results

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from censored_lds.sets import AxisBox, EmptySet, FullSpace, HalfSpace
from censored_lds.truncated import (
    K_CAP,
    MassTooSmallError,
    TestConfig,
    mc_truncated_moments,
    rejection_sample,
    survival_lower_bound,
    test_survival as survival_test,
    truncated_mean_radius,
    truncnorm_1d_cdf,
    truncnorm_1d_exact,
    truncnorm_1d_union_exact,
)

HALF_NORMAL_MEAN = math.sqrt(2 / math.pi)
HALF_NORMAL_VAR = 1 - 2 / math.pi


# --- TestConfig ----------------------------------------------------------------

def test_config_derived_quantities():
    cfg = TestConfig(alpha=0.5, c_gamma=2, horizon=10_000)
    assert cfg.gamma == pytest.approx(1 / 16)
    assert cfg.k == math.ceil(64 * math.log(10_000))


def test_config_k_is_capped_with_warning():
    cfg = TestConfig(alpha=0.01, c_gamma=4, horizon=10**6)
    with pytest.warns(RuntimeWarning):
        assert cfg.k == K_CAP
    assert cfg.k_uncapped > K_CAP


@pytest.mark.parametrize("kwargs", [dict(alpha=0.0, c_gamma=2, horizon=10), dict(alpha=1.0, c_gamma=2, horizon=10),
                                    dict(alpha=0.5, c_gamma=0, horizon=10), dict(alpha=0.5, c_gamma=1.5, horizon=10)])
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        TestConfig(**kwargs)


# --- Test ------------------------------------------------------------------------

def test_survival_full_and_empty():
    cfg = TestConfig(0.5, 2, 100)
    rng = np.random.default_rng(0)
    assert survival_test(np.zeros(2), FullSpace(2), cfg, rng)
    assert not survival_test(np.zeros(2), EmptySet(2), cfg, rng)


def test_survival_half_space_passes_almost_always():
    cfg = TestConfig(0.5, 2, 10_000)
    rng = np.random.default_rng(1)
    s = HalfSpace([1.0], 0.0)
    passes = sum(survival_test(np.zeros(1), s, cfg, rng) for _ in range(1000))
    assert passes >= 999


def test_survival_consumes_exactly_k_times_n_normals():
    cfg = TestConfig(0.5, 2, 50)
    a, b = np.random.default_rng(2), np.random.default_rng(2)
    survival_test(np.zeros(3), HalfSpace([1.0, 0.0, 0.0], 0.0), cfg, a)
    b.standard_normal(cfg.k * 3)
    assert a.standard_normal() == b.standard_normal()


def test_survival_is_deterministic_given_seed():
    cfg = TestConfig(0.3, 1, 100)
    s = HalfSpace([1.0, 1.0], 0.74)  # survival ~0.3 = 2 gamma, so the verdict is seed-dependent
    runs = [[survival_test(np.zeros(2), s, cfg, np.random.default_rng(seed)) for seed in range(50)] for _ in range(2)]
    assert runs[0] == runs[1]
    assert 0 < sum(runs[0]) < 50


# --- rejection sampling ---------------------------------------------------------

def test_rejection_full_space_accepts_first_draw():
    out = rejection_sample(np.array([1.0, 2.0]), FullSpace(2), np.random.default_rng(0), 10)
    assert out.attempts == 1 and not out.exhausted


def test_rejection_empty_set_exhausts():
    out = rejection_sample(np.zeros(2), EmptySet(2), np.random.default_rng(0), 50)
    assert out.exhausted and out.value is None and out.attempts == 50


def test_rejection_half_normal_mean():
    rng = np.random.default_rng(3)
    s = HalfSpace([1.0], 0.0)
    vals = np.array([rejection_sample(np.zeros(1), s, rng, 1000).value[0] for _ in range(10_000)])
    assert abs(vals.mean() - HALF_NORMAL_MEAN) <= 3 * math.sqrt(HALF_NORMAL_VAR / 10_000)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_rejection_samples_are_members(mu, offset, seed):
    s = HalfSpace([1.0, -1.0], offset)
    out = rejection_sample(np.array([mu, 0.0]), s, np.random.default_rng(seed), 200)
    assert out.exhausted or s.contains(out.value)
    assert 1 <= out.attempts <= 200


def test_rejection_sampler_ks_against_exact_cdf():
    rng = np.random.default_rng(4)
    mu, a, b = 0.7, -0.5, 1.2
    s = AxisBox([a], [b])
    vals = np.array([rejection_sample(np.array([mu]), s, rng, 10_000).value[0] for _ in range(10_000)])
    stat = stats.kstest(vals, lambda x: truncnorm_1d_cdf(x, mu, a, b)).statistic
    assert stat < 0.02


# --- Monte-Carlo moments -----------------------------------------------------------

def test_mc_moments_untruncated():
    m = mc_truncated_moments(np.array([5.0, -2.0]), FullSpace(2), 100_000, np.random.default_rng(5))
    assert np.all(np.abs(m.mean - [5.0, -2.0]) <= m.ci_halfwidth)
    np.testing.assert_allclose(m.covariance, np.eye(2), atol=0.1)
    assert m.acceptance_rate == 1.0


def test_mc_moments_half_line():
    m = mc_truncated_moments(np.zeros(1), HalfSpace([1.0], 0.0), 100_000, np.random.default_rng(6))
    assert abs(m.mean[0] - HALF_NORMAL_MEAN) <= m.ci_halfwidth[0]
    assert m.covariance[0, 0] == pytest.approx(HALF_NORMAL_VAR, abs=0.01)
    assert m.acceptance_rate == pytest.approx(0.5, abs=0.01)


def test_mc_moments_mass_too_small():
    with pytest.raises(MassTooSmallError, match="mass too small"):
        mc_truncated_moments(np.zeros(1), HalfSpace([1.0], 6.0), 1000, np.random.default_rng(7))


# --- exact 1-d formulas ------------------------------------------------------------

def test_exact_half_line():
    mass, mean, var = truncnorm_1d_exact(0.0, 0.0, math.inf)
    assert mass == pytest.approx(0.5, abs=1e-15)
    assert mean == pytest.approx(HALF_NORMAL_MEAN, abs=1e-14)
    assert var == pytest.approx(HALF_NORMAL_VAR, abs=1e-14)


def test_exact_whole_line():
    assert truncnorm_1d_exact(0.0, -math.inf, math.inf) == pytest.approx((1.0, 0.0, 1.0), abs=1e-15)


def _mass_reference(mu, a, b):
    # difference of upper or lower tails, whichever avoids cancellation
    if a - mu > 0:
        return stats.norm.sf(a - mu) - stats.norm.sf(b - mu)
    return stats.norm.cdf(b - mu) - stats.norm.cdf(a - mu)


@pytest.mark.parametrize("mu, a, b", [(0.3, -1.0, 2.0), (2.0, -math.inf, -1.0), (-1.0, 3.0, math.inf),
                                      (0.0, 8.0, 9.0), (10.0, -math.inf, -20.0), (0.0, -0.01, 0.01)])
def test_exact_matches_scipy(mu, a, b):
    mass, mean, var = truncnorm_1d_exact(mu, a, b)
    dist = stats.truncnorm(a - mu, b - mu, loc=mu)
    assert mass == pytest.approx(_mass_reference(mu, a, b), rel=1e-9, abs=1e-300)
    assert mean == pytest.approx(dist.mean(), rel=1e-6, abs=1e-9)
    assert var == pytest.approx(dist.var(), rel=1e-5, abs=1e-9)


def test_exact_empty_interval_raises():
    with pytest.raises(MassTooSmallError, match="numerically empty"):
        truncnorm_1d_exact(0.0, 40.0, math.inf)
    with pytest.raises(ValueError):
        truncnorm_1d_exact(0.0, 1.0, 1.0)


def test_union_of_intervals_is_mixture():
    mu = 0.4
    pieces = [(-math.inf, 0.0), (1.0, math.inf)]
    mass, mean, var = truncnorm_1d_union_exact(mu, pieces)
    z = np.random.default_rng(8).standard_normal(2_000_000) + mu
    z = z[(z <= 0) | (z >= 1)]
    assert mass == pytest.approx(z.size / 2_000_000, abs=2e-3)
    assert mean == pytest.approx(z.mean(), abs=5e-3)
    assert var == pytest.approx(z.var(), abs=5e-3)


# --- closed-form bounds ---------------------------------------------------------------

def test_survival_lower_bound_examples():
    assert survival_lower_bound(0.5, 0.0) == pytest.approx(0.25)
    assert survival_lower_bound(0.5, 1.0) == pytest.approx(0.25 * math.exp(-0.5 - math.sqrt(2 * math.log(2))))
    assert survival_lower_bound(0.5, 1.0) == pytest.approx(0.0467, abs=5e-5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0, 5), st.floats(0, 5))
def test_survival_lower_bound_decreasing_in_r(alpha, r1, r2):
    lo, hi = sorted((r1, r2))
    assert survival_lower_bound(alpha, hi) <= survival_lower_bound(alpha, lo) <= alpha / 2


def test_truncated_mean_radius():
    assert truncated_mean_radius(1 / 16) == pytest.approx(math.sqrt(2 * math.log(16)) + 1)


def test_survival_lower_bound_holds_for_half_spaces():
    """MC check on random half-spaces: survival at mu is above the bound computed from mu*."""
    rng = np.random.default_rng(9)
    alpha = 0.2
    checked = 0
    while checked < 100:
        d = int(rng.integers(1, 4))
        n = rng.normal(size=d)
        n /= np.linalg.norm(n)
        mu_star = rng.normal(size=d)
        c = float(n @ mu_star + rng.uniform(-2, 1))
        true_star = stats.norm.sf(c - n @ mu_star)  # exact survival of a half-space
        if true_star < alpha:
            continue
        delta = rng.normal(size=d)
        r = float(rng.uniform(0, 2))
        mu = mu_star + r * delta / np.linalg.norm(delta)
        est = np.mean(HalfSpace(n, c).contains_many(mu + rng.standard_normal((20_000, d))))
        ci = 3 * math.sqrt(max(est * (1 - est), 1e-4) / 20_000)
        assert est >= survival_lower_bound(alpha, r) - ci
        checked += 1

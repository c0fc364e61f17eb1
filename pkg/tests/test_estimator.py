import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from censored_lds.estimator import (
    BoundInapplicableError,
    Branch,
    ConfidenceEllipsoid,
    RunDiagnostics,
    SonSgConfig,
    WarmupError,
    check_generic_bound,
    check_potential,
    generic_bound_tolerance,
    learn_censored_lds,
    ols,
    project_ellipsoid,
    sigma_norm_sq,
    son_sg,
    test_and_switch_grad as switch_grad,
    warmup,
)
from censored_lds.sets import EmptySet, FullSpace, HalfSpace, make_static_schedule
from censored_lds.simulator import (
    CensoredTrajectory,
    InsufficientPairsError,
    PairedDataset,
    SystemSpec,
    scaled_rotation,
    simulate,
)
from censored_lds.truncated import TestConfig


def _pairs(x, y, sets=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[0] == 1 and x.shape[1] > 1 and y.shape == x.shape:
        x, y = x.T, y.T
    M, d = x.shape
    sets = sets if sets is not None else [FullSpace(y.shape[1])] * M
    return PairedDataset(np.arange(1, M + 1), x, y, sets)


def _spd(rng, d, lo=0.2, hi=5.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Q @ np.diag(rng.uniform(lo, hi, size=d)) @ Q.T


# --- configuration ----------------------------------------------------------------

def test_config_derived_constants():
    cfg = SonSgConfig(alpha=0.5, c_eta=1, c_gamma=2, c_s=2.0)
    assert cfg.eta == 4.0
    assert cfg.gamma == 1 / 16
    assert cfg.s == pytest.approx(2 * (math.sqrt(math.log(2)) + 1))
    assert cfg.s == pytest.approx(3.665, abs=1e-3)


@pytest.mark.parametrize("kwargs", [dict(alpha=1.5), dict(c_eta=-1), dict(c_s=0.0), dict(max_attempts=0),
                                    dict(c_gamma=0)])
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        SonSgConfig(**kwargs)


# --- warmup ---------------------------------------------------------------------------

def test_warmup_scalar_example():
    cfg = SonSgConfig(alpha=0.5, c_s=2.0)
    K = warmup(_pairs([1.0, 2.0], [0.5, 1.0]), cfg)
    assert K.A0[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert K.Sigma0[0, 0] == pytest.approx(5 / (2 * cfg.s), rel=1e-14)


def test_warmup_noiseless_recovers_A():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3))
    X = rng.normal(size=(10, 3))
    K = warmup(PairedDataset(np.arange(10), X, X @ A.T, [FullSpace(3)] * 10), SonSgConfig())
    np.testing.assert_allclose(K.A0, A, atol=1e-12)


def test_warmup_rank_deficient():
    X = np.array([[1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]])
    with pytest.raises(WarmupError, match="insufficient warmup excitation"):
        warmup(PairedDataset(np.arange(3), X, X, [FullSpace(2)] * 3), SonSgConfig())
    with pytest.raises(WarmupError, match="insufficient warmup excitation"):
        warmup(PairedDataset(np.arange(1), X[:1], X[:1], [FullSpace(2)]), SonSgConfig())


def test_ellipsoid_membership():
    K = ConfidenceEllipsoid([[0.0]], [[4.0]])
    assert K.contains([[0.5]]) and not K.contains([[0.51]])
    assert K.omega == 4.0
    with pytest.raises(ValueError):
        ConfidenceEllipsoid([[0.0, 0.0]], [[1.0, 2.0], [0.0, 1.0]])


# --- switching gradient ----------------------------------------------------------------

def test_switch_grad_empty_set_is_oblivious():
    mu, x, y = np.array([1.0, -1.0]), np.array([0.5, 2.0]), np.array([0.2, 0.3])
    g, br = switch_grad(mu, x, y, EmptySet(2), TestConfig(0.5, 2, 100), np.random.default_rng(0))
    assert br == Branch.CENSOR_OBLIVIOUS
    np.testing.assert_array_equal(g, np.outer(mu - y, x))
    g, _ = switch_grad(mu, x, mu, EmptySet(2), TestConfig(0.5, 2, 100), np.random.default_rng(0))
    assert not g.any()


def test_switch_grad_full_space_is_unbiased():
    rng = np.random.default_rng(1)
    mu, x, y = np.array([0.3, -0.4]), np.array([1.0, 2.0]), np.array([1.0, 1.0])
    cfg = TestConfig(0.5, 2, 10)
    gs = []
    for _ in range(10_000):
        g, br = switch_grad(mu, x, y, FullSpace(2), cfg, rng)
        assert br == Branch.CENSOR_AWARE
        gs.append(g)
    gs = np.array(gs)
    ci = 3 * gs.std(axis=0) / math.sqrt(len(gs))
    assert np.all(np.abs(gs.mean(axis=0) - np.outer(mu - y, x)) <= ci)


def test_switch_grad_exhaustion_branch():
    # survival is comfortably above 2 gamma, but one attempt is often not enough
    rng = np.random.default_rng(2)
    s = HalfSpace([1.0], 0.0)
    branches = [switch_grad(np.zeros(1), np.ones(1), np.zeros(1), s, TestConfig(0.5, 2, 10), rng, 1)[1]
                for _ in range(200)]
    assert Branch.EXHAUSTED in branches and Branch.CENSOR_AWARE in branches


# --- projection --------------------------------------------------------------------------

def test_projection_inside_is_identity():
    K = ConfidenceEllipsoid(np.zeros((2, 2)), np.eye(2))
    A = np.array([[0.3, 0.1], [0.0, -0.2]])
    out, lam = project_ellipsoid(A, np.eye(2) * 3, K)
    assert lam == 0.0
    np.testing.assert_array_equal(out, A)


@pytest.mark.parametrize("sigma_i", [0.1, 1.0, 7.0])
def test_projection_scalar_is_clamp(sigma_i):
    K = ConfidenceEllipsoid([[0.0]], [[1.0]])
    out, lam = project_ellipsoid([[3.0]], [[sigma_i]], K)
    assert out[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert lam > 0
    out, _ = project_ellipsoid([[-3.0]], [[sigma_i]], K)
    assert out[0, 0] == pytest.approx(-1.0, abs=1e-9)


def _slsqp_projection(A_tilde, S, K):
    shape = A_tilde.shape

    def obj(v):
        return sigma_norm_sq(v.reshape(shape) - A_tilde, S)

    cons = {"type": "ineq", "fun": lambda v: 1.0 - K.dist_sq(v.reshape(shape))}
    res = optimize.minimize(obj, K.A0.ravel(), constraints=[cons], method="SLSQP",
                            options={"ftol": 1e-14, "maxiter": 1000})
    return res.x.reshape(shape)


def test_projection_matches_convex_solver():
    rng = np.random.default_rng(3)
    for _ in range(30):
        K = ConfidenceEllipsoid(rng.normal(size=(2, 2)), _spd(rng, 2))
        S = _spd(rng, 2)
        A_t = K.A0 + rng.normal(scale=2.0, size=(2, 2))
        A, _ = project_ellipsoid(A_t, S, K)
        ref = _slsqp_projection(A_t, S, K)
        assert math.sqrt(sigma_norm_sq(A - ref, S)) < 1e-4
        # never worse than the reference solution
        assert sigma_norm_sq(A - A_t, S) <= sigma_norm_sq(ref - A_t, S) + 1e-8


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 3), st.integers(1, 3), st.floats(0.1, 10))
def test_projection_kkt(seed, n, d, scale):
    rng = np.random.default_rng(seed)
    K = ConfidenceEllipsoid(rng.normal(size=(n, d)), _spd(rng, d))
    S = _spd(rng, d)
    A_t = K.A0 + rng.normal(scale=scale, size=(n, d))
    A, lam = project_ellipsoid(A_t, S, K, 1e-10)
    assert math.sqrt(K.dist_sq(A)) <= 1 + 1e-9
    if lam == 0:
        np.testing.assert_array_equal(A, A_t)
    else:
        assert abs(math.sqrt(K.dist_sq(A)) - 1) <= 1e-9
        stat = (A - A_t) @ S + lam * (A - K.A0) @ K.Sigma0
        scale_ = np.linalg.norm((A - A_t) @ S) + np.linalg.norm(lam * (A - K.A0) @ K.Sigma0)
        assert np.linalg.norm(stat) <= 1e-6 * scale_


# --- SON-SG -------------------------------------------------------------------------------

def test_zero_gradient_run_stays_at_center():
    rng = np.random.default_rng(4)
    A0 = np.array([[0.5, 0.1], [-0.2, 0.3]])
    K = ConfidenceEllipsoid(A0, np.eye(2))
    X = rng.normal(size=(20, 2))
    data = PairedDataset(np.arange(20), X, X @ A0.T, [EmptySet(2)] * 20)
    A_star = A0 + 0.1
    A_hat, diag = son_sg(K, data, SonSgConfig(), rng, ground_truth=A_star)
    np.testing.assert_allclose(A_hat, A0, atol=1e-12)
    assert diag.E1 == pytest.approx(-np.sum(diag.resid_sq))
    assert diag.E2 < 1e-28
    slack = check_generic_bound(diag, A_hat, A_star, K)
    assert slack >= 1 - sigma_norm_sq(A0 - A_star, diag.Sigma_N) - 1e-12


def test_hand_traced_two_step_run():
    """Two oblivious steps in 1-d, traced with plain floats."""
    a0, s0, eta = 0.4, 2.0, 4.0  # eta for alpha = 0.5, c_eta = 1
    a_star = 0.5
    xs, ys = [1.0, -2.0], [0.9, -0.7]
    K = ConfidenceEllipsoid([[a0]], [[s0]])
    data = PairedDataset([1, 2], np.array(xs)[:, None], np.array(ys)[:, None], [EmptySet(1)] * 2)
    cfg = SonSgConfig(alpha=0.5, c_eta=1, projection_tol=1e-14)  # the second step lands on the boundary
    A_hat, diag = son_sg(K, data, cfg, np.random.default_rng(0), ground_truth=[[a_star]])

    radius = 1 / math.sqrt(s0)
    a, sig, E1, E2 = a0, s0, 0.0, 0.0
    for x, y in zip(xs, ys):
        g = (a * x - y) * x
        E1 += 2 * eta * g * (a - a_star) - ((a - a_star) * x) ** 2
        sig += x * x
        E2 += g * g / sig
        a = min(max(a - eta * g / sig, a0 - radius), a0 + radius)
    assert A_hat[0, 0] == pytest.approx(a, abs=1e-12)
    assert diag.E1 == pytest.approx(E1, abs=1e-12)
    assert diag.E2 == pytest.approx(E2, abs=1e-12)
    expected_slack = 1 - E1 + eta ** 2 * E2 - sig * (a - a_star) ** 2
    assert check_generic_bound(diag, A_hat, [[a_star]], K) == pytest.approx(expected_slack, abs=1e-12)
    assert expected_slack >= 0


def test_bound_inapplicable_outside_ellipsoid():
    K = ConfidenceEllipsoid([[0.0]], [[1.0]])
    data = PairedDataset([1], [[1.0]], [[0.5]], [EmptySet(1)])
    A_hat, diag = son_sg(K, data, SonSgConfig(), np.random.default_rng(0), ground_truth=[[5.0]])
    with pytest.raises(BoundInapplicableError, match="bound inapplicable"):
        check_generic_bound(diag, A_hat, [[5.0]], K)
    _, diag = son_sg(K, data, SonSgConfig(), np.random.default_rng(0))
    with pytest.raises(BoundInapplicableError):
        check_generic_bound(diag, A_hat, [[0.5]], K)


def test_potential_scalar_example():
    K = ConfidenceEllipsoid([[0.0]], [[1.0]])
    data = PairedDataset([1], [[2.0]], [[0.0]], [EmptySet(1)])
    _, diag = son_sg(K, data, SonSgConfig(), np.random.default_rng(0))
    assert diag.potential_terms[0] == pytest.approx(0.8)
    assert diag.Sigma_N[0, 0] == 5.0
    assert check_potential(diag, omega=1.0)
    assert 0.8 <= math.log(5)


def test_potential_with_no_updates():
    S0 = np.array([[2.0, 0.5], [0.5, 1.0]])
    empty = np.zeros(0)
    diag = RunDiagnostics(1.0, np.zeros(0, dtype=int), np.zeros(0, dtype=np.int8), empty, empty, empty, empty, empty,
                          empty, S0, S0)
    assert check_potential(diag)
    with pytest.raises(ValueError):
        check_potential(diag, omega=10.0)


def test_sherman_morrison_inverse_stays_consistent():
    rng = np.random.default_rng(5)
    d = 3
    K = ConfidenceEllipsoid(rng.normal(size=(d, d)), 0.5 * np.eye(d))
    X = rng.normal(scale=3.0, size=(500, d))
    data = PairedDataset(np.arange(500), X, rng.normal(size=(500, d)), [HalfSpace(rng.normal(size=d), 0.0)] * 500)
    _, diag = son_sg(K, data, SonSgConfig(alpha=0.3), rng)
    assert diag.max_inverse_drift < 1e-8
    assert diag.inverse_refreshes >= 500 // d
    np.testing.assert_allclose(diag.Sigma_N, K.Sigma0 + X.T @ X, rtol=1e-12)
    # potential terms are x^T Sigma_i^{-1} x with Sigma_i including x itself, so each lies in (0, 1)
    assert np.all((diag.potential_terms > 0) & (diag.potential_terms < 1))


def test_iterates_stay_in_ellipsoid_and_time_order():
    spec = SystemSpec(scaled_rotation(0.9, 0.3))
    traj = simulate(spec, make_static_schedule(HalfSpace([1.0, 0.5], -0.5)), 3000, 6)
    _, rep = learn_censored_lds(traj, SonSgConfig(alpha=0.3), np.random.default_rng(6), ground_truth=spec.A_star)
    assert rep.diagnostics.max_iterate_dist <= 1 + 1e-6
    assert rep.checks["time_ordered"] and rep.checks["potential"]
    assert rep.checks.get("generic_bound", True)
    assert sum(rep.branch_counts.values()) == rep.n_online


# --- end-to-end -------------------------------------------------------------------------------

def test_minimal_trajectory_runs_one_online_step():
    traj = CensoredTrajectory(np.array([[1.0], [0.5], [0.3], [9.0]]), np.array([1, 1, 1, 0], dtype=bool),
                              [FullSpace(1)] * 4)
    A_hat, rep = learn_censored_lds(traj, SonSgConfig(), np.random.default_rng(0))
    assert rep.n_pairs == 2 and rep.n_warmup == 1 and rep.n_online == 1
    assert A_hat.shape == (1, 1)


def test_insufficient_pairs_reports_count():
    traj = CensoredTrajectory(np.array([[1.0], [0.5], [0.3]]), np.array([1, 1, 0], dtype=bool), [FullSpace(1)] * 3)
    with pytest.raises(InsufficientPairsError, match="insufficient pairs") as info:
        learn_censored_lds(traj, SonSgConfig(), np.random.default_rng(0))
    assert info.value.n_pairs == 1


def test_estimator_never_reads_censored_states():
    spec = SystemSpec([[0.5]])
    traj = simulate(spec, make_static_schedule(HalfSpace([1.0], 0.0)), 2000, 7)
    poisoned = CensoredTrajectory(traj.states.copy(), traj.observed, traj.sets, traj.seed)
    poisoned.states[~traj.observed] = 1e6
    a, _ = learn_censored_lds(traj, SonSgConfig(), np.random.default_rng(1))
    b, _ = learn_censored_lds(poisoned, SonSgConfig(), np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)


@pytest.mark.slow
def test_uncensored_scalar_accuracy():
    spec = SystemSpec([[0.5]])
    sched = make_static_schedule(FullSpace(1))
    cfg = SonSgConfig(alpha=0.9, c_eta=1, c_gamma=2)
    close = 0
    for seed in range(50):
        traj = simulate(spec, sched, 20_000, seed)
        A_hat, _ = learn_censored_lds(traj, cfg, np.random.default_rng([seed, 1]))
        close += abs(A_hat[0, 0] - 0.5) <= 0.05
    assert close >= 45


def test_uncensored_within_three_times_ols():
    spec = SystemSpec(np.array([[0.6, 0.2], [-0.1, 0.4]]))
    sched = make_static_schedule(FullSpace(2))
    son, full = [], []
    for seed in range(10):
        traj = simulate(spec, sched, 5000, seed)
        A_hat, _ = learn_censored_lds(traj, SonSgConfig(alpha=0.9), np.random.default_rng([seed, 1]))
        son.append(np.linalg.norm(A_hat - spec.A_star))
        full.append(np.linalg.norm(ols(traj.states[:-1], traj.states[1:]) - spec.A_star))
    assert np.median(son) <= 3 * np.median(full)


def test_generic_bound_tolerance_scale():
    K = ConfidenceEllipsoid([[0.0]], [[1.0]])
    data = PairedDataset([1, 2], [[1.0], [2.0]], [[3.0], [-1.0]], [EmptySet(1)] * 2)
    _, diag = son_sg(K, data, SonSgConfig(), np.random.default_rng(0), ground_truth=[[0.2]])
    assert generic_bound_tolerance(diag) == pytest.approx(1e-6 * (1 + abs(diag.E1) + diag.eta ** 2 * diag.E2))

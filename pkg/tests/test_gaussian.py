"""Gaussian instantiations: mean pipeline, preconditioner, covariance chain."""

import numpy as np
import pytest

from truncdp import (
    DataBall,
    PrivacyBudget,
    Prior,
    estimate_covariance,
    estimate_mean,
    inv_sqrt,
    pack,
    plan_covariance,
    plan_mean,
    preprocess,
    unpack,
)
from truncdp.errors import ConditioningError, ConfigError
from truncdp.gaussian import (
    PRECOND_C2,
    covariance_data_radius,
    precondition_clip_radius,
    precondition_covariance,
    precondition_kappa,
    precondition_rounds,
    precondition_sample_size,
    unwind_covariance,
    whiten_rows,
    whiten_scale,
)
from truncdp.harness import cov_error

RNG = np.random.default_rng


# ---------------------------------------------------------------------------
# mean pipeline


def test_plan_mean_matches_dimension():
    plan = plan_mean(3, PrivacyBudget(0.5, 1e-6), 0.25, 0.1)
    assert plan.run_bb
    assert plan.cov_trace == pytest.approx(3.0)
    assert plan.curvature_floor == pytest.approx(1.0)


def test_estimate_mean_reproducible_and_reported():
    budget = PrivacyBudget(0.5, 1e-6)
    prior = Prior(np.zeros(2), radius_param=1.0, radius_stat=1.0)
    plan = plan_mean(2, budget, 0.3, 0.1, prior=prior, sgd_rows=200)
    theta_star = np.array([0.4, -0.3])
    raw = theta_star + RNG(0).standard_normal((plan.raw_needed, 2))
    rep1 = estimate_mean(
        raw, budget, 0.3, 0.1, seed=5, prior=prior, sgd_rows=200, full_report=True
    )
    rep2 = estimate_mean(
        raw, budget, 0.3, 0.1, seed=5, prior=prior, sgd_rows=200, full_report=True
    )
    assert rep1.task == "mean"
    assert np.array_equal(rep1.theta, rep2.theta)
    assert rep1.epsilon_spent <= 0.5 * (1 + 1e-9)
    assert rep1.to_json(canonical=True) == rep2.to_json(canonical=True)
    # default return is the bare estimate
    vec = estimate_mean(raw, budget, 0.3, 0.1, seed=5, prior=prior, sgd_rows=200)
    assert np.array_equal(vec, rep1.theta)


def test_estimate_mean_noise_free_is_sharper():
    budget = PrivacyBudget(0.5, 1e-6)
    prior = Prior(np.zeros(2), radius_param=1.0, radius_stat=1.0)
    plan = plan_mean(2, budget, 0.3, 0.1, prior=prior, sgd_rows=400)
    theta_star = np.array([0.5, 0.2])
    raw = theta_star + RNG(1).standard_normal((plan.raw_needed, 2))
    quiet = estimate_mean(
        raw, budget, 0.3, 0.1, seed=6, prior=prior, noise=False, sgd_rows=400
    )
    assert np.linalg.norm(quiet - theta_star) < 0.25


# ---------------------------------------------------------------------------
# preconditioner arithmetic


def test_precondition_kappa_frozen():
    # 8 ln 4 / (0.0025 * 0.25) = 17744.567822...
    assert precondition_kappa(0.0025, 0.5) == pytest.approx(17744.5678, rel=1e-8)
    assert precondition_rounds(0.0025, 0.5) == 15


def test_precondition_clip_radius_grows_slowly():
    r1 = precondition_clip_radius(10**5, 3, 0.5, 0.05)
    r2 = precondition_clip_radius(10**7, 3, 0.5, 0.05)
    assert r1 < r2 < r1 * 1.2  # log growth only


def test_covariance_data_radius_formula():
    assert covariance_data_radius(3, 0.5) == pytest.approx(2.0 * np.sqrt(3.0))


def test_precondition_sample_size_scales_with_budget():
    small = precondition_sample_size(3, 0.01, 0.5, PrivacyBudget(0.9, 1e-5), 0.05)
    large = precondition_sample_size(3, 0.01, 0.5, PrivacyBudget(0.2, 1e-5), 0.05)
    assert large > small  # tighter epsilon needs more rows


# ---------------------------------------------------------------------------
# preconditioner behavior


def _ball_data(sigma, n, seed, radius):
    d = sigma.shape[0]
    rng = RNG(seed)
    root = np.linalg.cholesky(sigma)
    raw = rng.standard_normal((int(n * 1.3) + 16, d)) @ root.T
    ball = DataBall(radius)
    keep = raw[ball.contains_batch(raw)]
    assert len(keep) >= n
    return preprocess(keep[:n], ball, n, np.zeros(d), seed)


def test_precondition_noise_free_recovers_covariance():
    # untruncated well-conditioned data, noise off: the unwound estimate is
    # the empirical second moment up to clipping, within a few percent
    d = 3
    sigma = np.diag([0.02, 0.05, 0.11])
    data = _ball_data(sigma, 60000, 2, radius=1e6)
    sig_hat = precondition_covariance(
        data, PrivacyBudget(0.9, 1e-5), 0.05, 0.02, 0.5, seed=3, noise=False
    )
    assert cov_error(sig_hat, sigma) < 0.1


def test_precondition_state_invariants():
    d = 2
    sigma = np.diag([0.01, 0.1])
    data = _ball_data(sigma, 50000, 4, radius=1e6)
    sig_hat, state = precondition_covariance(
        data,
        PrivacyBudget(0.9, 1e-5),
        0.05,
        0.01,
        0.5,
        seed=5,
        noise=False,
        return_state=True,
    )
    assert state.iteration == precondition_rounds(0.01, 0.5)
    # final transform is symmetric positive definite
    assert np.allclose(state.a, state.a.T)
    assert np.linalg.eigvalsh(state.a)[0] > 0
    assert len(state.cond_history) == state.iteration
    # noise-free recursion tames the condition number monotonically at first
    assert state.cond_history[-1] < state.cond_history[0]
    assert all(f <= 0.05 + 1e-12 for f in state.clip_fractions)
    assert np.allclose(sig_hat, sig_hat.T)


def test_precondition_sandwich_lands_in_band_noise_free():
    d = 2
    sigma = np.diag([0.002, 0.1])  # condition number 50
    data = _ball_data(sigma, 80000, 6, radius=1e6)
    sig_hat = precondition_covariance(
        data, PrivacyBudget(0.9, 1e-5), 0.05, 0.002, 0.5, seed=7, noise=False
    )
    root_inv = inv_sqrt(sigma)
    sandwich = root_inv @ sig_hat @ root_inv
    ev = np.linalg.eigvalsh(0.5 * (sandwich + sandwich.T))
    assert ev[0] >= 0.1 * 0.25
    assert ev[-1] <= 4.0 * np.log(2.0)


def test_precondition_degenerate_input_yields_singular_output():
    # rank-deficient data: the recursion itself stays well posed (the +I/4
    # regularization keeps its inner matrices positive definite) and the
    # degeneracy surfaces as a singular estimate, which the downstream
    # positive-definiteness check refuses
    d = 2
    rows = np.zeros((5000, d))
    rows[:, 0] = RNG(8).standard_normal(5000) * 0.05
    data = preprocess(rows, DataBall(1e6), 5000, np.zeros(d), 9)
    sig_hat = precondition_covariance(
        data, PrivacyBudget(0.9, 1e-5), 0.05, 0.01, 0.5, seed=10, noise=False
    )
    assert np.linalg.eigvalsh(sig_hat)[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConditioningError):
        inv_sqrt(sig_hat)


# ---------------------------------------------------------------------------
# whitening algebra


def test_whiten_scale_formula():
    assert whiten_scale(0.5) == pytest.approx(
        np.sqrt(8.0 * PRECOND_C2 * np.log(2.0))
    )


def test_whiten_rows_unit_covariance():
    rng = RNG(11)
    sigma = np.array([[0.08, 0.02], [0.02, 0.05]])
    xs = rng.standard_normal((200000, 2)) @ np.linalg.cholesky(sigma).T
    s = whiten_scale(0.5)
    w = whiten_rows(xs, sigma, s)
    assert np.allclose(np.cov(w.T) * s * s, np.eye(2), atol=0.01)


def test_unwind_inverts_whitening_exactly():
    # if M_w is the precision of the whitened data, unwinding returns the
    # original covariance times scale_back; pure linear algebra, no sampling
    rng = RNG(12)
    a = rng.standard_normal((3, 3))
    sigma_x = a @ a.T + 0.5 * np.eye(3)
    rough = np.diag([0.5, 1.0, 2.0])
    s = whiten_scale(0.5)
    root = np.linalg.cholesky(rough)  # not used; rough is given to unwind
    cov_w = inv_sqrt(rough) @ sigma_x @ inv_sqrt(rough) / (s * s)
    m_w = np.linalg.inv(cov_w)
    got = unwind_covariance(m_w, rough, s, scale_back=8.0)
    assert np.allclose(got, 8.0 * sigma_x, atol=1e-9)


# ---------------------------------------------------------------------------
# covariance planning


def test_plan_covariance_splits_exactly():
    budget = PrivacyBudget(0.9, 1e-5)
    plan = plan_covariance(3, budget, 0.3, 0.1, 1.0, 1.3)
    assert plan.pre_budget.epsilon == 0.3 * 0.9
    assert plan.main_budget.epsilon == 0.7 * 0.9
    assert plan.pre_budget.delta == 0.3 * 1e-5
    assert plan.beta_pre == pytest.approx(0.1 / 3.0)
    assert plan.beta_main == pytest.approx(2.0 * 0.1 / 3.0)
    assert plan.raw_needed == plan.pre_slice + plan.main.raw_needed
    assert plan.main.chunks == 1


def test_plan_covariance_main_stage_condition_free():
    # the whitened main stage is blind to the raw condition number: only the
    # preconditioner sizing reacts to lam
    budget = PrivacyBudget(0.9, 1e-5)
    well = plan_covariance(3, budget, 0.3, 0.1, 1.0, 1.3)
    ill = plan_covariance(3, budget, 0.3, 0.1, 0.05, 1.3)
    assert well.main.n_sgd == ill.main.n_sgd
    assert well.main.raw_needed == ill.main.raw_needed
    assert ill.n_pre > well.n_pre
    assert ill.rounds > well.rounds


def test_plan_covariance_validates_spectrum_bounds():
    budget = PrivacyBudget(0.9, 1e-5)
    with pytest.raises(ConfigError):
        plan_covariance(3, budget, 0.3, 0.1, 1.5, 1.3)  # lam > big_lam
    with pytest.raises(ConfigError):
        plan_covariance(3, budget, 0.3, 0.1, 0.0, 1.3)


# ---------------------------------------------------------------------------
# covariance pipeline, small end-to-end smoke


def test_estimate_covariance_report_and_budget():
    d = 2
    budget = PrivacyBudget(0.9, 1e-5)
    lam, big_lam = 1.0, 1.2
    alpha, beta = 0.5, 0.2
    plan = plan_covariance(d, budget, alpha, beta, lam, big_lam)
    rng = RNG(13)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    sigma_star = (q * np.array([1.0, 1.2])) @ q.T
    raw = rng.standard_normal((plan.raw_needed, d)) @ np.linalg.cholesky(
        sigma_star
    ).T
    rep = estimate_covariance(
        raw, budget, alpha, beta, lam, big_lam, seed=14, full_report=True
    )
    assert rep.task == "covariance"
    assert rep.stages[0].name == "preconditioner"
    assert rep.stages[0].epsilon == 0.3 * 0.9
    assert rep.epsilon_spent <= 0.9 * (1 + 1e-9)
    assert rep.extra["n_pre"] == plan.n_pre
    sig_hat = np.asarray(rep.theta)
    assert np.allclose(sig_hat, sig_hat.T)
    assert np.linalg.eigvalsh(sig_hat)[0] > 0
    assert cov_error(sig_hat, sigma_star) < 0.5

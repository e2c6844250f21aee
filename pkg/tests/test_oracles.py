"""Frozen-value oracles for every closed-form quantity in the pipeline.

Each expected number below was computed independently of the implementation
(by hand or with a separate high-precision evaluation of the defining
formula) and is frozen as a literal. If an implementation change moves one
of these values, that is a behavior change, not a test bug.
"""

import math

import numpy as np
import pytest

from truncdp import (
    BudgetLedger,
    ConfigError,
    DataBall,
    PrivacyBudget,
    UserPredicate,
    all_space,
    gaussian_mean_family,
    gaussian_precision_family,
    gaussian_sigma,
    inv_sqrt,
    pack,
    private_histogram,
    required_raw_samples,
    sgd_noise_sigma,
    sgd_survival_radius,
    strong_convexity_constant,
    uniform_convergence_sample_size,
    unpack,
    warm_survival_radius,
)
from truncdp.errors import ConditioningError
from truncdp.expfam import mean_suff_stat_mc
from truncdp.privacy import histogram_sample_size
from truncdp.truncation import rejection_sample_truncated
from truncdp.warmstart import histogram_bin_length

RNG = np.random.default_rng


# ---------------------------------------------------------------------------
# noise calibration


def test_gaussian_sigma_frozen():
    # 2 * 0.5 * ln(1.25/0.05) / 0.5 = 2 ln 25 = 6.437751649736401
    got = gaussian_sigma(0.5, PrivacyBudget(0.5, 0.05))
    assert got == pytest.approx(6.437751649736401, rel=1e-14)


def test_gaussian_sigma_zero_sensitivity():
    assert gaussian_sigma(0.0, PrivacyBudget(0.5, 0.05)) == 0.0


def test_sgd_noise_sigma_frozen():
    # sqrt(32 * ln(1000/1e-6) * ln(1e6)) / 0.5 with sensitivity 1:
    # ln(1e9) = 20.723265836946411, ln(1e6) = 13.815510557964274,
    # product * 32 = 9161.679944..., sqrt = 95.716664875...,
    # / 0.5 = 191.43332975118696
    got = sgd_noise_sigma(1.0, 1000, PrivacyBudget(0.5, 1e-6))
    expect = math.sqrt(32.0 * math.log(1e9) * math.log(1e6)) / 0.5
    assert got == pytest.approx(expect, rel=1e-14)
    assert got == pytest.approx(191.43332975118696, rel=1e-12)


# ---------------------------------------------------------------------------
# histogram geometry


def test_histogram_bin_length_frozen():
    # ln(2*100/(1*0.1)) / (2*1) = ln(2000)/2 = 3.800451229771041
    got = histogram_bin_length(100, 1.0, 0.1, 1.0)
    assert got == pytest.approx(3.800451229771041, rel=1e-14)


def test_histogram_sample_size_frozen():
    # ceil(8 ln(4e7)/(0.5*0.1) + ln(40)/(2*0.01))
    #   = ceil(2800.70242... + 184.44397...) = ceil(2985.1464) = 2986
    assert histogram_sample_size(0.1, 0.1, PrivacyBudget(0.5, 1e-6)) == 2986


def test_private_histogram_noiseless_masses():
    rng = RNG(0)
    out = private_histogram(
        np.array([0.1, 0.2, 1.5]), 1.0, PrivacyBudget(0.5, 0.05), rng, noise=False
    )
    assert out == {0: pytest.approx(2.0 / 3.0), 1: pytest.approx(1.0 / 3.0)}


def test_private_histogram_count_one_release_rate():
    # A count-1 bin has mass 1/n; it survives iff its Laplace(2/(n eps)) draw
    # exceeds t0 - 1/n = 2 ln(2/delta)/(n eps), an event of probability
    # (1/2) exp(-ln(2/delta)) = delta/4. With delta = 0.3 that is 0.075.
    budget = PrivacyBudget(0.5, 0.3)
    rng = RNG(7)
    hits = 0
    reps = 20000
    for _ in range(reps):
        if private_histogram(np.array([0.5]), 1.0, budget, rng):
            hits += 1
    rate = hits / reps
    # 4 binomial standard errors around 0.075 is +-0.0075
    assert abs(rate - 0.075) < 0.0078


# ---------------------------------------------------------------------------
# sample-size formulas


def test_strong_convexity_constant_frozen():
    # 0.5 * (1/4)^2 * 1 = 1/32
    assert strong_convexity_constant(1.0, 1.0, 0.0, 1) == pytest.approx(1.0 / 32.0)


def test_strong_convexity_monotone_in_R():
    assert strong_convexity_constant(1.0, 0.5, 1.0, 1) < strong_convexity_constant(
        1.0, 0.5, 0.0, 1
    )


def test_uniform_convergence_sample_size_frozen():
    # ceil(8 * (4+1) * ln(10) / (1 * 1 * 0.25^2)) = ceil(1473.65...) = 1474
    assert uniform_convergence_sample_size(4, 1.0, 1.0, 1.0, 0.25, 0.1) == 1474


def test_required_raw_samples_lower_bound():
    # 4 * 100 * max(1, ln 2) / 1 = 400; in particular at least n itself
    got = required_raw_samples(100, 1.0, 0.5)
    assert got == 400
    assert got >= 100


# ---------------------------------------------------------------------------
# survival radii


def test_sgd_survival_radius_frozen():
    assert sgd_survival_radius(4, 0.5, 1.0) == pytest.approx(
        math.sqrt(8.0) + 2.0, rel=1e-14
    )  # 4.82842712474619
    assert sgd_survival_radius(1, 0.75, 1.0) == pytest.approx(4.0, rel=1e-14)
    assert sgd_survival_radius(9, 0.5, 2.0) == pytest.approx(
        math.sqrt(18.0) + 4.0, rel=1e-14
    )  # 8.242640687119285


def test_warm_survival_radius_frozen():
    # sqrt(4)/(1-0.5) + 1 = 5; the 1/(1-rho) sits outside the root here
    assert warm_survival_radius(4, 0.5, 1.0) == pytest.approx(5.0, rel=1e-14)
    assert warm_survival_radius(4, 0.5, 1.0) != pytest.approx(
        sgd_survival_radius(4, 0.5, 0.5)
    )


# ---------------------------------------------------------------------------
# family algebra, frozen points


def test_mean_family_identities():
    fam = gaussian_mean_family(2)
    assert np.allclose(fam.moment_match(np.array([1.0, 2.0])), [1.0, 2.0])
    assert np.allclose(fam.projector(np.array([3.0, -7.0])), [3.0, -7.0])
    assert np.allclose(fam.statistic(np.array([0.3, -0.1])), [0.3, -0.1])
    assert fam.lam == 1.0 and fam.degree == 1


def test_precision_family_statistic_d1():
    fam = gaussian_precision_family(1, 0.125)
    # T(x) = pack(-x x^T / 2); at x = 1 that is -0.5
    assert fam.statistic(np.array([1.0])) == pytest.approx(np.array([-0.5]))


def test_precision_family_moment_match_identity_point():
    fam = gaussian_precision_family(2, 0.125)
    # tau = pack(-Sigma/2) with Sigma = I inverts to M = I (no projection)
    tau = pack(-0.5 * np.eye(2))
    assert np.allclose(unpack(fam.moment_match(tau)), np.eye(2), atol=1e-12)


def test_precision_family_projector_spectral_box():
    fam = gaussian_precision_family(2, 1.0 / 16.0)
    # upper edge of the parameter box is (2/lam_construct) I = 32 I
    got = unpack(fam.projector(pack(100.0 * np.eye(2))))
    assert np.allclose(got, 32.0 * np.eye(2), atol=1e-12)


def test_precision_family_cov_floor_frozen():
    lam_c = 0.125
    fam = gaussian_precision_family(2, lam_c)
    # Cov[T] at M = 8I (Sigma = I/8) has eigenvalues s_i s_j / 2 = 1/128
    assert fam.cov_floor(pack(8.0 * np.eye(2))) == pytest.approx(1.0 / 128.0)
    # the family-wide floor min(lam^2, sqrt(lam))/4 at lam = 1/8 is 1/256
    assert fam.lam == pytest.approx(1.0 / 256.0)


def test_precision_family_cov_min_eig_empirical():
    # Isserlis: Cov[pack(-xx^T/2)] at Sigma = I/8 has minimum eigenvalue
    # 1/128 = 0.0078125; check the sampler agrees by Monte Carlo.
    fam = gaussian_precision_family(2, 0.125)
    theta = pack(8.0 * np.eye(2))
    rng = RNG(11)
    xs = fam.sampler_batch(theta, 200000, rng)
    ts = fam.stats(xs)
    cov = np.cov(ts.T)
    w = np.linalg.eigvalsh(cov)
    assert w[0] == pytest.approx(1.0 / 128.0, rel=0.05)


# ---------------------------------------------------------------------------
# Monte-Carlo truncated means


def test_mean_suff_stat_mc_half_normal():
    # E[x | x >= 0] under N(0,1) is sqrt(2/pi) = 0.7978845608028654
    fam = gaussian_mean_family(1)
    half = UserPredicate(
        lambda x: x[0] >= 0.0, batch_fn=lambda X: X[:, 0] >= 0.0
    )
    mean, se = mean_suff_stat_mc(
        fam, np.zeros(1), half, 200000, RNG(3), return_stderr=True
    )
    assert abs(mean[0] - 0.7978845608028654) <= 4.0 * se[0]


def test_mean_suff_stat_mc_precision_all_space():
    # E[T] = -Sigma/2; at M = I (d=1) that is -0.5
    fam = gaussian_precision_family(1, 0.125)
    mean, se = mean_suff_stat_mc(
        fam, pack(np.eye(1)), all_space(), 100000, RNG(4), return_stderr=True
    )
    assert abs(mean[0] - (-0.5)) <= 4.0 * se[0]


# ---------------------------------------------------------------------------
# rejection sampling


def test_rejection_all_space_single_attempt():
    fam = gaussian_mean_family(3)
    rng = RNG(5)
    for _ in range(50):
        _, attempts = rejection_sample_truncated(
            fam, np.zeros(3), all_space(), 10, rng
        )
        assert attempts == 1


def test_rejection_half_space_geometric_attempts():
    # acceptance probability 1/2 makes attempts Geometric(1/2), mean 2
    fam = gaussian_mean_family(1)
    half = UserPredicate(lambda x: x[0] >= 0.0)
    rng = RNG(6)
    counts = [
        rejection_sample_truncated(fam, np.zeros(1), half, 1000, rng)[1]
        for _ in range(4000)
    ]
    assert 1.85 < np.mean(counts) < 2.15


# ---------------------------------------------------------------------------
# ledger arithmetic


def test_ledger_sequential_sum():
    led = BudgetLedger()
    led.charge("a", PrivacyBudget(0.1, 1e-6))
    led.charge("b", PrivacyBudget(0.1, 1e-6))
    tot = led.total()
    assert tot.epsilon == pytest.approx(0.2, rel=1e-14)
    assert tot.delta == pytest.approx(2e-6, rel=1e-14)


def test_ledger_parallel_group_max():
    led = BudgetLedger()
    led.charge("a", PrivacyBudget(0.1, 1e-6), kind="grp")
    led.charge("b", PrivacyBudget(0.1, 1e-6), kind="grp")
    tot = led.total()
    assert tot.epsilon == 0.1 and tot.delta == 1e-6


# ---------------------------------------------------------------------------
# matrix helpers


def test_inv_sqrt_frozen():
    assert np.allclose(inv_sqrt(4.0 * np.eye(3)), 0.5 * np.eye(3), atol=1e-12)


def test_inv_sqrt_rejects_non_pd():
    with pytest.raises(ConditioningError):
        inv_sqrt(np.diag([1.0, -0.5]))


def test_inv_sqrt_inverse_property():
    rng = RNG(8)
    for d in (2, 5, 8):
        a = rng.standard_normal((d, d))
        m = a @ a.T + 0.1 * np.eye(d)
        r = inv_sqrt(m)
        assert np.allclose(r @ m @ r, np.eye(d), atol=1e-10)


# ---------------------------------------------------------------------------
# budget validation


def test_budget_open_interval():
    with pytest.raises(ConfigError):
        PrivacyBudget(1.0, 1e-6)
    with pytest.raises(ConfigError):
        PrivacyBudget(0.5, 0.0)
    with pytest.raises(ConfigError):
        PrivacyBudget(0.0, 1e-6)
    PrivacyBudget(0.999, 0.999)  # extremes inside the interval are fine


def test_budget_split_overflow():
    b = PrivacyBudget(0.5, 1e-6)
    parts = b.split(0.2, 0.2, 0.6)
    assert parts[0].epsilon == pytest.approx(0.1)
    assert sum(p.epsilon for p in parts) == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        b.split(0.7, 0.7)

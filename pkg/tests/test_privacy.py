"""Mechanisms, calibration, histograms, and the budget ledger."""

import numpy as np
import pytest

from truncdp import (
    BudgetLedger,
    PrivacyBudget,
    gaussian_mechanism,
    gaussian_sigma,
    private_histogram,
    sgd_noise_sigma,
)
from truncdp.errors import ConfigError, OverBudgetError
from truncdp.privacy import gaussian_mechanism_symmetric

RNG = np.random.default_rng

SYM_SPECTRAL_FACTOR = 2.5


# ---------------------------------------------------------------------------
# gaussian mechanism


def test_mechanism_reports_sigma_and_noise_off_path():
    budget = PrivacyBudget(0.5, 0.05)
    value = np.array([1.0, -2.0, 0.5])
    out, sigma = gaussian_mechanism(value, 0.5, budget, RNG(0), noise=False)
    assert sigma == pytest.approx(gaussian_sigma(0.5, budget))
    assert np.array_equal(out, value)
    out[0] = 99.0  # returned array is a copy, caller cannot alias the input
    assert value[0] == 1.0


def test_mechanism_empirical_variance():
    budget = PrivacyBudget(0.5, 0.05)
    sigma = gaussian_sigma(1.0, budget)
    out, _ = gaussian_mechanism(np.zeros(100000), 1.0, budget, RNG(1))
    # relative error of a 1e5-sample variance is ~sqrt(2/n) = 0.45%
    assert np.var(out) == pytest.approx(sigma**2, rel=0.05)
    assert np.mean(out) == pytest.approx(0.0, abs=5 * sigma / np.sqrt(100000))


def test_mechanism_rejects_nonfinite():
    budget = PrivacyBudget(0.5, 0.05)
    with pytest.raises(ConfigError):
        gaussian_mechanism(np.array([np.nan]), 1.0, budget, RNG(2))
    with pytest.raises(ConfigError):
        gaussian_mechanism(np.array([1.0]), -1.0, budget, RNG(2))


# ---------------------------------------------------------------------------
# symmetric matrix mechanism


def test_symmetric_mechanism_output_exactly_symmetric():
    budget = PrivacyBudget(0.5, 0.05)
    m = np.array([[1.0, 0.3], [0.3, 2.0]])
    out, _ = gaussian_mechanism_symmetric(m, 0.1, budget, RNG(3))
    assert np.array_equal(out, out.T)
    noise = out - m
    assert np.array_equal(noise, noise.T)


def test_symmetric_mechanism_rejects_asymmetric_input():
    budget = PrivacyBudget(0.5, 0.05)
    with pytest.raises(ConfigError):
        gaussian_mechanism_symmetric(
            np.array([[1.0, 0.5], [0.0, 1.0]]), 0.1, budget, RNG(4)
        )


def test_symmetric_mechanism_coordinate_variance():
    budget = PrivacyBudget(0.5, 0.05)
    sigma = gaussian_sigma(0.2, budget)
    rng = RNG(5)
    d = 4
    offdiag = []
    diag = []
    for _ in range(3000):
        out, _ = gaussian_mechanism_symmetric(np.zeros((d, d)), 0.2, budget, rng)
        offdiag.append(out[0, 1])
        diag.append(out[2, 2])
    assert np.var(offdiag) == pytest.approx(sigma**2, rel=0.15)
    assert np.var(diag) == pytest.approx(sigma**2, rel=0.15)


def test_symmetric_mechanism_spectral_norm_bound():
    # ||E||_2 concentrates near 2 sigma sqrt(d); the planner budgets
    # SYM_SPECTRAL_FACTOR * sigma * sqrt(d), exceeded in far under 1% of draws
    budget = PrivacyBudget(0.5, 0.05)
    sens = 0.1
    sigma = gaussian_sigma(sens, budget)
    d = 16
    rng = RNG(6)
    bound = SYM_SPECTRAL_FACTOR * sigma * np.sqrt(d)
    bad = 0
    trials = 300
    for _ in range(trials):
        out, _ = gaussian_mechanism_symmetric(np.zeros((d, d)), sens, budget, rng)
        if np.linalg.norm(out, 2) > bound:
            bad += 1
    assert bad / trials <= 0.01


# ---------------------------------------------------------------------------
# stable histogram


def test_histogram_bins_are_floor_indexed():
    out = private_histogram(
        np.array([-0.1, 0.0, 0.99, 1.0, 2.5]),
        1.0,
        PrivacyBudget(0.5, 0.05),
        RNG(7),
        noise=False,
    )
    assert set(out) == {-1, 0, 1, 2}
    assert out[0] == pytest.approx(0.4)


def test_histogram_requires_small_delta():
    values = np.ones(5)
    with pytest.raises(ConfigError):
        private_histogram(values, 1.0, PrivacyBudget(0.5, 0.3), RNG(8))


def test_histogram_empty_input():
    assert private_histogram(np.array([]), 1.0, PrivacyBudget(0.5, 0.05), RNG(9)) == {}


def test_histogram_max_mass_bin_survives():
    # with n large the modal bin's noisy mass clears the threshold whp
    rng = RNG(10)
    values = rng.standard_normal(5000) * 0.1 + 0.5
    budget = PrivacyBudget(0.5, 1e-5)
    released = private_histogram(values, 1.0, budget, rng)
    assert 0 in released
    assert released[0] == pytest.approx(1.0, abs=0.05)


def test_histogram_suppresses_sparse_bins():
    # 200 distinct singleton bins, each mass 1/200: virtually all suppressed
    values = np.arange(200, dtype=float) * 10.0
    budget = PrivacyBudget(0.5, 1e-3)
    released = private_histogram(values, 1.0, budget, RNG(11))
    assert len(released) <= 3


# ---------------------------------------------------------------------------
# ledger


def test_ledger_mixed_composition():
    led = BudgetLedger()
    led.charge("seq1", PrivacyBudget(0.1, 1e-6))
    led.charge("par_a", PrivacyBudget(0.3, 1e-6), kind="chunks")
    led.charge("par_b", PrivacyBudget(0.2, 2e-6), kind="chunks")
    tot = led.total()
    # sequential 0.1 plus the group max (0.3, 2e-6)
    assert tot.epsilon == pytest.approx(0.4)
    assert tot.delta == pytest.approx(3e-6)


def test_ledger_order_independent():
    charges = [
        ("a", PrivacyBudget(0.05, 1e-7), "sequential"),
        ("b", PrivacyBudget(0.1, 1e-6), "grp"),
        ("c", PrivacyBudget(0.02, 1e-7), "sequential"),
        ("d", PrivacyBudget(0.07, 2e-6), "grp"),
    ]
    led1 = BudgetLedger()
    for label, b, kind in charges:
        led1.charge(label, b, kind=kind)
    led2 = BudgetLedger()
    for label, b, kind in reversed(charges):
        led2.charge(label, b, kind=kind)
    assert led1.total() == led2.total()


def test_ledger_assert_within():
    led = BudgetLedger()
    led.charge("a", PrivacyBudget(0.3, 1e-6))
    led.assert_within(PrivacyBudget(0.3, 1e-6))  # exact spend passes
    led.charge("b", PrivacyBudget(0.0001, 1e-8))
    with pytest.raises(OverBudgetError):
        led.assert_within(PrivacyBudget(0.3, 1e-6))


def test_ledger_spent_fraction_and_rows():
    led = BudgetLedger()
    led.charge("a", PrivacyBudget(0.1, 5e-7), sigma=1.25)
    frac = led.spent_fraction(PrivacyBudget(0.2, 1e-6))
    assert frac == pytest.approx(0.5)
    rows = led.as_rows()
    assert rows[0]["label"] == "a" and rows[0]["sigma"] == 1.25


# ---------------------------------------------------------------------------
# sgd noise arithmetic


def test_sgd_noise_sigma_scales_linearly_in_sensitivity():
    budget = PrivacyBudget(0.5, 1e-6)
    s1 = sgd_noise_sigma(1.0, 500, budget)
    s2 = sgd_noise_sigma(0.25, 500, budget)
    assert s2 == pytest.approx(0.25 * s1)


def test_sgd_noise_sigma_rejects_bad_n():
    with pytest.raises(ConfigError):
        sgd_noise_sigma(1.0, 0, PrivacyBudget(0.5, 1e-6))

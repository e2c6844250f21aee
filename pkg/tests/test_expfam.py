"""Family definitions: samplers, statistics, moment matching, rescaling."""

import numpy as np
import pytest

from truncdp import (
    DataBall,
    StatBall,
    all_space,
    gaussian_mean_family,
    gaussian_precision_family,
    pack,
    unpack,
)
from truncdp.expfam import mean_suff_stat_mc, scaled_family
from truncdp.linalg import packed_dim

RNG = np.random.default_rng


# ---------------------------------------------------------------------------
# mean family


def test_mean_family_shapes_and_batch_consistency():
    fam = gaussian_mean_family(3)
    assert fam.data_dim == 3 and fam.stat_dim == 3 and fam.degree == 1
    rng = RNG(0)
    xs = rng.standard_normal((40, 3))
    batch = fam.stats(xs)
    rows = np.stack([fam.statistic(x) for x in xs])
    assert np.allclose(batch, rows)


def test_mean_family_sampler_moments():
    fam = gaussian_mean_family(2)
    theta = np.array([1.5, -0.5])
    rng = RNG(1)
    xs = fam.sampler_batch(theta, 200000, rng)
    assert np.allclose(xs.mean(axis=0), theta, atol=0.01)
    assert np.allclose(np.cov(xs.T), np.eye(2), atol=0.02)


def test_mean_family_sampler_single_matches_batch_law():
    fam = gaussian_mean_family(2)
    theta = np.array([0.7, 0.0])
    rng = RNG(2)
    singles = np.stack([fam.sampler(theta, rng) for _ in range(20000)])
    assert np.allclose(singles.mean(axis=0), theta, atol=0.03)


def test_mean_family_mean_statistic_is_theta():
    fam = gaussian_mean_family(4)
    theta = np.array([0.3, -1.2, 2.0, 0.0])
    assert np.allclose(fam.mean_statistic(theta), theta)


def test_mean_family_anchor_point_hits_tau():
    fam = gaussian_mean_family(3)
    tau = np.array([0.4, -0.6, 1.1])
    anchor = fam.anchor_point(tau)
    assert np.allclose(fam.statistic(anchor), tau)


# ---------------------------------------------------------------------------
# precision family


def test_precision_family_shapes():
    fam = gaussian_precision_family(3, 0.125)
    assert fam.data_dim == 3
    assert fam.stat_dim == packed_dim(3) == 6
    assert fam.degree == 2


def test_precision_family_statistic_matches_packing():
    fam = gaussian_precision_family(2, 0.125)
    x = np.array([1.0, 2.0])
    # T(x) = pack(-x x^T / 2), Frobenius-isometric packing
    expect = pack(-0.5 * np.outer(x, x))
    assert np.allclose(fam.statistic(x), expect)
    got_batch = fam.stats(np.stack([x, 2 * x]))
    assert np.allclose(got_batch[0], expect)


def test_precision_family_sampler_covariance():
    fam = gaussian_precision_family(2, 0.125)
    m = np.array([[10.0, 2.0], [2.0, 9.0]])
    rng = RNG(3)
    xs = fam.sampler_batch(pack(m), 300000, rng)
    cov = np.cov(xs.T)
    assert np.allclose(cov, np.linalg.inv(m), atol=0.003)


def test_precision_family_moment_match_inverts_mean_statistic():
    fam = gaussian_precision_family(3, 0.125)
    m = np.diag([9.0, 10.0, 12.0])
    theta = pack(m)
    tau = fam.mean_statistic(theta)
    # mean statistic is pack(-Sigma/2); moment match undoes it exactly
    assert np.allclose(unpack(tau), -0.5 * np.linalg.inv(m), atol=1e-12)
    assert np.allclose(fam.moment_match(tau), theta, atol=1e-10)


def test_precision_family_in_domain_box():
    fam = gaussian_precision_family(2, 0.125)
    assert fam.in_domain(pack(10.0 * np.eye(2)))
    assert not fam.in_domain(pack(100.0 * np.eye(2)))
    assert not fam.in_domain(pack(np.eye(2)))  # below the lower spectral edge


def test_precision_family_anchor_point_stays_close():
    fam = gaussian_precision_family(2, 0.125)
    tau = fam.mean_statistic(pack(9.0 * np.eye(2)))
    anchor = fam.anchor_point(tau)
    # anchor is a data point whose statistic approximates tau as well as a
    # rank-one -xx^T/2 can approximate a full-rank target: the dominant
    # eigendirection is matched exactly
    t_anchor = unpack(fam.statistic(anchor))
    t_tau = unpack(tau)
    wa = np.linalg.eigvalsh(t_anchor)
    wt = np.linalg.eigvalsh(t_tau)
    assert wa[0] == pytest.approx(wt[0], rel=1e-6)


def test_precision_family_cov_floor_tracks_sigma():
    fam = gaussian_precision_family(2, 0.0625)
    # floor is lam_min(Sigma)^2 / 2, here Sigma = I/10
    assert fam.cov_floor(pack(10.0 * np.eye(2))) == pytest.approx(0.005)


# ---------------------------------------------------------------------------
# rescaling algebra


def test_scaled_family_preserves_inner_product():
    base = gaussian_precision_family(2, 0.125)
    fam = scaled_family(base, 1.0 / 64.0)
    x = np.array([0.3, -0.2])
    theta = pack(9.0 * np.eye(2))
    r = np.sqrt(1.0 / 64.0)
    # theta' . T'(x) = theta . T(x) with theta' = r theta... the scaled
    # coordinates multiply theta by r and divide T by r
    assert np.isclose(
        np.dot(r * theta, fam.statistic(x)) * 1.0,
        np.dot(r * theta, base.statistic(x) / r) * 1.0,
    )
    assert np.allclose(fam.statistic(x), base.statistic(x) / r)


def test_scaled_family_round_trips_moments():
    base = gaussian_precision_family(2, 0.125)
    stat_bound = 1.0 / 64.0
    r = np.sqrt(stat_bound)
    fam = scaled_family(base, stat_bound)
    theta_base = pack(np.array([[9.0, 0.5], [0.5, 10.0]]))
    theta_scaled = r * theta_base
    assert np.allclose(
        fam.mean_statistic(theta_scaled), base.mean_statistic(theta_base) / r
    )
    tau_scaled = fam.mean_statistic(theta_scaled)
    assert np.allclose(fam.moment_match(tau_scaled), theta_scaled, atol=1e-10)
    assert fam.lam == pytest.approx(base.lam / stat_bound)
    assert fam.stat_scale == pytest.approx(r)


def test_scaled_family_sampler_uses_base_coordinates():
    base = gaussian_precision_family(2, 0.125)
    r = np.sqrt(1.0 / 64.0)
    fam = scaled_family(base, 1.0 / 64.0)
    theta_scaled = r * pack(9.0 * np.eye(2))
    rng = RNG(4)
    xs = fam.sampler_batch(theta_scaled, 100000, rng)
    assert np.allclose(np.cov(xs.T), np.eye(2) / 9.0, atol=0.002)


def test_scaled_family_domain_bounds_scale():
    base = gaussian_precision_family(2, 0.125)
    fam = scaled_family(base, 0.25)
    assert fam.domain_bounds[0] == pytest.approx(base.domain_bounds[0] * 0.5)
    assert fam.domain_bounds[1] == pytest.approx(base.domain_bounds[1] * 0.5)


def test_scaled_family_rejects_bad_bound():
    with pytest.raises(ValueError):
        scaled_family(gaussian_mean_family(2), 0.0)


# ---------------------------------------------------------------------------
# truncated-mean Monte Carlo


def test_mean_suff_stat_mc_ball_pulls_mean_inward():
    fam = gaussian_mean_family(2)
    theta = np.array([2.0, 0.0])
    ball = DataBall(1.0)  # centered at the origin, away from theta
    mean = mean_suff_stat_mc(fam, theta, ball, 50000, RNG(5))
    # conditioning on the unit ball caps the first coordinate below 1
    assert 0.0 < mean[0] < 1.0
    assert abs(mean[1]) < 0.05


def test_mean_suff_stat_mc_stat_ball_center():
    fam = gaussian_mean_family(2)
    theta = np.zeros(2)
    sball = StatBall(fam, np.zeros(2), 3.0)
    mean, se = mean_suff_stat_mc(fam, theta, sball, 50000, RNG(6), return_stderr=True)
    assert np.all(np.abs(mean) <= 4.0 * se + 1e-12)

"""Coarse private localization: bounding box, then recursive radius halving.

Both stages produce a statistic-space center for the unknown tau* =
E_{theta*}[T] together with a certified radius, cheaply enough to run before
the SGD stage. The bounding box spends only log-factor sample counts per
coordinate (stable histograms); the recursive warm start then halves its
radius geometrically, each round paying noise proportional to the current
radius, and finishes with one round certified at
alpha_final = 4 ln(1/rho) + 4.

Sizing model used by the planners here: statistic coordinates have O(1)
variance (exact for the identity-covariance mean family, which is the only
family the pipelines currently warm-start), and truncation bias of the
ball-restricted mean is absorbed by the sizing safeties, since every
survival ball keeps a sqrt(m) * rho / (1 - rho) margin around the statistic
fluctuation range.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .expfam import FamilySpec
from .privacy import (
    BudgetLedger,
    PrivacyBudget,
    gaussian_mechanism,
    gaussian_sigma,
    private_histogram,
)
from .truncation import (
    StatBall,
    SurvivalSet,
    TruncatedDataset,
    intersect,
    preprocess,
    raw_rows_for,
    warm_survival_radius,
)

Array = np.ndarray

# Released window per coordinate: the winning histogram bin extended by one
# bin on each side, so the certified per-coordinate half-width is 1.5 bins.
BB_WINDOW_BINS = 3

# Internal sizing safeties. A halving round is sized to land at
# WS_HALF_SAFETY * (radius / 2) so the certified radius/2 holds with margin;
# the final round targets WS_FINAL_SAFETY * alpha_final but never worse than
# half its incoming radius, keeping the certificate conservative.
WS_HALF_SAFETY = 0.7
WS_FINAL_SAFETY = 0.38


def warm_start_final_alpha(rho: float) -> float:
    """Certified statistic-space accuracy of the final round: 4 ln(1/rho) + 4."""
    if not 0.0 < rho <= 1.0:
        raise ConfigError("rho must lie in (0, 1]")
    return 4.0 * math.log(1.0 / rho) + 4.0


def histogram_bin_length(n: int, rho: float, beta: float, eta: float) -> float:
    """Bin length ln(2 n / (rho beta)) / (2 eta) for the localization histograms.

    Long enough that the bin holding the per-coordinate statistic mean keeps
    a constant fraction of the truncated mass, so it survives the stable
    histogram's suppression threshold at the planned sample size.
    """
    if n < 1:
        raise ConfigError("n must be positive")
    if not 0.0 < rho <= 1.0 or not 0.0 < beta < 1.0:
        raise ConfigError("rho in (0, 1] and beta in (0, 1) required")
    if eta <= 0:
        raise ConfigError("eta must be positive")
    return math.log(2.0 * n / (rho * beta)) / (2.0 * eta)


def bounding_box_sample_size(m: int, beta: float, budget: PrivacyBudget) -> int:
    """Rows for the bounding box: the histogram sizing formula at alpha = 1.

    Each of the m coordinate histograms runs on the same rows under a
    (eps/m, delta/m) share and failure share beta/m:
    ceil(8 ln(4 / (beta_c delta_c)) / eps_c + ln(4 / beta_c) / 2).
    """
    if m < 1:
        raise ConfigError("m must be positive")
    if not 0.0 < beta < 1.0:
        raise ConfigError("beta must lie in (0, 1)")
    beta_c = beta / m
    eps_c = budget.epsilon / m
    delta_c = budget.delta / m
    return math.ceil(
        8.0 * math.log(4.0 / (beta_c * delta_c)) / eps_c
        + math.log(4.0 / beta_c) / 2.0
    )


def bounding_box(
    family: FamilySpec,
    data,
    budget: PrivacyBudget,
    beta: float,
    rho: float,
    eta: float,
    seed: int,
    ledger: Optional[BudgetLedger] = None,
    noise: bool = True,
) -> tuple[Array, Array]:
    """Crude localization of tau* by per-coordinate stable histograms.

    Runs one private histogram per statistic coordinate (sequentially
    composed (eps/m, delta/m) shares), takes the winning bin's center as
    that coordinate's estimate, and certifies |tau_j - tau*_j| <= 1.5 s
    per coordinate (window = winning bin plus one bin each side), hence an
    L2 radius of 1.5 s sqrt(m).

    Returns (theta_hat, tau_hat) with theta_hat = projector(moment_match(tau_hat)).
    Raises InsufficientDataError when a coordinate's histogram suppresses
    every bin.
    """
    if isinstance(data, TruncatedDataset):
        data = data.points
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != family.data_dim:
        raise ConfigError("data must be (n, d) for the family's d")
    n = data.shape[0]
    m = family.stat_dim
    stats = family.stats(data)
    s = histogram_bin_length(n, rho, beta, eta)
    budget_c = budget.scale(1.0 / m)
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    tau_hat = np.empty(m)
    for j in range(m):
        released = private_histogram(stats[:, j], s, budget_c, rng, noise=noise)
        if ledger is not None and noise:
            ledger.charge(f"bb_coord{j}", budget_c)
        if not released:
            raise InsufficientDataError(
                f"bounding box: every bin suppressed in coordinate {j} "
                f"(n={n}, bin length {s:.3g})"
            )
        # winning bin: largest released mass, lowest index on ties
        best_bin = min(released, key=lambda k: (-released[k], k))
        tau_hat[j] = (best_bin + 0.5) * s

    theta_hat = family.projector(family.moment_match(tau_hat))
    return theta_hat, tau_hat


def bounding_box_radius(n: int, m: int, rho: float, beta: float, eta: float) -> float:
    """Certified L2 statistic-space radius of the bounding box output."""
    half_bins = 0.5 * BB_WINDOW_BINS
    return half_bins * histogram_bin_length(n, rho, beta, eta) * math.sqrt(m)


def warm_start_schedule(m: int, R: float, rho: float) -> tuple[tuple[float, ...], float]:
    """Radii at the start of each warm-start round, plus the final certificate.

    ceil(log2(R / sqrt(m))) halving rounds take the radius from R down into
    (sqrt(m)/2, sqrt(m)]; one final round then certifies alpha_final(rho).
    R <= sqrt(m) yields the single final round. Radii halve exactly.
    """
    if R <= 0:
        raise ConfigError("R must be positive")
    root_m = math.sqrt(m)
    v = max(0, math.ceil(math.log2(R / root_m)))
    radii = tuple(R / (2.0**i) for i in range(v + 1))
    return radii, warm_start_final_alpha(rho)


@dataclass(frozen=True)
class WarmStartPlan:
    """Deterministic sizing of every warm-start round.

    radii[i] is the certified statistic-space radius entering round i;
    targets[i] the accuracy certified on exit (radius/2 for halving rounds,
    alpha_final for the last). round_rows are filtered rows per round,
    slice_rows the raw rows reserved to obtain them under survival mass rho.
    """

    radii: tuple
    targets: tuple
    round_rows: tuple
    slice_rows: tuple
    round_budget: PrivacyBudget
    round_beta: float
    alpha_final: float

    @property
    def rounds(self) -> int:
        return len(self.radii)

    @property
    def raw_needed(self) -> int:
        return int(sum(self.slice_rows))


def _round_rows(
    m: int,
    radius: float,
    target: float,
    budget: PrivacyBudget,
    beta_round: float,
) -> int:
    """Rows for one round so empirical + noise error stays within target.

    The two error terms are sized at target/sqrt(2) each (they add roughly
    in quadrature): the empirical mean of n unit-variance-coordinate
    statistics deviates by at most (sqrt(m) + sqrt(2 ln(2/beta)))/sqrt(n),
    and the Gaussian release at sensitivity 2 (radius + sqrt(m)) / n deviates
    by at most sigma (sqrt(m) + sqrt(2 ln(2/beta))).
    """
    t = target / math.sqrt(2.0)
    quant = math.sqrt(m) + math.sqrt(2.0 * math.log(2.0 / beta_round))
    n_emp = math.ceil((quant / t) ** 2)
    n_noise = math.ceil(
        4.0
        * (radius + math.sqrt(m))
        * math.log(1.25 / budget.delta)
        * quant
        / (budget.epsilon * t)
    )
    return max(n_emp, n_noise)


def plan_warm_start(
    m: int,
    R: float,
    rho: float,
    budget: PrivacyBudget,
    beta: float,
) -> WarmStartPlan:
    """Size every round of the recursive warm start ahead of time.

    All radii and targets are data-independent, so raw-data requirements can
    be computed before seeing a single row. The budget and failure
    probability are split evenly across rounds.
    """
    if not 0.0 < rho < 1.0:
        raise ConfigError("warm start needs rho in (0, 1)")
    if not 0.0 < beta < 1.0:
        raise ConfigError("beta must lie in (0, 1)")
    radii, alpha_final = warm_start_schedule(m, R, rho)
    rounds = len(radii)
    round_budget = budget.scale(1.0 / rounds)
    beta_r = beta / rounds

    targets = []
    sizing = []
    for i, r in enumerate(radii):
        if i < rounds - 1:
            certified = r / 2.0
            sizing.append(WS_HALF_SAFETY * certified)
        else:
            certified = alpha_final
            sizing.append(min(WS_FINAL_SAFETY * alpha_final, 0.5 * r))
        targets.append(certified)

    round_rows = tuple(
        _round_rows(m, r, t, round_budget, beta_r) for r, t in zip(radii, sizing)
    )
    slice_rows = tuple(raw_rows_for(n, rho, beta_r / 2.0) for n in round_rows)
    return WarmStartPlan(
        radii=radii,
        targets=tuple(targets),
        round_rows=round_rows,
        slice_rows=slice_rows,
        round_budget=round_budget,
        round_beta=beta_r,
        alpha_final=alpha_final,
    )


def warm_start_one_step(
    family: FamilySpec,
    data,
    budget: PrivacyBudget,
    alpha: float,
    R: float,
    rho: float,
    seed: int,
    ledger: Optional[BudgetLedger] = None,
    noise: bool = True,
    label: str = "warm_start",
) -> Array:
    """One noisy truncated empirical mean at sensitivity 2 (R + sqrt(m)) / n.

    data must already be filtered to the round's survival ball. alpha is the
    accuracy this round claims; the call refuses (ConfigError) when the noise
    alone, at this data size and budget, already exceeds it in rms.
    """
    if isinstance(data, TruncatedDataset):
        data = data.points
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if n < 1:
        raise InsufficientDataError("warm start round received no rows")
    m = family.stat_dim
    sens = 2.0 * (R + math.sqrt(m)) / n
    sigma = gaussian_sigma(sens, budget)
    if noise and sigma * math.sqrt(m) > alpha:
        raise ConfigError(
            f"round of n={n} cannot reach alpha={alpha:.3g}: "
            f"noise rms is {sigma * math.sqrt(m):.3g}"
        )
    tau_bar = family.stats(data).mean(axis=0)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    released, sigma = gaussian_mechanism(tau_bar, sens, budget, rng, noise=noise)
    if ledger is not None and noise:
        ledger.charge(label, budget, sigma=sigma)
    return released


def recursive_warm_start(
    family: FamilySpec,
    raw,
    budget: PrivacyBudget,
    theta0: Array,
    tau0: Array,
    R: float,
    rho: float,
    seed: int,
    beta: float = 0.05,
    ledger: Optional[BudgetLedger] = None,
    noise: bool = True,
    known_survival: Optional[SurvivalSet] = None,
) -> tuple[Array, Array]:
    """Radius-halving localization from ||tau0 - tau*|| <= R down to alpha_final.

    Each round filters a fresh disjoint slice of raw rows into the ball
    B(tau_i, sqrt(m)/(1-rho) + R_i), releases the noisy mean of their
    statistics, and recenters; radii halve exactly until they reach sqrt(m),
    then a final round certifies alpha_final = 4 ln(1/rho) + 4. Returns
    (theta_hat, tau_hat) with theta_hat = projector(moment_match(tau_hat)).

    Raw rows are consumed in plan order; too few rows for the planned slices
    raises InsufficientDataError (size with plan_warm_start). A noisy mean
    landing more than 6 sigma sqrt(m) outside its round's ball triggers a
    drift warning: the incoming center was likely bad.
    """
    if isinstance(raw, TruncatedDataset):
        raw = raw.points
    raw = np.asarray(raw, dtype=float)
    m = family.stat_dim
    plan = plan_warm_start(m, R, rho, budget, beta)
    if raw.shape[0] < plan.raw_needed:
        raise InsufficientDataError(
            f"warm start needs {plan.raw_needed} raw rows, got {raw.shape[0]}"
        )

    children = np.random.SeedSequence(seed).spawn(plan.rounds)
    tau_cur = np.asarray(tau0, dtype=float).copy()
    cursor = 0
    for i in range(plan.rounds):
        r_i = plan.radii[i]
        n_i = plan.round_rows[i]
        take = plan.slice_rows[i]
        chunk = raw[cursor : cursor + take]
        cursor += take
        ball_r = warm_survival_radius(m, rho, r_i)
        survival = intersect(known_survival, StatBall(family, tau_cur, ball_r))
        dummy = (
            family.anchor_point(tau_cur) if family.anchor_point is not None else None
        )
        pre_seed, step_seed = (
            int(s) for s in children[i].generate_state(2, dtype=np.uint64)
        )
        dataset = preprocess(chunk, survival, n_i, dummy, pre_seed)
        tau_next = warm_start_one_step(
            family,
            dataset,
            plan.round_budget,
            plan.targets[i],
            r_i,
            rho,
            step_seed,
            ledger=ledger,
            noise=noise,
            label=f"ws_round{i}",
        )
        sigma = gaussian_sigma(2.0 * (r_i + math.sqrt(m)) / n_i, plan.round_budget)
        drift = float(np.linalg.norm(tau_next - tau_cur))
        if drift > ball_r + 6.0 * sigma * math.sqrt(m):
            warnings.warn(
                f"warm start round {i}: released mean drifted {drift:.3g} "
                f"from its ball (radius {ball_r:.3g}); center may be invalid",
                RuntimeWarning,
            )
        tau_cur = tau_next

    theta_hat = family.projector(family.moment_match(tau_cur))
    return theta_hat, tau_cur

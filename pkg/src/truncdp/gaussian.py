"""End-to-end Gaussian estimators: mean, and covariance via preconditioning.

Mean estimation is a thin instantiation of the generic pipeline on the
identity-covariance mean family (its planner hints are exact there). The
covariance path is the composite:

    rescale        x -> x / sqrt(8 Lambda)           (now Sigma <= I/8)
    truncate       keep ||x|| <= sqrt(d)/(1 - rho)
    precondition   recursive noisy second moments -> Sigma_rough
    whiten         w = Sigma_rough^{-1/2} x / s,  s^2 = 8 c2 ln(1/rho)
    estimate       generic pipeline on the packed precision family of w
    unwind         Sigma_hat = 8 Lambda s^2 Sigma_rough^{1/2} M_w^{-1}
                   Sigma_rough^{1/2}

The whitening scale s is chosen so that whenever the preconditioner meets its
spectral sandwich, the precision matrix of w lands well inside the family's
parameter box, with curvature bounded away from zero independently of the
original condition number Lambda/lambda.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import linalg
from .errors import ConditioningError, ConfigError, InsufficientDataError
from .estimator import (
    PipelinePlan,
    Prior,
    estimate_exp_family,
    plan_exp_family,
)
from .expfam import (
    FamilySpec,
    gaussian_mean_family,
    gaussian_precision_family,
    scaled_family,
)
from .privacy import (
    SYM_SPECTRAL_FACTOR,
    BudgetLedger,
    PrivacyBudget,
    gaussian_mechanism_symmetric,
    gaussian_sigma,
)
from .report import EstimatorReport, StageRecord
from .truncation import DataBall, TruncatedDataset, preprocess, raw_rows_for

Array = np.ndarray

# re-exported matrix helpers
pack = linalg.pack_symmetric
unpack = linalg.unpack_symmetric
sym_eig = linalg.sym_eig


def inv_sqrt(a: Array) -> Array:
    """Inverse principal square root of a positive-definite matrix."""
    a = np.asarray(a, dtype=float)
    w, q = linalg.sym_eig(a)
    if w[0] <= 0:
        raise ConditioningError("inv_sqrt needs a positive-definite matrix")
    return (q * (1.0 / np.sqrt(w))) @ q.T


# ---------------------------------------------------------------- mean


def plan_mean(
    d: int,
    budget: PrivacyBudget,
    alpha: float,
    beta: float,
    rho: float = 0.5,
    prior: Optional[Prior] = None,
    sgd_rows: Optional[int] = None,
) -> PipelinePlan:
    """Pipeline sizing for the mean task (exact planner hints: unit covariance)."""
    family = gaussian_mean_family(d)
    return plan_exp_family(
        family, budget, alpha, beta, rho=rho, prior=prior,
        curvature_floor=1.0, cov_trace=float(d), lipschitz_hint=1.0,
        sgd_rows=sgd_rows,
    )


def estimate_mean(
    raw,
    budget: PrivacyBudget,
    alpha: float,
    beta: float,
    seed: int,
    rho: float = 0.5,
    prior: Optional[Prior] = None,
    noise: bool = True,
    sgd_rows: Optional[int] = None,
    full_report: bool = False,
):
    """(eps, delta)-DP mean of N(mu, I_d): ||mu_hat - mu|| <= alpha w.p. 1 - beta.

    Returns the estimate vector, or the whole EstimatorReport with
    full_report=True. Size raw datasets with plan_mean(...).raw_needed.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ConfigError("raw must be a (n, d) array")
    d = raw.shape[1]
    family = gaussian_mean_family(d)
    report = estimate_exp_family(
        family, raw, budget, alpha, beta, seed, rho=rho, prior=prior,
        noise=noise, curvature_floor=1.0, cov_trace=float(d),
        lipschitz_hint=1.0, sgd_rows=sgd_rows,
    )
    report.task = "mean"
    if full_report:
        return report
    return np.asarray(report.theta, dtype=float)


# ------------------------------------------------------- preconditioner

# Sandwich constants the preconditioner is tested against:
# PRECOND_C1 rho^2 I <= Sigma*^{-1/2} Sigma_hat Sigma*^{-1/2}
#                    <= PRECOND_C2 log(1/rho) I.
PRECOND_C1 = 0.1
PRECOND_C2 = 4.0

# Per-iteration spectral noise allowance on the privatized second moment.
# U = Z + I/4 stays positive definite as long as the noise stays below 1/4;
# 1/16 keeps the sandwich recursion's contraction visibly intact.
PRECOND_NOISE_TARGET = 1.0 / 16.0


def covariance_data_radius(d: int, rho: float) -> float:
    """DataBall radius sqrt(d)/(1 - rho) used by the covariance pipeline."""
    if not 0.0 < rho < 1.0:
        raise ConfigError("rho must lie in (0, 1)")
    return math.sqrt(d) / (1.0 - rho)


def precondition_kappa(lam: float, rho: float) -> float:
    """Condition proxy kappa' = 8 log(2/rho) / (lam rho^2)."""
    if lam <= 0:
        raise ConfigError("lam must be positive")
    if not 0.0 < rho < 1.0:
        raise ConfigError("rho must lie in (0, 1)")
    return 8.0 * math.log(2.0 / rho) / (lam * rho * rho)


def precondition_rounds(lam: float, rho: float) -> int:
    """Iteration count v = ceil(log2 kappa')."""
    return max(1, math.ceil(math.log2(precondition_kappa(lam, rho))))


def precondition_clip_radius(n: int, d: int, rho: float, beta: float) -> float:
    """Clip radius 1.25 (sqrt(d) + sqrt(2 ln(2 n d / (rho beta)))).

    Sized so clipping is a no-op on every point w.h.p.: transformed
    coordinates have variance at most 1.25 throughout the recursion (the
    sandwich never exceeds 1 plus the noise allowance), and the additive
    term covers an n d union bound at mass rho.
    """
    if n < 1 or d < 1:
        raise ConfigError("n and d must be positive")
    if not 0.0 < rho < 1.0 or not 0.0 < beta < 1.0:
        raise ConfigError("rho and beta must lie in (0, 1)")
    return 1.25 * (math.sqrt(d) + math.sqrt(2.0 * math.log(2.0 * n * d / (rho * beta))))


def precondition_sample_size(
    d: int, lam: float, rho: float, budget: PrivacyBudget, beta: float
) -> int:
    """Rows so each iteration's spectral noise stays below PRECOND_NOISE_TARGET.

    The symmetric Gaussian mechanism at per-iteration budget (eps, delta)/v
    and sensitivity 2 R^2 / n has spectral norm about
    SYM_SPECTRAL_FACTOR sigma sqrt(d); solve that against the target. The
    clip radius depends on n only through a log, so a short fixed-point
    iteration settles it. An empirical-moment floor keeps the noiseless
    second moment itself accurate to half the target.
    """
    v = precondition_rounds(lam, rho)
    per_iter = budget.scale(1.0 / v)
    n_emp = math.ceil(1.0e4 * (d + 2.0 * math.log(2.0 * v / beta)))
    n = max(n_emp, 4096)
    for _ in range(4):
        r_clip = precondition_clip_radius(n, d, rho, beta)
        n_noise = math.ceil(
            4.0
            * r_clip**2
            * math.log(1.25 / per_iter.delta)
            * SYM_SPECTRAL_FACTOR
            * math.sqrt(d)
            / (per_iter.epsilon * PRECOND_NOISE_TARGET)
        )
        n = max(n_emp, n_noise)
    return n


@dataclass
class PreconditionerState:
    """Final preconditioner A with its per-iteration diagnostics."""

    a: Array
    iteration: int
    kappa_prime: float
    clip_radius: float
    sigma: float
    z: Array
    cond_history: list = field(default_factory=list)
    clip_fractions: list = field(default_factory=list)


def precondition_covariance(
    data,
    budget: PrivacyBudget,
    beta: float,
    lam: float,
    rho: float,
    seed: int,
    ledger: Optional[BudgetLedger] = None,
    noise: bool = True,
    return_state: bool = False,
):
    """Rough covariance of ball-truncated N(0, Sigma), Sigma in [lam I, I/8].

    v = ceil(log2 kappa') iterations, kappa' = 8 log(2/rho)/(lam rho^2),
    starting from A = I/sqrt(kappa'): transform rows by A, clip to the
    no-op radius, privatize the empirical second moment (Frobenius
    sensitivity 2 R^2/n per swap), set U = Z + I/4 and
    A <- sym(U^{-1/2} A). Returns A^{-1} Z_final A^{-1} with A from the last
    transform, which satisfies
    PRECOND_C1 rho^2 I <= Sigma^{-1/2} Sigma_hat Sigma^{-1/2}
    <= PRECOND_C2 log(1/rho) I w.p. 1 - beta at the planned sample size.

    U (or the symmetrized A) losing positive definiteness aborts with
    ConditioningError. Budget splits evenly across iterations, charged
    sequentially.
    """
    if isinstance(data, TruncatedDataset):
        data = data.points
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ConfigError("data must be a (n, d) array")
    n, d = data.shape
    if n < 2:
        raise InsufficientDataError("preconditioner needs at least 2 rows")
    kappa = precondition_kappa(lam, rho)
    v = precondition_rounds(lam, rho)
    per_iter = budget.scale(1.0 / v)
    r_clip = precondition_clip_radius(n, d, rho, beta)
    sens = 2.0 * r_clip**2 / n
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    a = np.eye(d) / math.sqrt(kappa)
    z = np.zeros((d, d))
    sigma = 0.0
    state = PreconditionerState(
        a=a, iteration=0, kappa_prime=kappa, clip_radius=r_clip, sigma=sigma, z=z
    )
    for i in range(v):
        w = data @ a  # A symmetric, rows transformed as A x
        norms = np.linalg.norm(w, axis=1)
        over = norms > r_clip
        clip_frac = float(np.mean(over))
        if np.any(over):
            w = w.copy()
            w[over] *= (r_clip / norms[over])[:, None]
        z_emp = (w.T @ w) / n
        z, sigma = gaussian_mechanism_symmetric(z_emp, sens, per_iter, rng, noise=noise)
        if ledger is not None and noise:
            ledger.charge(f"precond_iter{i}", per_iter, sigma=sigma)
        state.iteration = i + 1
        state.clip_fractions.append(clip_frac)
        wz, _ = linalg.sym_eig(z)
        state.cond_history.append(
            float(wz[-1] / wz[0]) if wz[0] > 0 else float("inf")
        )
        if clip_frac > beta:
            warnings.warn(
                f"preconditioner iteration {i}: clipped {clip_frac:.1%} of rows "
                f"(allowance {beta:.1%}); radius model may not hold",
                RuntimeWarning,
            )
        if i == v - 1:
            break
        u = z + 0.25 * np.eye(d)
        wu, qu = linalg.sym_eig(u)
        if wu[0] <= 1e-10:
            raise ConditioningError(
                f"preconditioner iteration {i}: U has min eigenvalue {wu[0]:.3g}"
            )
        u_inv_half = (qu * (1.0 / np.sqrt(wu))) @ qu.T
        a_next = u_inv_half @ a
        a = 0.5 * (a_next + a_next.T)  # commutator term is noise-order; project back
        wa, _ = linalg.sym_eig(a)
        if wa[0] <= 0:
            raise ConditioningError(
                f"preconditioner iteration {i}: A lost positive definiteness"
            )

    a_inv = linalg.inv_psd(a)
    sigma_hat = a_inv @ z @ a_inv
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)
    state.a = a
    state.sigma = sigma
    state.z = z
    if return_state:
        return sigma_hat, state
    return sigma_hat


# ----------------------------------------------------------- covariance

# Whitened-precision trust model. The preconditioner's noise target keeps its
# output within about +-15% of the truncated covariance spectrally whenever
# the recursion converged, so the whitened precision M_w = s^2 I / sandwich
# is planned inside TRUST_BAND * s^2 and boxed (parameter set) inside
# TRUST_BOX * s^2. Planner hints below derive from the band; the box feeds
# the family construction. Both are bets on calibration, not certificates;
# the end-to-end error tolerance absorbs band misses.
COV_TRUST_BAND = (0.85, 1.15)
COV_TRUST_BOX = (0.5, 2.0)

# Statistic-space covariance ceiling for the whitened precision family:
# Cov[T] eigenvalues are sigma_i sigma_j / 2 <= (1/8)^2 / 2 = 1/128; one
# power of two of slack.
COV_STAT_BOUND = 1.0 / 64.0

# The family's parameter box must contain TRUST_BOX * s^2; with
# s^2 = 8 c2 ln(2) = 22.18 the box [7, 64] does, so the construction floor
# 2/64 = 1/32 is used for the packed precision family.
COV_FAMILY_LAM = 1.0 / 32.0

# theta-space accuracy passed to the SGD stage: relative Frobenius error of
# the final covariance is at most ~0.67 per unit of scaled-parameter error
# inside the trust band, so alpha_sgd = COV_PARAM_ALPHA_FACTOR * alpha.
COV_PARAM_ALPHA_FACTOR = 1.5


def whiten_scale(rho: float) -> float:
    """s with s^2 = 8 c2 log(1/rho): divisor making whitened covariance <= I/8."""
    if not 0.0 < rho < 1.0:
        raise ConfigError("rho must lie in (0, 1)")
    return math.sqrt(8.0 * PRECOND_C2 * math.log(1.0 / rho))


def whiten_rows(x: Array, sigma_rough: Array, s: float) -> Array:
    """w = Sigma_rough^{-1/2} x / s applied to rows."""
    root_inv = inv_sqrt(sigma_rough)
    return np.asarray(x, dtype=float) @ root_inv.T / s


def unwind_covariance(m_w: Array, sigma_rough: Array, s: float, scale_back: float) -> Array:
    """Invert the whitening: Sigma = scale_back s^2 Sigma_rough^{1/2} M_w^{-1} Sigma_rough^{1/2}."""
    root = linalg.sqrtm_psd(np.asarray(sigma_rough, dtype=float))
    inner = linalg.inv_psd(np.asarray(m_w, dtype=float))
    out = scale_back * s * s * (root @ inner @ root)
    return 0.5 * (out + out.T)


def _whitened_family(d: int) -> FamilySpec:
    return scaled_family(gaussian_precision_family(d, COV_FAMILY_LAM), COV_STAT_BOUND)


def _whitened_prior(d: int, s: float) -> Prior:
    family = _whitened_family(d)
    r = math.sqrt(COV_STAT_BOUND)  # theta' = r * theta
    theta0 = linalg.pack_symmetric(s * s * np.eye(d)) * r
    lo, hi = COV_TRUST_BOX
    # worst Frobenius distances over the trust box: parameters differ by at
    # most sqrt(d) s^2 max(1-lo, hi-1), statistics tau' = -C/(2r) by
    # sqrt(d)/(2 r s^2) max(1/lo - 1, 1 - 1/hi) since C = (M/s^2)^{-1}/s^2
    radius_param = r * math.sqrt(d) * s * s * max(1.0 - lo, hi - 1.0)
    radius_stat = (0.5 / r) * math.sqrt(d) * max(1.0 / lo - 1.0, 1.0 - 1.0 / hi) / (s * s)
    return Prior(
        theta0=theta0,
        radius_param=radius_param,
        radius_stat=radius_stat,
        tau0=family.mean_statistic(theta0),
    )


@dataclass(frozen=True)
class CovariancePlan:
    """Static sizing of the covariance pipeline."""

    d: int
    rho: float
    lam_rescaled: float
    kappa_prime: float
    rounds: int
    n_pre: int
    pre_slice: int
    pre_budget: PrivacyBudget
    main_budget: PrivacyBudget
    beta_pre: float
    beta_main: float
    s: float
    scale_back: float
    alpha_sgd: float
    main: PipelinePlan

    @property
    def raw_needed(self) -> int:
        return self.pre_slice + self.main.raw_needed


def plan_covariance(
    d: int,
    budget: PrivacyBudget,
    alpha: float,
    beta: float,
    lam: float,
    big_lam: float,
    rho: float = 0.5,
    sgd_rows: Optional[int] = None,
) -> CovariancePlan:
    """Size the covariance pipeline: 30% budget to preconditioning, 70% to SGD.

    Failure probability splits 1/3 preconditioner, 2/3 main pipeline. The
    original condition number Lambda/lambda enters only the preconditioner's
    sample count (through kappa'); the SGD stage is sized entirely from the
    whitened trust band.
    """
    if not 0.0 < lam <= big_lam:
        raise ConfigError("need 0 < lam <= Lambda")
    if alpha <= 0 or not 0.0 < beta < 1.0:
        raise ConfigError("alpha must be positive and beta in (0, 1)")
    lam_r = lam / (8.0 * big_lam)
    pre_budget = budget.scale(0.3)
    main_budget = budget.scale(0.7)
    beta_pre = beta / 3.0
    beta_main = 2.0 * beta / 3.0
    n_pre = precondition_sample_size(d, lam_r, rho, pre_budget, beta_pre)
    pre_slice = raw_rows_for(n_pre, rho, beta_pre / 2.0)
    s = whiten_scale(rho)
    m = linalg.packed_dim(d)

    lo_b, hi_b = COV_TRUST_BAND
    # scaled statistic covariance over the band: eigenvalues c_i c_j / 2
    # with c in [lo_b, hi_b]/s^2, all divided by COV_STAT_BOUND
    floor = (lo_b / (s * s)) ** 2 / 2.0 / COV_STAT_BOUND
    trace = m * (hi_b / (s * s)) ** 2 / 2.0 / COV_STAT_BOUND
    alpha_sgd = COV_PARAM_ALPHA_FACTOR * alpha
    prior = _whitened_prior(d, s)
    family = _whitened_family(d)
    main = plan_exp_family(
        family, main_budget, alpha_sgd, beta_main, rho=rho, prior=prior,
        curvature_floor=floor, cov_trace=trace, sgd_rows=sgd_rows,
    )
    return CovariancePlan(
        d=d,
        rho=rho,
        lam_rescaled=lam_r,
        kappa_prime=precondition_kappa(lam_r, rho),
        rounds=precondition_rounds(lam_r, rho),
        n_pre=n_pre,
        pre_slice=pre_slice,
        pre_budget=pre_budget,
        main_budget=main_budget,
        beta_pre=beta_pre,
        beta_main=beta_main,
        s=s,
        scale_back=8.0 * big_lam,
        alpha_sgd=alpha_sgd,
        main=main,
    )


def estimate_covariance(
    raw,
    budget: PrivacyBudget,
    alpha: float,
    beta: float,
    lam: float,
    big_lam: float,
    seed: int,
    rho: float = 0.5,
    noise: bool = True,
    sgd_rows: Optional[int] = None,
    full_report: bool = False,
):
    """(eps, delta)-DP covariance of N(0, Sigma), lam I <= Sigma <= Lambda I.

    Guarantee: ||I - Sigma^{-1/2} Sigma_hat Sigma^{-1/2}||_F <= alpha w.p.
    1 - beta at the planned sample size. Returns the d x d estimate, or the
    EstimatorReport (theta = Sigma_hat) with full_report=True. Size raw with
    plan_covariance(...).raw_needed.
    """
    t_start = time.perf_counter()
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ConfigError("raw must be a (n, d) array")
    d = raw.shape[1]
    plan = plan_covariance(d, budget, alpha, beta, lam, big_lam, rho=rho,
                           sgd_rows=sgd_rows)
    if raw.shape[0] < plan.raw_needed:
        raise InsufficientDataError(
            f"covariance pipeline needs {plan.raw_needed} raw rows, "
            f"got {raw.shape[0]}"
        )
    ledger = BudgetLedger()
    ss_pre, ss_main = np.random.SeedSequence(seed).spawn(2)
    pre_seed, prep_seed = (int(v) for v in ss_pre.generate_state(2, dtype=np.uint64))
    main_seed = int(ss_main.generate_state(1, dtype=np.uint64)[0])

    x_r = raw / math.sqrt(plan.scale_back)
    ball = DataBall(covariance_data_radius(d, rho))
    pre_rows = preprocess(
        x_r[: plan.pre_slice], ball, plan.n_pre, np.zeros(d), prep_seed
    )
    sigma_rough = precondition_covariance(
        pre_rows, plan.pre_budget, plan.beta_pre, plan.lam_rescaled, rho,
        pre_seed, ledger=ledger, noise=noise,
    )
    w_rough, _ = linalg.sym_eig(sigma_rough)
    if w_rough[0] <= 0:
        raise ConditioningError(
            f"rough covariance is not positive definite (min eig {w_rough[0]:.3g})"
        )

    # whiten the fresh slice; its DataBall truncation is ignored for the
    # sampler: at radius sqrt(d)/(1-rho) with Sigma <= I/8 the excluded mass
    # is below machine precision
    fresh = x_r[plan.pre_slice :]
    w_all = whiten_rows(fresh, sigma_rough, plan.s)
    family = _whitened_family(d)
    prior = _whitened_prior(d, plan.s)
    report = estimate_exp_family(
        family, w_all, plan.main_budget, plan.alpha_sgd, plan.beta_main,
        main_seed, rho=rho, prior=prior, noise=noise, ledger=ledger,
        plan=plan.main,
    )

    r = math.sqrt(COV_STAT_BOUND)
    m_w = linalg.unpack_symmetric(np.asarray(report.theta, dtype=float) / r)
    sigma_hat = unwind_covariance(m_w, sigma_rough, plan.s, plan.scale_back)

    if noise:
        ledger.assert_within(budget)
    total = ledger.total()
    stages = [
        StageRecord(
            name="preconditioner",
            rows=plan.n_pre,
            raw_rows=plan.pre_slice,
            epsilon=plan.pre_budget.epsilon,
            delta=plan.pre_budget.delta,
            detail={"rounds": plan.rounds, "kappa_prime": plan.kappa_prime},
        )
    ] + report.stages
    out = EstimatorReport(
        task="covariance",
        theta=sigma_hat,
        n_raw=int(raw.shape[0]),
        alpha=alpha,
        beta=beta,
        epsilon=budget.epsilon,
        delta=budget.delta,
        epsilon_spent=total.epsilon,
        delta_spent=total.delta,
        seed=seed,
        chunks=report.chunks,
        boost_confident=report.boost_confident,
        iterations=report.iterations,
        stages=stages,
        wall_ms=(time.perf_counter() - t_start) * 1e3,
        extra={
            "s": plan.s,
            "alpha_sgd": plan.alpha_sgd,
            "n_pre": plan.n_pre,
            "n_sgd": plan.main.n_sgd,
            "raw_needed": plan.raw_needed,
        },
    )
    if full_report:
        return out
    return sigma_hat

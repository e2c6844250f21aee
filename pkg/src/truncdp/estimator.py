"""Private estimation core: noisy projected SGD on the truncated likelihood.

The gradient of the truncated negative log-likelihood at theta, for one data
point x, is E_{y ~ q_theta | S}[T(y)] - T(x); a single conditioned draw y
gives the unbiased one-sample estimate T(y) - T(x). The SGD stage runs n^2
such steps over an n-row dataset with per-step Gaussian noise calibrated so
the whole trajectory is (eps, delta)-DP, projecting every iterate back onto
K = B(theta0, 2R) intersected with the family's parameter set.

The pipeline entry point estimate_exp_family chains bounding box ->
recursive warm start -> several independent SGD chunks -> boosting, splitting
the privacy budget 20/20/60 across the three stages (40/60 when a prior
replaces the bounding box, everything to SGD when the warm start cannot
shrink the prior further).
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import (
    ConditioningError,
    ConfigError,
    InsufficientDataError,
    RejectionCapExceeded,
)
from .expfam import FamilySpec
from .privacy import BudgetLedger, PrivacyBudget, sgd_noise_sigma
from .report import EstimatorReport, StageRecord
from .truncation import (
    StatBall,
    SurvivalSet,
    TruncatedDataset,
    _AllSpace,
    default_rejection_cap,
    intersect,
    preprocess,
    raw_rows_for,
    rejection_sample_truncated,
    sgd_survival_radius,
)
from .warmstart import (
    bounding_box,
    bounding_box_radius,
    bounding_box_sample_size,
    plan_warm_start,
    recursive_warm_start,
    warm_start_final_alpha,
    WarmStartPlan,
)

Array = np.ndarray

# Anti-concentration constant in the certified curvature bound.
C_ANTI = 1.0
# Bernstein-exponent constant in the uniform-convergence sample size.
C_UC = 8.0

# Planner model constants, calibrated on the Gaussian families. The step
# size uses a fraction of the statistic-covariance floor (the certified
# strong_convexity_constant is astronomically small in R and would make
# early steps explode); C_TRUNC discounts the same floor for the mild
# covariance shrinkage the survival ball causes.
C_STEP = 0.35
C_TRUNC = 0.7

# Run the warm start only when its certified output radius would beat this
# fraction of the incoming radius; otherwise its budget goes to SGD.
WS_GAIN = 0.5


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def strong_convexity_constant(lam: float, rho: float, R: float, k: int) -> float:
    """Certified curvature of the truncated NLL over the SGD survival set.

    (1/2) * (rho^2 e^{-6 R^2} / (4 C_ANTI k))^{2k} * lam. Deliberately
    worst-case: it holds for every degree-k family at survival mass rho and
    start radius R, and it decays so fast in R that the planners use measured
    covariance floors for step sizes, keeping this value as the guaranteed
    fallback and the quantity the curvature audit checks against.
    """
    if not 0.0 < rho <= 1.0:
        raise ConfigError("rho must lie in (0, 1]")
    if k < 1:
        raise ConfigError("k must be a positive integer")
    if lam <= 0 or R < 0:
        raise ConfigError("lam must be positive and R nonnegative")
    base = rho**2 * math.exp(-6.0 * R * R) / (4.0 * C_ANTI * k)
    return 0.5 * base ** (2 * k) * lam


def survival_curvature_floor(lam: float, rho: float, k: int) -> float:
    """Radius-free fallback curvature: (1/2) (rho / (4 C_ANTI k))^{2k} lam.

    Used by planners when no family-specific covariance floor is available;
    drops the e^{-6R^2} factor of the certified bound, which models the loss
    from conditioning on a mass-rho set but not the start distance.
    """
    if not 0.0 < rho <= 1.0:
        raise ConfigError("rho must lie in (0, 1]")
    if k < 1:
        raise ConfigError("k must be a positive integer")
    if lam <= 0:
        raise ConfigError("lam must be positive")
    return 0.5 * (rho / (4.0 * C_ANTI * k)) ** (2 * k) * lam


def uniform_convergence_sample_size(
    m: int, R: float, lam: float, eta: float, alpha: float, beta: float
) -> int:
    """Rows so the empirical truncated MLE lands within alpha w.p. 1 - beta.

    ceil(C_UC (m + R^2) ln(1/beta) / (lam^2 eta^4 alpha^2)).
    """
    if m < 1:
        raise ConfigError("m must be positive")
    if not 0.0 < alpha or not 0.0 < beta < 1.0:
        raise ConfigError("alpha must be positive and beta in (0, 1)")
    if lam <= 0 or eta <= 0 or R < 0:
        raise ConfigError("lam, eta must be positive and R nonnegative")
    return math.ceil(
        C_UC * (m + R * R) * math.log(1.0 / beta) / (lam**2 * eta**4 * alpha**2)
    )


def gradient_estimate(
    family: FamilySpec,
    theta: Array,
    x: Array,
    survival: SurvivalSet,
    cap: int,
    rng,
) -> tuple[Array, int]:
    """One-sample gradient of the truncated NLL: T(y) - T(x), y ~ q_theta | S.

    Returns (gradient, rejection attempts used for y).
    """
    rng = _as_rng(rng)
    y, attempts = rejection_sample_truncated(family, theta, survival, cap, rng)
    x = np.asarray(x, dtype=float)
    g = family.statistic(y) - family.statistic(x)
    return g, attempts


def dykstra_project(
    point: Array,
    ball_center: Array,
    ball_radius: float,
    set_projector,
    max_iter: int = 10_000,
    tol: float = 1e-9,
) -> Array:
    """Project onto B(ball_center, ball_radius) intersected with a convex set.

    Dykstra's alternating projections, the second set entering through its
    exact projector. Stops when a full sweep moves the iterate less than tol,
    or after max_iter sweeps.
    """
    x = np.asarray(point, dtype=float).copy()
    center = np.asarray(ball_center, dtype=float)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iter):
        y = x + p
        off = y - center
        dist = np.linalg.norm(off)
        if dist > ball_radius:
            yb = center + off * (ball_radius / dist)
        else:
            yb = y
        p = y - yb
        z = yb + q
        xn = np.asarray(set_projector(z), dtype=float)
        q = z - xn
        move = float(np.linalg.norm(xn - x))
        x = xn
        if move < tol:
            break
    return x


@dataclass
class SGDConfig:
    """Everything dpsgd_truncated needs besides the data and the budget.

    theta0/tau0 come from the warm start (or a prior); radius R bounds
    ||theta0 - theta*||. The survival ball radius, gradient bound
    G = 2 (sqrt(m/(1-rho)) + 2R), sensitivity G/n and the noise scale are
    derived inside the run so the privacy arithmetic lives in one place.
    survival overrides the default statistic ball (pre-intersected with a
    known truncation set); any override disables the compiled kernels.
    """

    n: int
    theta0: Array
    tau0: Array
    radius: float
    rho: float
    lam_step: float
    iterations: Optional[int] = None
    rejection_cap: Optional[int] = None
    seed: int = 0
    noise: bool = True
    survival: Optional[SurvivalSet] = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError("rho must lie in (0, 1)")
        if self.radius <= 0:
            raise ConfigError("radius must be positive")
        if self.lam_step <= 0:
            raise ConfigError("lam_step must be positive")
        if self.iterations is not None and self.iterations < 1:
            raise ConfigError("iterations must be positive")


class SGDResult(NamedTuple):
    theta: Array
    sigma: float
    grad_bound: float
    sensitivity: float
    max_grad_norm: float
    max_attempts: int
    iterations: int


def _python_sgd(
    family: FamilySpec,
    data: Array,
    theta0: Array,
    survival: SurvivalSet,
    box_c: Array,
    box_r: float,
    lam_step: float,
    sigma: float,
    cap: int,
    iters: int,
    seed: int,
):
    # reference implementation; the compiled kernels mirror this loop
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    stats_x = family.stats(data)
    n = stats_x.shape[0]
    m = family.stat_dim
    theta = np.asarray(theta0, dtype=float).copy()
    max_grad = 0.0
    max_att = 0
    for t in range(1, iters + 1):
        y, att = rejection_sample_truncated(family, theta, survival, cap, rng)
        if att > max_att:
            max_att = att
        idx = int(rng.integers(n))
        g = family.statistic(y) - stats_x[idx]
        gn = float(np.linalg.norm(g))
        if gn > max_grad:
            max_grad = gn
        step = g if sigma == 0.0 else g + sigma * rng.standard_normal(m)
        theta = theta - step / (lam_step * t)
        inside_ball = np.linalg.norm(theta - box_c) <= box_r
        if inside_ball and family.in_domain(theta):
            continue
        theta = dykstra_project(theta, box_c, box_r, family.projector)
    return theta, max_grad, max_att


def dpsgd_truncated(
    family: FamilySpec,
    data,
    budget: PrivacyBudget,
    cfg: SGDConfig,
    ledger: Optional[BudgetLedger] = None,
    ledger_group: Optional[str] = None,
    label: str = "sgd",
) -> SGDResult:
    """(eps, delta)-DP projected SGD on the truncated NLL over one dataset.

    Per iteration t = 1..T (default T = n^2): draw y ~ q_theta conditioned on
    the survival ball B(tau0, sqrt(m/(1-rho)) + 2R), pick x uniformly from
    data, step theta <- theta - (T(y) - T(x) + noise) / (lam_step t), project
    onto B(theta0, 2R) intersected with the parameter set. Noise is iid
    N(0, sigma^2 I_m), sigma^2 = 32 (G/n)^2 ln(n/delta) ln(1/delta) / eps^2
    with G = 2 (sqrt(m/(1-rho)) + 2R).

    Gaussian mean/precision families with the default survival ball run in
    compiled kernels; anything else uses the Python reference loop.
    """
    if isinstance(data, TruncatedDataset):
        data = data.points
    data = np.ascontiguousarray(np.asarray(data, dtype=float))
    if data.ndim != 2 or data.shape[1] != family.data_dim:
        raise ConfigError("data must be (n, d) for the family's d")
    if data.shape[0] != cfg.n:
        raise ConfigError(f"data has {data.shape[0]} rows, config says {cfg.n}")
    n = cfg.n
    m = family.stat_dim
    iters = cfg.iterations if cfg.iterations is not None else n * n
    r_surv = sgd_survival_radius(m, cfg.rho, cfg.radius)
    G = 2.0 * r_surv
    sens = G / n
    sigma = sgd_noise_sigma(sens, n, budget) if cfg.noise else 0.0
    cap = (
        cfg.rejection_cap
        if cfg.rejection_cap is not None
        else default_rejection_cap(cfg.rho, 1e-4)
    )
    theta0 = np.asarray(cfg.theta0, dtype=float)
    tau0 = np.asarray(cfg.tau0, dtype=float)
    if theta0.shape != (m,) or tau0.shape != (m,):
        raise ConfigError("theta0 and tau0 must be length-m vectors")
    box_r = 2.0 * cfg.radius

    if ledger is not None and cfg.noise:
        kind = ledger_group if ledger_group is not None else "sequential"
        ledger.charge(label, budget, kind=kind, sigma=sigma)

    plain_ball = cfg.survival is None
    survival = (
        StatBall(family, tau0, r_surv) if plain_ball else cfg.survival
    )

    if (
        plain_ball
        and _kernels.HAVE_NUMBA
        and family.kernel_tag == "gauss_mean"
        and family.stat_scale == 1.0
    ):
        state = _kernels.make_state(cfg.seed)
        theta, mg, ma = _kernels.mean_sgd_kernel(
            data, theta0.copy(), tau0.copy(), r_surv, theta0.copy(), box_r,
            cfg.lam_step, sigma, cap, iters, state,
        )
    elif (
        plain_ball
        and _kernels.HAVE_NUMBA
        and family.kernel_tag == "gauss_precision"
        and family.domain_bounds is not None
    ):
        stats_x = np.ascontiguousarray(family.stats(data))
        lo_b, hi_b = family.domain_bounds
        state = _kernels.make_state(cfg.seed)
        theta, mg, ma = _kernels.precision_sgd_kernel(
            stats_x, theta0.copy(), 1.0 / family.stat_scale, tau0.copy(), r_surv,
            theta0.copy(), box_r, lo_b, hi_b, cfg.lam_step, sigma, cap, iters,
            family.data_dim, state,
        )
        if mg == -2.0:
            raise ConditioningError("SGD iterate left the positive-definite cone")
    else:
        theta, mg, ma = _python_sgd(
            family, data, theta0, survival, theta0, box_r,
            cfg.lam_step, sigma, cap, iters, cfg.seed,
        )
    if mg == -1.0:
        raise RejectionCapExceeded(attempts=int(ma), cap=cap)
    return SGDResult(
        theta=np.asarray(theta, dtype=float),
        sigma=sigma,
        grad_bound=G,
        sensitivity=sens,
        max_grad_norm=float(mg),
        max_attempts=int(ma),
        iterations=iters,
    )


def chunk_count(beta: float) -> int:
    """Independent SGD chunks the boosting stage runs: max(1, ceil(log2(1/beta)) - 3).

    Halving beta adds exactly one chunk. Small-chunk regimes (v = 1) skip
    boosting entirely: the single run must then meet the full accuracy target
    itself, which the per-chunk sizing accounts for.
    """
    if not 0.0 < beta < 1.0:
        raise ConfigError("beta must lie in (0, 1)")
    return max(1, math.ceil(math.log2(1.0 / beta)) - 3)


class BoostResult(NamedTuple):
    value: Array
    index: int
    confident: bool


def boost(candidates: Sequence[Array], alpha: float) -> BoostResult:
    """Select a candidate within alpha/2 of at least half the others.

    If each of v independent estimates lands within alpha/4 of the truth with
    probability > 1/2, some candidate qualifies and every qualifying one is
    within alpha of the truth; failure of that cluster structure returns the
    candidate close to the most others with confident=False. Ties break to
    the lowest index. A single candidate is returned as-is (vacuously
    confident).
    """
    cands = [np.asarray(c, dtype=float) for c in candidates]
    v = len(cands)
    if v == 0:
        raise ConfigError("boost needs at least one candidate")
    if v == 1:
        return BoostResult(cands[0], 0, True)
    half = 0.5 * alpha
    counts = []
    for i, ci in enumerate(cands):
        cnt = sum(
            1
            for j, cj in enumerate(cands)
            if j != i and np.linalg.norm(ci - cj) <= half
        )
        if cnt >= v / 2.0:
            return BoostResult(ci, i, True)
        counts.append(cnt)
    best = int(np.argmax(counts))
    return BoostResult(cands[best], best, False)


def sgd_error_rms(
    n: int,
    m: int,
    rho: float,
    radius: float,
    budget: PrivacyBudget,
    curvature_floor: float,
    cov_trace: float,
    noise: bool = True,
) -> float:
    """Planner model of one SGD chunk's rms parameter error at n rows.

    Two terms added in quadrature: the statistical error of the empirical
    truncated MLE, cov_trace / (n (C_TRUNC curvature_floor)^2), and the
    optimization/noise residue of n^2 steps,
    (2 cov_trace + m sigma^2) / (3 (C_STEP curvature_floor)^2 n^2).
    """
    G = 2.0 * sgd_survival_radius(m, rho, radius)
    sig = sgd_noise_sigma(G / n, n, budget) if noise else 0.0
    curv = C_TRUNC * curvature_floor
    lam_step = C_STEP * curvature_floor
    stat = cov_trace / (n * curv * curv)
    opt = (2.0 * cov_trace + m * sig * sig) / (3.0 * lam_step * lam_step * n * n)
    return math.sqrt(stat + opt)


def plan_sgd_rows(
    m: int,
    rho: float,
    radius: float,
    budget: PrivacyBudget,
    target: float,
    curvature_floor: float,
    cov_trace: float,
    noise: bool = True,
    n_max: int = 1 << 24,
) -> int:
    """Smallest n with sgd_error_rms(n) <= target (the model is decreasing in n)."""
    if target <= 0:
        raise ConfigError("target must be positive")
    if sgd_error_rms(n_max, m, rho, radius, budget, curvature_floor, cov_trace, noise) > target:
        raise ConfigError(
            f"SGD cannot reach rms {target:.3g} within {n_max} rows at this budget"
        )
    lo, hi = 8, n_max
    while lo < hi:
        mid = (lo + hi) // 2
        if sgd_error_rms(mid, m, rho, radius, budget, curvature_floor, cov_trace, noise) <= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


@dataclass(frozen=True)
class Prior:
    """Caller-supplied localization replacing the bounding box stage.

    radius_param bounds ||theta0 - theta*|| in the family's coordinates,
    radius_stat bounds ||tau(theta0) - tau(theta*)||. tau0 defaults to the
    family's mean statistic at theta0.
    """

    theta0: Array
    radius_param: float
    radius_stat: float
    tau0: Optional[Array] = None


@dataclass(frozen=True)
class PipelinePlan:
    """Static sizing of the full pipeline; everything raw-data-independent."""

    rho: float
    alpha: float
    beta: float
    chunks: int
    alpha_chunk: float
    beta_bb: float
    beta_ws: float
    beta_sgd: float
    fractions: tuple
    run_bb: bool
    n_bb: int
    bb_budget: Optional[PrivacyBudget]
    r_start_stat: float
    run_ws: bool
    ws: Optional[WarmStartPlan]
    ws_budget: Optional[PrivacyBudget]
    sgd_budget: PrivacyBudget
    n_sgd: int
    sgd_slice_rows: int
    radius_param: float
    lam_step: float
    rejection_cap: int
    curvature_floor: float
    cov_trace: float
    raw_needed: int

    @property
    def iterations(self) -> int:
        return self.n_sgd * self.n_sgd


def plan_exp_family(
    family: FamilySpec,
    budget: PrivacyBudget,
    alpha: float,
    beta: float,
    rho: float = 0.5,
    prior: Optional[Prior] = None,
    curvature_floor: Optional[float] = None,
    cov_trace: Optional[float] = None,
    lipschitz_hint: float = 1.0,
    sgd_rows: Optional[int] = None,
) -> PipelinePlan:
    """Size every stage of estimate_exp_family before touching data.

    Stage budgets: 20/20/60 (bounding box / warm start / SGD); a prior skips
    the bounding box (0/40/60); a warm start whose certified output radius
    would not beat half the incoming radius is skipped too, its share going
    to SGD. Failure probability splits beta/4, beta/4, beta/2.

    Planner model inputs (exact for the Gaussian mean family, supplied by the
    covariance pipeline for the precision family): curvature_floor, a lower
    bound on the statistic covariance's smallest eigenvalue near theta*
    (default: the radius-free survival_curvature_floor); cov_trace, the trace
    of that covariance (default m); lipschitz_hint, the statistic-to-parameter
    error amplification of moment matching (default 1). sgd_rows overrides
    the planned per-chunk rows for controlled sweeps.
    """
    if not 0.0 < rho < 1.0:
        raise ConfigError("pipeline needs rho in (0, 1)")
    if alpha <= 0 or not 0.0 < beta < 1.0:
        raise ConfigError("alpha must be positive and beta in (0, 1)")
    m = family.stat_dim
    v = chunk_count(beta)
    alpha_chunk = alpha if v == 1 else alpha / 3.0
    beta_bb = beta / 4.0
    beta_ws = beta / 4.0
    beta_sgd = beta / 2.0
    alpha_final = warm_start_final_alpha(rho)

    run_bb = prior is None
    if run_bb:
        bb_budget = budget.scale(0.2)
        n_bb = bounding_box_sample_size(m, beta_bb, bb_budget)
        r_start = bounding_box_radius(n_bb, m, rho, beta_bb, family.eta)
    else:
        bb_budget = None
        n_bb = 0
        r_start = prior.radius_stat

    run_ws = alpha_final < WS_GAIN * r_start
    frac_bb = 0.2 if run_bb else 0.0
    frac_ws = (0.2 if run_bb else 0.4) if run_ws else 0.0
    frac_sgd = 1.0 - frac_bb - frac_ws
    ws_budget = budget.scale(frac_ws) if run_ws else None
    sgd_budget = budget.scale(frac_sgd)

    ws_plan = plan_warm_start(m, r_start, rho, ws_budget, beta_ws) if run_ws else None

    if run_ws:
        radius_param = alpha_final * lipschitz_hint
    elif prior is not None:
        radius_param = prior.radius_param
    else:
        radius_param = r_start * lipschitz_hint

    if curvature_floor is None:
        curvature_floor = survival_curvature_floor(family.lam, rho, family.degree)
    if cov_trace is None:
        cov_trace = float(m)

    beta_slice = beta_sgd / (2.0 * v)
    if sgd_rows is not None:
        if sgd_rows < 1:
            raise ConfigError("sgd_rows must be positive")
        n_sgd = int(sgd_rows)
    else:
        n_sgd = plan_sgd_rows(
            m, rho, radius_param, sgd_budget, alpha_chunk / 2.0,
            curvature_floor, cov_trace,
        )
    slice_rows = raw_rows_for(n_sgd, rho, beta_slice)
    raw_needed = n_bb + (ws_plan.raw_needed if run_ws else 0) + v * slice_rows

    return PipelinePlan(
        rho=rho,
        alpha=alpha,
        beta=beta,
        chunks=v,
        alpha_chunk=alpha_chunk,
        beta_bb=beta_bb,
        beta_ws=beta_ws,
        beta_sgd=beta_sgd,
        fractions=(frac_bb, frac_ws, frac_sgd),
        run_bb=run_bb,
        n_bb=n_bb,
        bb_budget=bb_budget,
        r_start_stat=r_start,
        run_ws=run_ws,
        ws=ws_plan,
        ws_budget=ws_budget,
        sgd_budget=sgd_budget,
        n_sgd=n_sgd,
        sgd_slice_rows=slice_rows,
        radius_param=radius_param,
        lam_step=C_STEP * curvature_floor,
        rejection_cap=default_rejection_cap(rho, beta_sgd),
        curvature_floor=curvature_floor,
        cov_trace=cov_trace,
        raw_needed=raw_needed,
    )


def estimate_exp_family(
    family: FamilySpec,
    raw,
    budget: PrivacyBudget,
    alpha: float,
    beta: float,
    seed: int,
    rho: float = 0.5,
    prior: Optional[Prior] = None,
    known_survival: Optional[SurvivalSet] = None,
    noise: bool = True,
    ledger: Optional[BudgetLedger] = None,
    plan: Optional[PipelinePlan] = None,
    curvature_floor: Optional[float] = None,
    cov_trace: Optional[float] = None,
    lipschitz_hint: float = 1.0,
    sgd_rows: Optional[int] = None,
) -> EstimatorReport:
    """Full (eps, delta)-DP pipeline: localize, warm-start, SGD chunks, boost.

    raw must hold at least plan.raw_needed rows (size datasets with
    plan_exp_family). Returns an EstimatorReport whose theta is the final
    estimate in the family's own coordinates; the ledger (given or internal)
    ends within budget or the run aborts with OverBudgetError.

    A known pre-truncation set is intersected into every survival set; that
    disables the compiled SGD kernels (membership must be consulted per
    draw), so expect the Python path's speed.
    """
    t_start = time.perf_counter()
    if isinstance(known_survival, _AllSpace):
        # the trivial set is no truncation at all; dropping it keeps the
        # compiled-kernel path (and its RNG stream) identical to the
        # untruncated call
        known_survival = None
    if isinstance(raw, TruncatedDataset):
        raw = raw.points
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != family.data_dim:
        raise ConfigError("raw must be (N, d) for the family's d")
    if plan is None:
        plan = plan_exp_family(
            family, budget, alpha, beta, rho=rho, prior=prior,
            curvature_floor=curvature_floor, cov_trace=cov_trace,
            lipschitz_hint=lipschitz_hint, sgd_rows=sgd_rows,
        )
    if raw.shape[0] < plan.raw_needed:
        raise InsufficientDataError(
            f"pipeline needs {plan.raw_needed} raw rows, got {raw.shape[0]}"
        )
    # charges accrue on a ledger private to this call so the budget check
    # covers exactly this pipeline; entries merge into the caller's ledger
    own = BudgetLedger()

    ss_bb, ss_ws, ss_sgd = np.random.SeedSequence(seed).spawn(3)
    stages = []
    cursor = 0

    # localization: bounding box or caller prior
    if plan.run_bb:
        bb_rows = raw[:plan.n_bb]
        cursor = plan.n_bb
        bb_seed = int(ss_bb.generate_state(1, dtype=np.uint64)[0])
        theta_c, tau_c = bounding_box(
            family, bb_rows, plan.bb_budget, plan.beta_bb, plan.rho,
            family.eta, bb_seed, ledger=own, noise=noise,
        )
        stages.append(StageRecord(
            name="bounding_box", rows=plan.n_bb, raw_rows=plan.n_bb,
            epsilon=plan.bb_budget.epsilon, delta=plan.bb_budget.delta,
            detail={"radius_stat": plan.r_start_stat},
        ))
    else:
        theta_c = np.asarray(prior.theta0, dtype=float)
        tau_c = (
            np.asarray(prior.tau0, dtype=float)
            if prior.tau0 is not None
            else family.mean_statistic(theta_c)
        )

    # recursive warm start
    if plan.run_ws:
        ws_raw = plan.ws.raw_needed
        ws_seed = int(ss_ws.generate_state(1, dtype=np.uint64)[0])
        theta_c, tau_c = recursive_warm_start(
            family, raw[cursor : cursor + ws_raw], plan.ws_budget,
            theta_c, tau_c, plan.r_start_stat, plan.rho, ws_seed,
            beta=plan.beta_ws, ledger=own, noise=noise,
            known_survival=known_survival,
        )
        cursor += ws_raw
        stages.append(StageRecord(
            name="warm_start", rows=int(sum(plan.ws.round_rows)), raw_rows=ws_raw,
            epsilon=plan.ws_budget.epsilon, delta=plan.ws_budget.delta,
            detail={"rounds": plan.ws.rounds, "alpha_final": plan.ws.alpha_final},
        ))

    # SGD chunks on disjoint slices, then boosting
    m = family.stat_dim
    r_surv = sgd_survival_radius(m, plan.rho, plan.radius_param)
    ball = StatBall(family, tau_c, r_surv)
    survival = intersect(known_survival, ball)
    plain = known_survival is None
    chunk_seeds = ss_sgd.spawn(plan.chunks)

    jobs = []
    for c in range(plan.chunks):
        chunk = raw[cursor : cursor + plan.sgd_slice_rows]
        cursor += plan.sgd_slice_rows
        pre_seed, run_seed = (
            int(s) for s in chunk_seeds[c].generate_state(2, dtype=np.uint64)
        )
        dummy = family.anchor_point(tau_c) if family.anchor_point is not None else None
        dataset = preprocess(chunk, survival, plan.n_sgd, dummy, pre_seed)
        cfg = SGDConfig(
            n=plan.n_sgd,
            theta0=theta_c,
            tau0=tau_c,
            radius=plan.radius_param,
            rho=plan.rho,
            lam_step=plan.lam_step,
            rejection_cap=plan.rejection_cap,
            seed=run_seed,
            noise=noise,
            survival=None if plain else survival,
        )
        jobs.append((dataset, cfg))

    threads = int(os.environ.get("TRUNCDP_THREADS", "1"))

    def _run(job):
        dataset, cfg = job
        return dpsgd_truncated(family, dataset, plan.sgd_budget, cfg)

    if threads > 1 and plan.chunks > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=min(threads, plan.chunks)) as pool:
            results = list(pool.map(_run, jobs))
    else:
        results = [_run(job) for job in jobs]

    chunk_group = f"sgd-chunks:{seed}"
    for c, res in enumerate(results):
        if noise:
            own.charge(
                f"sgd_chunk{c}", plan.sgd_budget, kind=chunk_group, sigma=res.sigma
            )
        stages.append(StageRecord(
            name=f"sgd_chunk{c}", rows=plan.n_sgd, raw_rows=plan.sgd_slice_rows,
            epsilon=plan.sgd_budget.epsilon, delta=plan.sgd_budget.delta,
            detail={
                "sigma": res.sigma,
                "grad_bound": res.grad_bound,
                "max_grad_norm": res.max_grad_norm,
                "max_attempts": res.max_attempts,
                "iterations": res.iterations,
            },
        ))

    if plan.chunks == 1:
        picked = BoostResult(results[0].theta, 0, True)
    else:
        picked = boost([r.theta for r in results], 4.0 * alpha / 3.0)

    if noise:
        own.assert_within(budget)
    if ledger is not None:
        ledger.entries.extend(own.entries)
    total = own.total()
    wall_ms = (time.perf_counter() - t_start) * 1e3
    return EstimatorReport(
        task=family.name,
        theta=picked.value,
        n_raw=int(raw.shape[0]),
        alpha=alpha,
        beta=beta,
        epsilon=budget.epsilon,
        delta=budget.delta,
        epsilon_spent=total.epsilon,
        delta_spent=total.delta,
        seed=seed,
        chunks=plan.chunks,
        boost_confident=picked.confident,
        iterations=plan.chunks * plan.iterations,
        stages=stages,
        wall_ms=wall_ms,
        extra={
            "n_sgd": plan.n_sgd,
            "raw_needed": plan.raw_needed,
            "radius_param": plan.radius_param,
            "fractions": list(plan.fractions),
            "boost_index": picked.index,
        },
    )

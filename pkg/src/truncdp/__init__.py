"""Differentially private estimation from truncated samples.

Natural parameters of (possibly truncated) exponential families are
estimated under (eps, delta)-DP by projected noisy SGD on the truncated
negative log-likelihood, stacked behind a private bounding box, a recursive
warm start, and (for covariance) an iterative preconditioner.

Entry points: estimate_mean / estimate_covariance for the Gaussian tasks,
estimate_exp_family for arbitrary registered families, and the `truncdp`
CLI for experiments.
"""

from .errors import (
    ConditioningError,
    ConfigError,
    InsufficientDataError,
    OverBudgetError,
    RejectionCapExceeded,
    TruncDPError,
)
from .estimator import (
    BoostResult,
    Prior,
    SGDConfig,
    SGDResult,
    boost,
    chunk_count,
    dpsgd_truncated,
    estimate_exp_family,
    gradient_estimate,
    plan_exp_family,
    strong_convexity_constant,
    uniform_convergence_sample_size,
)
from .expfam import (
    FamilySpec,
    gaussian_mean_family,
    gaussian_precision_family,
    scaled_family,
)
from .gaussian import (
    PreconditionerState,
    estimate_covariance,
    estimate_mean,
    inv_sqrt,
    pack,
    plan_covariance,
    plan_mean,
    precondition_covariance,
    sym_eig,
    unpack,
)
from .privacy import (
    BudgetLedger,
    PrivacyBudget,
    gaussian_mechanism,
    gaussian_sigma,
    private_histogram,
    sgd_noise_sigma,
)
from .report import EstimatorReport, StageRecord
from .truncation import (
    DataBall,
    StatBall,
    SurvivalSet,
    TruncatedDataset,
    UserPredicate,
    all_space,
    intersect,
    preprocess,
    raw_rows_for,
    required_raw_samples,
    sgd_survival_radius,
    warm_survival_radius,
)
from .warmstart import (
    bounding_box,
    plan_warm_start,
    recursive_warm_start,
    warm_start_one_step,
    warm_start_schedule,
)

__version__ = "0.1.0"

__all__ = [
    "BoostResult",
    "BudgetLedger",
    "ConditioningError",
    "ConfigError",
    "DataBall",
    "EstimatorReport",
    "FamilySpec",
    "InsufficientDataError",
    "OverBudgetError",
    "PreconditionerState",
    "PrivacyBudget",
    "Prior",
    "RejectionCapExceeded",
    "SGDConfig",
    "SGDResult",
    "StageRecord",
    "StatBall",
    "SurvivalSet",
    "TruncDPError",
    "TruncatedDataset",
    "UserPredicate",
    "all_space",
    "boost",
    "bounding_box",
    "chunk_count",
    "dpsgd_truncated",
    "estimate_covariance",
    "estimate_exp_family",
    "estimate_mean",
    "gaussian_mean_family",
    "gaussian_mechanism",
    "gaussian_precision_family",
    "gaussian_sigma",
    "gradient_estimate",
    "intersect",
    "inv_sqrt",
    "pack",
    "plan_covariance",
    "plan_exp_family",
    "plan_mean",
    "plan_warm_start",
    "precondition_covariance",
    "preprocess",
    "private_histogram",
    "raw_rows_for",
    "recursive_warm_start",
    "required_raw_samples",
    "scaled_family",
    "sgd_noise_sigma",
    "sgd_survival_radius",
    "strong_convexity_constant",
    "sym_eig",
    "uniform_convergence_sample_size",
    "unpack",
    "warm_start_one_step",
    "warm_start_schedule",
    "warm_survival_radius",
]

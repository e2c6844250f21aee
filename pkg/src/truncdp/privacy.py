"""Privacy accounting and noise mechanisms.

Approximate differential privacy throughout: a mechanism is (eps, delta)-DP
over neighbouring datasets differing in one row. Composition is tracked by an
explicit ledger; sequential charges add up, charges sharing a `parallel`
group key compose by the max within the group (disjoint data slices).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, OverBudgetError

# Spectral-norm factor for symmetric Gaussian noise matrices: whp the noise
# matrix satisfies ||E||_2 <= SYM_SPECTRAL_FACTOR * sigma * sqrt(d).
SYM_SPECTRAL_FACTOR = 2.5


@dataclass(frozen=True)
class PrivacyBudget:
    """(epsilon, delta) pair with both coordinates in (0, 1)."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")

    def scale(self, frac: float) -> "PrivacyBudget":
        """Fraction of the budget: (frac * eps, frac * delta)."""
        return PrivacyBudget(self.epsilon * frac, self.delta * frac)

    def split(self, *fracs: float) -> tuple["PrivacyBudget", ...]:
        """Split into parts by fractions that must sum to at most 1."""
        if sum(fracs) > 1.0 + 1e-12:
            raise ConfigError("budget split fractions exceed 1")
        return tuple(self.scale(f) for f in fracs)


class BudgetTotal(NamedTuple):
    """Unvalidated (epsilon, delta) sum, as reported by a ledger."""

    epsilon: float
    delta: float


@dataclass
class LedgerEntry:
    label: str
    epsilon: float
    delta: float
    group: Optional[str] = None  # parallel-composition group key
    sigma: Optional[float] = None  # noise scale actually used, if any


@dataclass
class BudgetLedger:
    """Running record of privacy charges.

    charge() appends an entry; entries with the same non-None group key are
    assumed to act on disjoint rows and compose in parallel (the group costs
    its maximum entry); everything else composes sequentially.
    """

    entries: list = field(default_factory=list)

    def charge(
        self,
        label: str,
        budget: PrivacyBudget,
        kind: str = "sequential",
        sigma: Optional[float] = None,
    ) -> None:
        """Record a charge.

        kind is "sequential" or any other string, which is treated as a
        parallel-composition group id (charges sharing it act on disjoint
        rows and cost only their maximum).
        """
        group = None if kind == "sequential" else kind
        self.entries.append(
            LedgerEntry(label=label, epsilon=budget.epsilon, delta=budget.delta,
                        group=group, sigma=sigma)
        )

    def total(self) -> BudgetTotal:
        eps = 0.0
        delta = 0.0
        groups: dict = {}
        for e in self.entries:
            if e.group is None:
                eps += e.epsilon
                delta += e.delta
            else:
                ge, gd = groups.get(e.group, (0.0, 0.0))
                groups[e.group] = (max(ge, e.epsilon), max(gd, e.delta))
        for ge, gd in groups.values():
            eps += ge
            delta += gd
        return BudgetTotal(eps, delta)

    def assert_within(self, budget: PrivacyBudget, slack: float = 1e-9) -> None:
        tot = self.total()
        if tot.epsilon > budget.epsilon * (1 + slack) or tot.delta > budget.delta * (1 + slack):
            raise OverBudgetError(
                f"ledger total ({tot.epsilon:.6g}, {tot.delta:.6g}) exceeds "
                f"budget ({budget.epsilon:.6g}, {budget.delta:.6g})"
            )

    def spent_fraction(self, budget: PrivacyBudget) -> float:
        tot = self.total()
        return max(tot.epsilon / budget.epsilon, tot.delta / budget.delta)

    def as_rows(self) -> list:
        return [
            {"label": e.label, "epsilon": e.epsilon, "delta": e.delta,
             "group": e.group, "sigma": e.sigma}
            for e in self.entries
        ]


def gaussian_sigma(sensitivity: float, budget: PrivacyBudget) -> float:
    """Noise scale 2 * sensitivity * ln(1.25/delta) / epsilon.

    Dominates the classic sqrt(2 ln(1.25/delta)) calibration for delta < 1.25/e^2,
    so the mechanism is (eps, delta)-DP for every budget this package accepts.
    """
    if sensitivity < 0:
        raise ConfigError("sensitivity must be nonnegative")
    return 2.0 * sensitivity * math.log(1.25 / budget.delta) / budget.epsilon


def gaussian_mechanism(
    value: np.ndarray,
    sensitivity: float,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    noise: bool = True,
) -> tuple[np.ndarray, float]:
    """Add iid N(0, sigma^2) to an L2-sensitivity-bounded vector.

    Returns (noised value, sigma). noise=False returns the value unchanged
    (sigma still reported) for debug runs; callers gate that path.
    """
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise ConfigError("gaussian_mechanism input must be finite")
    sigma = gaussian_sigma(sensitivity, budget)
    if not noise or sigma == 0.0:
        return value.copy(), sigma
    return value + sigma * rng.standard_normal(value.shape), sigma


def gaussian_mechanism_symmetric(
    mat: np.ndarray,
    sensitivity: float,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    noise: bool = True,
) -> tuple[np.ndarray, float]:
    """Gaussian mechanism for symmetric matrices, Frobenius sensitivity.

    Noise is drawn iid on the upper triangle (diagonal included) and
    mirrored, so the output stays symmetric and each independent coordinate
    gets variance sigma^2.
    """
    mat = np.asarray(mat, dtype=float)
    if not np.all(np.isfinite(mat)):
        raise ConfigError("matrix mechanism input must be finite")
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T, atol=1e-9):
        raise ConfigError("matrix mechanism input must be symmetric")
    d = mat.shape[0]
    sigma = gaussian_sigma(sensitivity, budget)
    if not noise or sigma == 0.0:
        return mat.copy(), sigma
    e = np.zeros((d, d))
    iu, ju = np.triu_indices(d)
    draws = sigma * rng.standard_normal(len(iu))
    e[iu, ju] = draws
    e[ju, iu] = draws
    return mat + e, sigma


def histogram_sample_size(alpha: float, beta: float, budget: PrivacyBudget) -> int:
    """Samples for the private histogram to resolve bin masses to +-alpha.

    ceil(8 ln(4/(beta delta)) / (eps alpha) + ln(4/beta) / (2 alpha^2)).
    """
    if not 0.0 < alpha < 1.0 or not 0.0 < beta < 1.0:
        raise ConfigError("alpha and beta must lie in (0, 1)")
    return math.ceil(
        8.0 * math.log(4.0 / (beta * budget.delta)) / (budget.epsilon * alpha)
        + math.log(4.0 / beta) / (2.0 * alpha**2)
    )


def private_histogram(
    values: np.ndarray,
    bin_length: float,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    noise: bool = True,
) -> dict:
    """Stable histogram over an unbounded 1-d domain.

    Bins are [j*L, (j+1)*L). Only nonempty bins receive Laplace(2/(n eps))
    noise on their empirical mass; noisy masses below the threshold
    t0 = 2 ln(2/delta)/(n eps) + 1/n are suppressed. Releasing only surviving
    bins keeps the output (eps, delta)-DP even though the bin index set is
    data-dependent: a count-one bin clears t0 with probability at most
    delta/4.

    Returns {bin_index: noisy_mass}, possibly empty (all bins suppressed).
    """
    values = np.asarray(values, dtype=float).ravel()
    n = len(values)
    if n == 0:
        return {}
    if not np.all(np.isfinite(values)):
        raise ConfigError("histogram values must be finite")
    if bin_length <= 0:
        raise ConfigError("bin_length must be positive")
    if noise and budget.delta >= 1.0 / n:
        raise ConfigError("stable histogram needs delta < 1/n")
    idx = np.floor(values / bin_length).astype(np.int64)
    bins, counts = np.unique(idx, return_counts=True)
    mass = counts / n
    if not noise:
        return {int(b): float(p) for b, p in zip(bins, mass)}
    noised = mass + rng.laplace(scale=2.0 / (budget.epsilon * n), size=len(mass))
    thresh = 2.0 * math.log(2.0 / budget.delta) / (budget.epsilon * n) + 1.0 / n
    return {int(b): float(p) for b, p in zip(bins, noised) if p >= thresh}


def sgd_noise_sigma(sensitivity: float, n: int, budget: PrivacyBudget) -> float:
    """Per-iteration noise scale for n^2 gradient steps.

    sigma^2 = 32 * sensitivity^2 * ln(n/delta) * ln(1/delta) / eps^2; the
    moments-accountant composition over n^2 steps with per-step sensitivity
    `sensitivity` (usually G/n) then meets (eps, delta).
    """
    if n < 1:
        raise ConfigError("n must be positive")
    return math.sqrt(
        32.0
        * sensitivity**2
        * math.log(n / budget.delta)
        * math.log(1.0 / budget.delta)
    ) / budget.epsilon

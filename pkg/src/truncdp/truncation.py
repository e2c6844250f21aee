"""Survival sets, truncated datasets, and rejection sampling.

A survival set S is membership access to the region where samples survive
truncation. Sets are closed under intersection; the two stock shapes are a
Euclidean ball in data space and a ball in sufficient-statistic space.
All estimation-stage sets built by this package are StatBalls: the SGD
survival set around a statistic center tau0 with radius
sqrt(m/(1-rho)) + 2R, and warm-start sets with radius sqrt(m)/(1-rho) + R_i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, InsufficientDataError, RejectionCapExceeded
from .expfam import FamilySpec

Array = np.ndarray


class SurvivalSet:
    """Membership oracle for a truncation region."""

    def contains(self, x: Array) -> bool:
        raise NotImplementedError

    def contains_batch(self, X: Array) -> Array:
        """Vectorized membership; default loops over rows."""
        X = np.asarray(X, dtype=float)
        return np.fromiter((self.contains(row) for row in X), dtype=bool, count=len(X))


@dataclass(frozen=True)
class DataBall(SurvivalSet):
    """{x : ||x - center|| <= radius} in data space."""

    radius: float
    center: Optional[Array] = None

    def _offset(self, X: Array) -> Array:
        return X if self.center is None else X - self.center

    def contains(self, x: Array) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.linalg.norm(self._offset(x)) <= self.radius)

    def contains_batch(self, X: Array) -> Array:
        X = np.asarray(X, dtype=float)
        return np.linalg.norm(self._offset(X), axis=1) <= self.radius


@dataclass(frozen=True)
class StatBall(SurvivalSet):
    """{x : ||T(x) - center|| <= radius} for a family's sufficient statistic."""

    family: FamilySpec
    center: Array
    radius: float

    def contains(self, x: Array) -> bool:
        t = self.family.statistic(np.asarray(x, dtype=float))
        return bool(np.linalg.norm(t - self.center) <= self.radius)

    def contains_batch(self, X: Array) -> Array:
        ts = self.family.stats(np.asarray(X, dtype=float))
        return np.linalg.norm(ts - self.center[None, :], axis=1) <= self.radius


@dataclass(frozen=True)
class UserPredicate(SurvivalSet):
    """Wrap arbitrary membership callables supplied by the caller."""

    fn: Callable[[Array], bool]
    batch_fn: Optional[Callable[[Array], Array]] = None

    def contains(self, x: Array) -> bool:
        return bool(self.fn(np.asarray(x, dtype=float)))

    def contains_batch(self, X: Array) -> Array:
        if self.batch_fn is not None:
            return np.asarray(self.batch_fn(np.asarray(X, dtype=float)), dtype=bool)
        return super().contains_batch(X)


@dataclass(frozen=True)
class Intersection(SurvivalSet):
    parts: tuple

    def contains(self, x: Array) -> bool:
        return all(p.contains(x) for p in self.parts)

    def contains_batch(self, X: Array) -> Array:
        mask = self.parts[0].contains_batch(X)
        for p in self.parts[1:]:
            if not mask.any():
                break
            mask = mask & p.contains_batch(X)
        return mask


class _AllSpace(SurvivalSet):
    def contains(self, x: Array) -> bool:
        return True

    def contains_batch(self, X: Array) -> Array:
        return np.ones(len(X), dtype=bool)


_ALL = _AllSpace()


def all_space() -> SurvivalSet:
    """The trivial survival set (no truncation, rho = 1)."""
    return _ALL


def intersect(*sets: Optional[SurvivalSet]) -> SurvivalSet:
    """Intersection of survival sets; None and all_space() are identities."""
    parts = []
    for s in sets:
        if s is None or isinstance(s, _AllSpace):
            continue
        if isinstance(s, Intersection):
            parts.extend(s.parts)
        else:
            parts.append(s)
    if not parts:
        return _ALL
    if len(parts) == 1:
        return parts[0]
    return Intersection(tuple(parts))


def sgd_survival_radius(m: int, rho: float, R: float) -> float:
    """Statistic-ball radius sqrt(m/(1-rho)) + 2R used by the SGD stage."""
    if not 0.0 < rho < 1.0:
        raise ConfigError("SGD survival radius needs rho in (0, 1)")
    return math.sqrt(m / (1.0 - rho)) + 2.0 * R


def warm_survival_radius(m: int, rho: float, r_i: float) -> float:
    """Statistic-ball radius sqrt(m)/(1-rho) + r_i used by warm-start rounds.

    Note the placement of 1/(1-rho): inside the root for the SGD set, outside
    for warm-start rounds. The two stages budget their survival mass
    differently and the radii are not interchangeable.
    """
    if not 0.0 < rho < 1.0:
        raise ConfigError("warm-start survival radius needs rho in (0, 1)")
    return math.sqrt(m) / (1.0 - rho) + r_i


def make_sgd_survival_set(
    family: FamilySpec,
    tau0: Array,
    rho: float,
    R: float,
    m: Optional[int] = None,
) -> StatBall:
    """Survival set for the SGD stage, centered at the warm-start statistic.

    m defaults to the family's statistic dimension and is accepted only as a
    cross-check.
    """
    if m is not None and m != family.stat_dim:
        raise ConfigError(f"m={m} does not match family statistic dimension {family.stat_dim}")
    radius = sgd_survival_radius(family.stat_dim, rho, R)
    return StatBall(family, np.asarray(tau0, dtype=float), radius)


@dataclass(frozen=True)
class TruncatedDataset:
    """Fixed-size multiset of surviving points.

    points has exactly n rows (surviving rows first in input order, then
    padding copies of the dummy anchor, then a seeded uniform shuffle).
    fill_count records how many rows are padding; it is excluded from repr
    so logs cannot leak how many raw rows survived.
    """

    points: Array
    fill_count: int = field(repr=False)
    seed: int = field(repr=False, default=0)

    @property
    def n(self) -> int:
        return len(self.points)


def required_raw_samples(n: int, rho: float, beta: float) -> int:
    """Raw rows needed so that >= n survive a mass-rho set whp.

    ceil(4 n max(1, ln(1/beta)) / rho); the max(1, .) floor keeps the bound
    meaningful for beta near 1.
    """
    if not 0.0 < rho <= 1.0:
        raise ConfigError("rho must lie in (0, 1]")
    if not 0.0 < beta < 1.0:
        raise ConfigError("beta must lie in (0, 1)")
    return math.ceil(4.0 * n * max(1.0, math.log(1.0 / beta)) / rho)


def raw_rows_for(n: int, rho: float, beta: float) -> int:
    """Chernoff-exact version of required_raw_samples, used by the planners.

    Smallest N with P(Binomial(N, rho) < n) <= beta up to the multiplicative
    Chernoff bound: N*rho >= n + ln(1/beta) + sqrt(2 n ln(1/beta)) covers the
    lower tail. required_raw_samples stays as the loose closed form; at the
    sample sizes the pipelines actually run, the constant-4-log bound would
    inflate raw data cost by one to two orders of magnitude.
    """
    if not 0.0 < rho <= 1.0:
        raise ConfigError("rho must lie in (0, 1]")
    if not 0.0 < beta < 1.0:
        raise ConfigError("beta must lie in (0, 1)")
    slack = math.log(1.0 / beta)
    return math.ceil((n + slack + math.sqrt(2.0 * n * slack) + 1.0) / rho)


def preprocess(
    raw: Array,
    survival: SurvivalSet,
    n: int,
    dummy: Optional[Array],
    seed: int,
) -> TruncatedDataset:
    """Filter raw rows through the survival set and emit exactly n rows.

    Surviving rows are kept in input order, truncated to the first n if more
    survive, padded with copies of `dummy` if fewer do, then shuffled with a
    generator seeded by `seed`. Changing one raw row changes the output
    multiset by at most one element, so downstream per-element sensitivity
    analyses apply unchanged.

    The dummy must itself survive (checked); passing dummy=None declares that
    padding is not acceptable, and a shortfall raises InsufficientDataError
    instead.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ConfigError("raw data must be a 2-d array of shape (N, d)")
    if n < 1:
        raise ConfigError("n must be at least 1")
    if dummy is not None:
        dummy = np.asarray(dummy, dtype=float)
        if dummy.shape != (raw.shape[1],):
            raise ConfigError("dummy point dimension does not match the data")
        if not survival.contains(dummy):
            raise ConfigError("dummy point does not lie in the survival set")
    mask = survival.contains_batch(raw)
    kept = raw[mask][:n]
    fill = n - len(kept)
    if fill > 0:
        if dummy is None:
            raise InsufficientDataError(
                f"only {len(kept)} of {n} required rows survive and no dummy point was given"
            )
        kept = np.vstack([kept, np.tile(dummy, (fill, 1))]) if len(kept) else np.tile(dummy, (n, 1))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return TruncatedDataset(points=kept[perm], fill_count=fill, seed=seed)


def default_rejection_cap(rho: float, beta: float) -> int:
    """Draw cap per accepted sample: 200 log(2/beta) / rho."""
    if not 0.0 < rho <= 1.0:
        raise ConfigError("rho must lie in (0, 1]")
    return math.ceil(200.0 * math.log(2.0 / beta) / rho)


def rejection_sample_truncated(
    family: FamilySpec,
    theta: Array,
    survival: SurvivalSet,
    cap: int,
    rng: np.random.Generator,
) -> tuple[Array, int]:
    """One sample from q_theta conditioned on the survival set.

    Returns (sample, attempts). Raises RejectionCapExceeded after cap draws
    with no acceptance. Draws are taken one at a time so the attempt count is
    exact.
    """
    theta = np.asarray(theta, dtype=float)
    if cap < 1:
        raise ConfigError("cap must be at least 1")
    for attempt in range(1, cap + 1):
        x = family.sampler(theta, rng)
        if survival.contains(x):
            return x, attempt
    raise RejectionCapExceeded(attempts=cap, cap=cap, accepted=0, needed=1)


def sample_truncated_batch(
    family: FamilySpec,
    theta: Array,
    survival: SurvivalSet,
    size: int,
    rng: np.random.Generator,
    cap_factor: int = 400,
) -> Array:
    """size iid samples from q_theta conditioned on survival, shape (size, d).

    Total draw budget is cap_factor * size across the whole batch.
    """
    theta = np.asarray(theta, dtype=float)
    cap = cap_factor * size
    out = []
    have = 0
    attempts = 0
    chunk = max(64, 2 * size)
    while have < size:
        take = min(chunk, cap - attempts)
        if take <= 0:
            raise RejectionCapExceeded(attempts=attempts, cap=cap, accepted=have, needed=size)
        xs = family.draw(theta, take, rng)
        keep = xs[survival.contains_batch(xs)]
        if len(keep):
            out.append(keep[: size - have])
            have += len(out[-1])
        attempts += take
    return np.vstack(out)

"""Exponential-family interface and Gaussian instantiations.

A family here is a density q_theta(x) = h(x) exp(theta . T(x) - A(theta))
presented through callables only: the sufficient statistic T, a sampler for
the untruncated q_theta, the moment map theta -> E_theta[T], its inverse
(moment matching), and a projector onto the admissible parameter set Theta.
The log-partition A is never evaluated anywhere in the package; every
algorithm works through sampled sufficient statistics.

Families also carry the constants the planners need: the statistic dimension
m, the polynomial degree k of T, a lower bound lam on the smallest eigenvalue
of Cov_theta[T] over Theta, and the interiority margin eta. Optional hooks
(anchor_point, moment_match_lipschitz, cov_floor, kernel_tag) unlock faster
or tighter code paths but have safe generic fallbacks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import linalg
from .errors import ConditioningError

Array = np.ndarray


@dataclass(frozen=True)
class FamilySpec:
    """Bundle of callables and constants defining one exponential family.

    Attributes
    ----------
    name : str
        Identifier used in reports and kernel dispatch.
    data_dim : int
        Dimension d of a sample x.
    stat_dim : int
        Dimension m of the sufficient statistic T(x).
    degree : int
        Polynomial degree k of T (1 for linear, 2 for quadratic).
    lam : float
        Certified lower bound on eigenvalues of Cov_theta[T] for theta in
        Theta (untruncated).
    eta : float
        Interiority margin: the ball B_eta(theta*) stays inside Theta.
    statistic : callable
        x (d,) -> T(x) (m,).
    sampler : callable
        (theta (m,), rng) -> one sample x (d,) from untruncated q_theta.
    moment_match : callable
        tau (m,) -> theta (m,) with E_theta[T] = tau, no projection applied.
    mean_statistic : callable
        theta -> E_theta[T] for the untruncated family (closed form).
    projector : callable
        theta -> nearest point of Theta.
    in_domain : callable
        theta -> bool, membership in Theta (small tolerance allowed).
    statistic_batch : callable, optional
        X (n, d) -> (n, m); defaults to a row loop over `statistic`.
    sampler_batch : callable, optional
        (theta, size, rng) -> (size, d); defaults to a loop over `sampler`.
    anchor_point : callable, optional
        tau -> x with T(x) as close to tau as the support allows. Used to
        make padding rows for fixed-size truncated datasets.
    moment_match_lipschitz : callable, optional
        tau -> local Lipschitz bound of moment_match near tau, used to turn
        statistic-space error into parameter-space radius.
    cov_floor : callable, optional
        theta -> exact lower bound on eigenvalues of Cov_theta[T] at that
        specific theta (tighter than `lam`). Planners use it when present.
    stat_scale : float
        Declared upper bound context: `statistic` is base-statistic / stat_scale
        when the family was built by `scaled_family`; 1.0 otherwise. Kernels
        use it to rescale without re-deriving closures.
    domain_bounds : tuple, optional
        (lo, hi) when Theta is the spectral box {lo*I <= unpack(theta) <= hi*I}
        in this family's own theta coordinates; None when Theta is the whole
        space or has no box form. Lets compiled kernels project without
        calling back into Python.
    kernel_tag : str
        Empty, or the name of a compiled inner-loop kernel in _kernels.
    """

    name: str
    data_dim: int
    stat_dim: int
    degree: int
    lam: float
    eta: float
    statistic: Callable[[Array], Array]
    sampler: Callable[[Array, np.random.Generator], Array]
    moment_match: Callable[[Array], Array]
    mean_statistic: Callable[[Array], Array]
    projector: Callable[[Array], Array]
    in_domain: Callable[[Array], bool]
    statistic_batch: Optional[Callable[[Array], Array]] = None
    sampler_batch: Optional[Callable[[Array, int, np.random.Generator], Array]] = None
    anchor_point: Optional[Callable[[Array], Array]] = None
    moment_match_lipschitz: Optional[Callable[[Array], float]] = None
    cov_floor: Optional[Callable[[Array], float]] = None
    stat_scale: float = 1.0
    domain_bounds: Optional[tuple] = None
    kernel_tag: str = ""

    def stats(self, x: Array) -> Array:
        """T applied to one point or to rows of a matrix."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.statistic(x)
        if self.statistic_batch is not None:
            return self.statistic_batch(x)
        return np.stack([self.statistic(row) for row in x])

    def draw(self, theta: Array, size: int, rng: np.random.Generator) -> Array:
        """size untruncated samples from q_theta, shape (size, d)."""
        if self.sampler_batch is not None:
            return self.sampler_batch(theta, size, rng)
        return np.stack([self.sampler(theta, rng) for _ in range(size)])


def gaussian_mean_family(d: int) -> FamilySpec:
    """N(theta, I_d) with T(x) = x: the identity-covariance mean family.

    Natural parameter equals the mean, Cov[T] = I so lam = 1, moment match
    is the identity, Theta = R^d (projector is the identity), eta = 1.
    """
    ident = lambda v: np.asarray(v, dtype=float)

    def sampler(theta: Array, rng: np.random.Generator) -> Array:
        return theta + rng.standard_normal(d)

    def sampler_batch(theta: Array, size: int, rng: np.random.Generator) -> Array:
        return theta[None, :] + rng.standard_normal((size, d))

    return FamilySpec(
        name="gaussian_mean",
        data_dim=d,
        stat_dim=d,
        degree=1,
        lam=1.0,
        eta=1.0,
        statistic=ident,
        sampler=sampler,
        moment_match=ident,
        mean_statistic=ident,
        projector=ident,
        in_domain=lambda theta: True,
        statistic_batch=lambda X: np.asarray(X, dtype=float),
        sampler_batch=sampler_batch,
        anchor_point=ident,
        moment_match_lipschitz=lambda tau: 1.0,
        cov_floor=lambda theta: 1.0,
        kernel_tag="gauss_mean",
    )


# Parameter set for the precision family: {M : PREC_LOWER * I <= M <= (2/lam) * I}.
# With Sigma <= I/8 the true precision satisfies M >= 8I, one unit inside.
PREC_LOWER = 7.0


def gaussian_precision_family(d: int, lam_construct: float) -> FamilySpec:
    """Zero-mean Gaussian in precision form: T(x) = pack(-xx^T/2), theta = pack(M).

    Intended for data already conditioned so that
    lam_construct * I <= Sigma <= I/8; then M = Sigma^{-1} lies in
    Theta = {PREC_LOWER * I <= M <= (2/lam_construct) * I} with margin
    eta = 1 in Frobenius norm. Cov_theta[T] has eigenvalues
    {s_i s_j / 2} for Sigma-eigenvalues s_i (exact, by Isserlis and the
    Frobenius-isometric packing), so the family floor is
    lam = min(lam_construct^2, sqrt(lam_construct)) / 4 and `cov_floor`
    returns the exact value lam_min(Sigma)^2 / 2 at a given theta.
    """
    if not 0.0 < lam_construct <= 0.125:
        raise ValueError("lam_construct must lie in (0, 1/8]")
    m = linalg.packed_dim(d)
    hi = 2.0 / lam_construct

    def statistic(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        return linalg.pack_symmetric(-0.5 * np.outer(x, x))

    def statistic_batch(X: Array) -> Array:
        X = np.asarray(X, dtype=float)
        return linalg.pack_symmetric_batch(-0.5 * np.einsum("ni,nj->nij", X, X))

    def _cov_from_theta(theta: Array) -> Array:
        mtx = linalg.unpack_symmetric(theta)
        return linalg.inv_psd(mtx)

    def sampler(theta: Array, rng: np.random.Generator) -> Array:
        sigma = _cov_from_theta(theta)
        root = linalg.sqrtm_psd(sigma)
        return root @ rng.standard_normal(d)

    def sampler_batch(theta: Array, size: int, rng: np.random.Generator) -> Array:
        sigma = _cov_from_theta(theta)
        root = linalg.sqrtm_psd(sigma)
        return rng.standard_normal((size, d)) @ root.T

    def moment_match(tau: Array) -> Array:
        # E_theta[T] = pack(-Sigma/2), so Sigma = -2 unpack(tau). Degenerate
        # tau (from noisy coarse stages) gets its spectrum floored before
        # inversion; the caller projects onto Theta afterwards.
        sigma = -2.0 * linalg.unpack_symmetric(tau)
        w, q = linalg.sym_eig(sigma)
        if np.min(w) <= 0:
            w = np.maximum(w, 1e-8)
        mtx = (q * (1.0 / w)) @ q.T
        return linalg.pack_symmetric(mtx)

    def mean_statistic(theta: Array) -> Array:
        return linalg.pack_symmetric(-0.5 * _cov_from_theta(theta))

    def projector(theta: Array) -> Array:
        return linalg.pack_symmetric(
            linalg.spectral_clip(linalg.unpack_symmetric(theta), PREC_LOWER, hi)
        )

    def in_domain(theta: Array) -> bool:
        w, _ = linalg.sym_eig(linalg.unpack_symmetric(theta))
        tol = 1e-9 * max(1.0, hi)
        return bool(w[0] >= PREC_LOWER - tol and w[-1] <= hi + tol)

    def anchor_point(tau: Array) -> Array:
        # Best rank-one fit: T(x) = pack(-xx^T/2) can only realize packed
        # negatives of PSD rank-one matrices, so take the most negative
        # eigendirection of unpack(tau) and match its coefficient.
        a = linalg.unpack_symmetric(tau)
        w, q = linalg.sym_eig(a)
        s = max(0.0, -2.0 * w[0])
        return np.sqrt(s) * q[:, 0]

    def moment_match_lipschitz(tau: Array) -> float:
        # d(Sigma^{-1}) = -Sigma^{-1} dSigma Sigma^{-1}; with dSigma = -2 dtau
        # (Frobenius-isometric packing) the local bound is 2 ||M||_2^2.
        sigma = -2.0 * linalg.unpack_symmetric(tau)
        w, _ = linalg.sym_eig(sigma)
        if np.min(w) <= 0:
            raise ConditioningError("tau is not a realizable second-moment statistic")
        return 2.0 / (np.min(w) ** 2)

    def cov_floor(theta: Array) -> float:
        w, _ = linalg.sym_eig(_cov_from_theta(theta))
        return 0.5 * float(np.min(w) ** 2)

    lam_family = min(lam_construct**2, np.sqrt(lam_construct)) / 4.0

    return FamilySpec(
        name="gaussian_precision",
        data_dim=d,
        stat_dim=m,
        degree=2,
        lam=lam_family,
        eta=1.0,
        statistic=statistic,
        sampler=sampler,
        moment_match=moment_match,
        mean_statistic=mean_statistic,
        projector=projector,
        in_domain=in_domain,
        statistic_batch=statistic_batch,
        sampler_batch=sampler_batch,
        anchor_point=anchor_point,
        moment_match_lipschitz=moment_match_lipschitz,
        cov_floor=cov_floor,
        domain_bounds=(PREC_LOWER, hi),
        kernel_tag="gauss_precision",
    )


def scaled_family(family: FamilySpec, stat_bound: float) -> FamilySpec:
    """Rescale a family so its statistic covariance is O(1).

    Given Cov_theta[T] <= stat_bound * I over Theta, work with
    T' = T / sqrt(stat_bound) and theta' = sqrt(stat_bound) * theta, which
    leaves theta . T invariant, divides lam by stat_bound, and multiplies
    eta by sqrt(stat_bound). Estimating theta' and dividing back is exactly
    equivalent to estimating theta, but planner noise/curvature ratios are
    computed at the natural scale.
    """
    if stat_bound <= 0:
        raise ValueError("stat_bound must be positive")
    r = np.sqrt(stat_bound)
    f = family

    new = dict(
        name=f.name + "_scaled",
        lam=f.lam / stat_bound,
        eta=f.eta * r,
        statistic=lambda x: f.statistic(x) / r,
        sampler=lambda th, rng: f.sampler(th / r, rng),
        moment_match=lambda tau: r * f.moment_match(r * tau),
        mean_statistic=lambda th: f.mean_statistic(th / r) / r,
        projector=lambda th: r * f.projector(th / r),
        in_domain=lambda th: f.in_domain(th / r),
        stat_scale=f.stat_scale * r,
    )
    if f.statistic_batch is not None:
        new["statistic_batch"] = lambda X: f.statistic_batch(X) / r
    if f.sampler_batch is not None:
        new["sampler_batch"] = lambda th, size, rng: f.sampler_batch(th / r, size, rng)
    if f.anchor_point is not None:
        new["anchor_point"] = lambda tau: f.anchor_point(r * tau)
    if f.moment_match_lipschitz is not None:
        new["moment_match_lipschitz"] = lambda tau: stat_bound * f.moment_match_lipschitz(r * tau)
    if f.cov_floor is not None:
        new["cov_floor"] = lambda th: f.cov_floor(th / r) / stat_bound
    if f.domain_bounds is not None:
        new["domain_bounds"] = (f.domain_bounds[0] * r, f.domain_bounds[1] * r)
    return replace(f, **new)


def mean_suff_stat_mc(
    family: FamilySpec,
    theta: Array,
    survival,
    n_mc: int,
    rng: np.random.Generator,
    cap_factor: int = 400,
    return_stderr: bool = False,
):
    """Monte-Carlo estimate of E[T(y)] for y ~ q_theta conditioned on survival.

    Draws in batches, keeps survivors, stops after n_mc acceptances. The total
    draw budget is cap_factor * n_mc; exhausting it raises RejectionCapExceeded
    via the shared batch sampler. With return_stderr, also returns the
    per-coordinate standard error vector of the accepted-sample mean.
    """
    from .truncation import sample_truncated_batch

    ys = sample_truncated_batch(family, theta, survival, n_mc, rng, cap_factor=cap_factor)
    ts = family.stats(ys)
    mean = ts.mean(axis=0)
    if return_stderr:
        se = ts.std(axis=0, ddof=1) / np.sqrt(n_mc)
        return mean, se
    return mean

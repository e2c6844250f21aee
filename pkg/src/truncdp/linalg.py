"""Symmetric-matrix helpers: packing, spectral functions, PSD checks.

Symmetric d x d matrices are stored as length d(d+1)/2 vectors with
off-diagonal entries scaled by sqrt(2) so that the packed Euclidean inner
product equals the Frobenius inner product of the matrices. All spectral
routines go through numpy.linalg.eigh.
"""

from __future__ import annotations

import numpy as np

from .errors import ConditioningError

_SQRT2 = np.sqrt(2.0)


def packed_dim(d: int) -> int:
    """Length of the packed representation of a symmetric d x d matrix."""
    return d * (d + 1) // 2


def matrix_dim(m: int) -> int:
    """Inverse of packed_dim; raises if m is not triangular."""
    d = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if d * (d + 1) // 2 != m:
        raise ValueError(f"{m} is not d(d+1)/2 for integer d")
    return d


def pack_symmetric(a: np.ndarray) -> np.ndarray:
    """Pack a symmetric matrix into a vector, isometric for Frobenius norm.

    Ordering is row-major over the upper triangle (diagonal included);
    off-diagonal entries are multiplied by sqrt(2) so that
    ||pack(A)||_2 = ||A||_F and pack(A) . pack(B) = <A, B>_F.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    iu, ju = np.triu_indices(d)
    out = a[iu, ju].copy()
    out[iu != ju] *= _SQRT2
    return out


def unpack_symmetric(v: np.ndarray) -> np.ndarray:
    """Invert pack_symmetric."""
    v = np.asarray(v, dtype=float)
    d = matrix_dim(v.shape[0])
    iu, ju = np.triu_indices(d)
    vals = v.copy()
    vals[iu != ju] /= _SQRT2
    a = np.zeros((d, d))
    a[iu, ju] = vals
    a[ju, iu] = vals
    return a


def pack_symmetric_batch(mats: np.ndarray) -> np.ndarray:
    """Pack a stack of symmetric matrices, shape (n, d, d) -> (n, m)."""
    mats = np.asarray(mats, dtype=float)
    d = mats.shape[-1]
    iu, ju = np.triu_indices(d)
    out = mats[..., iu, ju].copy()
    out[..., iu != ju] *= _SQRT2
    return out


def sym_eig(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a (symmetrized) matrix: (values, vectors)."""
    a = np.asarray(a, dtype=float)
    return np.linalg.eigh(0.5 * (a + a.T))


def spectral_clip(a: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Project a symmetric matrix onto {lo*I <= M <= hi*I} (Frobenius-nearest)."""
    w, q = sym_eig(a)
    return (q * np.clip(w, lo, hi)) @ q.T


def sqrtm_psd(a: np.ndarray, min_eig: float = 0.0) -> np.ndarray:
    """Symmetric square root; eigenvalues below min_eig are floored to it."""
    w, q = sym_eig(a)
    if min_eig > 0:
        w = np.maximum(w, min_eig)
    elif np.min(w) < -1e-10 * max(1.0, np.max(np.abs(w))):
        raise ConditioningError(f"matrix is not PSD (min eigenvalue {np.min(w):.3e})")
    w = np.maximum(w, 0.0)
    return (q * np.sqrt(w)) @ q.T


def inv_sqrtm_psd(a: np.ndarray, min_eig: float = 1e-12) -> np.ndarray:
    """Symmetric inverse square root.

    Raises ConditioningError when the smallest eigenvalue is at or below
    min_eig, since downstream whitening would blow up.
    """
    w, q = sym_eig(a)
    if np.min(w) <= min_eig:
        raise ConditioningError(
            f"matrix is numerically singular (min eigenvalue {np.min(w):.3e})"
        )
    return (q * (1.0 / np.sqrt(w))) @ q.T


def inv_psd(a: np.ndarray, min_eig: float = 1e-12) -> np.ndarray:
    """Inverse via eigh with a positivity check."""
    w, q = sym_eig(a)
    if np.min(w) <= min_eig:
        raise ConditioningError(
            f"matrix is numerically singular (min eigenvalue {np.min(w):.3e})"
        )
    return (q * (1.0 / w)) @ q.T

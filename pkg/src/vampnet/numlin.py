"""Dense symmetric linear algebra used throughout the package.

All routines work in float64 and delegate the actual factorizations to
LAPACK through :mod:`numpy.linalg`.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError, RankZeroError

DEFAULT_EPS_REL = 1e-10


@dataclass(frozen=True)
class SymmetricEigen:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns paired with eigenvalues


@dataclass(frozen=True)
class SingularDecomposition:
    left: np.ndarray
    singular_values: np.ndarray  # descending, nonnegative
    right: np.ndarray  # V, so that A = U diag(s) V^T


def _square(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


def symmetrize(a):
    a = _square(a)
    return 0.5 * (a + a.T)


def sym_eig(a):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    The input is symmetrized as ``(A + A.T) / 2`` first.
    """
    a = symmetrize(a)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigh failed to converge: {exc}") from exc
    return SymmetricEigen(w[::-1].copy(), v[:, ::-1].copy())


def _truncated(a, eps_rel):
    eig = sym_eig(a)
    lam = eig.eigenvalues
    if lam.size == 0:
        raise RankZeroError("empty matrix")
    lmax = lam[0]
    if not np.isfinite(lmax):
        raise NumericalError("non-finite eigenvalue")
    if lmax <= 0:
        raise RankZeroError("matrix has no positive eigenvalue")
    keep = lam >= eps_rel * lmax
    if lam[-1] < -eps_rel * lmax * 1e2:
        # clearly indefinite; PSD matrices only pick up roundoff-sized negatives
        raise NumericalError(f"matrix is not PSD (smallest eigenvalue {lam[-1]:.3e})")
    return lam[keep], eig.eigenvectors[:, keep]


def inv_sqrt_trunc(a, eps_rel=DEFAULT_EPS_REL, return_rank=False):
    """Truncated inverse square root of a symmetric PSD matrix.

    Eigenvalues below ``eps_rel * lambda_max`` are dropped; their
    eigenspace contributes zero to the result.
    """
    lam, q = _truncated(a, eps_rel)
    out = (q / np.sqrt(lam)) @ q.T
    return (out, lam.size) if return_rank else out


def pinv_trunc(a, eps_rel=DEFAULT_EPS_REL, return_rank=False):
    """Truncated pseudo-inverse of a symmetric PSD matrix (same rule as
    :func:`inv_sqrt_trunc`)."""
    lam, q = _truncated(a, eps_rel)
    out = (q / lam) @ q.T
    return (out, lam.size) if return_rank else out


def svd(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"svd needs a 2D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("svd input has non-finite entries")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"svd failed to converge: {exc}") from exc
    return SingularDecomposition(u, s, vt.T)


def frobenius(a):
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))

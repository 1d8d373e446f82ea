"""Dense kernels behind the closed-form CCA fit.

Thin, validated wrappers over LAPACK (via numpy): thin SVD, symmetric
eigendecomposition with descending eigenvalues, and a ridge-guarded inverse
square root for symmetric positive (semi)definite matrices.  Everything is
computed in float64 regardless of the input dtype.
"""

from typing import NamedTuple

import numpy as np


class LinalgError(ArithmeticError):
    """Base class for numerical failures in this module."""


class DecompositionError(LinalgError):
    """A LAPACK driver failed to converge."""


class NotPositiveDefiniteError(LinalgError):
    """A matrix that must be positive definite is not."""

    def __init__(self, smallest, ridge):
        self.smallest = smallest
        self.ridge = ridge
        super().__init__(
            f"matrix is not positive definite after adding ridge {ridge:.3g}: "
            f"smallest eigenvalue is {smallest:.6g}; use a larger eps"
        )


class ShapeError(ValueError):
    """Matrix operand has the wrong shape."""


class SvdResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def as_matrix(m, name="matrix"):
    """Return `m` as a finite 2-D float64 array (no copy when possible)."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def symmetrize(m):
    return 0.5 * (m + m.T)


def _require_square(a, name):
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")


def svd(m):
    """Thin SVD with descending singular values.

    Returns ``SvdResult(u, s, vt)`` with ``len(s) == min(m.shape)`` such that
    ``u @ np.diag(s) @ vt`` reconstructs `m`.
    """
    a = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails where the slower QR-iteration driver succeeds
        try:
            import scipy.linalg

            u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise DecompositionError(
                f"SVD did not converge for a {a.shape[0]}x{a.shape[1]} matrix"
            ) from exc
    return SvdResult(u, s, vt)


def sym_eig(m):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    The input is symmetrized as ``(M + M.T) / 2`` first so that accumulated
    rounding asymmetry does not leak into the result.  Returns
    ``(values, vectors)`` with eigenvectors in the columns of `vectors`.
    """
    a = as_matrix(m)
    _require_square(a, "sym_eig input")
    try:
        w, v = np.linalg.eigh(symmetrize(a))
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(
            f"symmetric eigensolver did not converge for a {a.shape[0]}x{a.shape[1]} matrix"
        ) from exc
    return w[::-1].copy(), v[:, ::-1].copy()


def inv_sqrt_spd(m, eps=0.0):
    """Symmetric inverse square root of ``m + eps * I``.

    Eigenvalues at or below the numerical-zero level of the matrix
    (``n * machine_eps * max|eigenvalue|``) count as non-positive, so a
    rank-deficient input needs a strictly positive `eps`.
    """
    a = as_matrix(m)
    _require_square(a, "inv_sqrt_spd input")
    if not eps >= 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    n = a.shape[0]
    w, v = sym_eig(a + eps * np.eye(n))
    floor = n * np.finfo(np.float64).eps * max(abs(w[0]), abs(w[-1]))
    if w[-1] <= floor:
        raise NotPositiveDefiniteError(float(w[-1]), float(eps))
    r = (v / np.sqrt(w)) @ v.T
    return symmetrize(r)

"""Dense double-precision matrix kernels.

QR and SVD are thin wrappers over LAPACK (via numpy) that pin down the
conventions the rest of the package relies on: positive-diagonal R,
descending singular values, and ``V`` returned un-transposed.
"""

import numpy as np

__all__ = [
    "LinAlgConvergenceError",
    "qr_decompose",
    "random_orthogonal",
    "svd",
    "orthogonality_error",
    "orthogonalize_step",
    "finite_difference_check",
    "GradCheckReport",
]


class LinAlgConvergenceError(RuntimeError):
    """Raised when an iterative factorization fails to converge."""


def _as_matrix(a, name="A"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def qr_decompose(a):
    """Thin QR factorization ``A = Q R`` with ``diag(R) >= 0``.

    Parameters
    ----------
    a : (m, n) array_like, m >= n

    Returns
    -------
    q : (m, n) ndarray with orthonormal columns
    r : (n, n) upper-triangular ndarray with nonnegative diagonal
    """
    a = _as_matrix(a)
    m, n = a.shape
    if m < n:
        raise ValueError(f"qr_decompose needs m >= n, got {a.shape}")
    q, r = np.linalg.qr(a, mode="reduced")
    # Zero diagonal entries (rank deficiency) count as positive.
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return q * signs, r * signs[:, None]


def random_orthogonal(d, seed=None):
    """Haar-distributed d x d orthogonal matrix.

    ``seed`` may be an int, None, or a ``numpy.random.Generator``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    q, _ = qr_decompose(rng.standard_normal((d, d)))
    return q


def svd(a):
    """Thin SVD ``A = U diag(S) V^T``.

    Returns ``(U, S, V)`` with ``U`` of shape (m, k), ``S`` descending and
    nonnegative, ``V`` of shape (n, k), k = min(m, n).
    """
    a = _as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise LinAlgConvergenceError(str(exc)) from exc
    return u, s, vt.T


def orthogonality_error(w):
    """Frobenius norm ``||W^T W - I||``.

    This is the square root of ``2 f(W) / beta`` for the usual
    orthogonality penalty ``f(W) = beta/2 ||W^T W - I||^2``.
    """
    w = _as_matrix(w, "W")
    if w.shape[0] != w.shape[1]:
        raise ValueError(f"W must be square, got {w.shape}")
    return float(np.linalg.norm(w.T @ w - np.eye(w.shape[0])))


def orthogonalize_step(w, beta):
    """One step ``W' = (1 + beta) W - beta W W^T W`` toward the orthogonal manifold."""
    w = _as_matrix(w, "W")
    if w.shape[0] != w.shape[1]:
        raise ValueError(f"W must be square, got {w.shape}")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if beta == 0:
        return w.copy()
    return (1.0 + beta) * w - beta * (w @ (w.T @ w))


class GradCheckReport:
    """Outcome of a finite-difference gradient check."""

    def __init__(self, analytic, numeric):
        self.analytic = analytic
        self.numeric = numeric
        denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
        self.rel_errors = np.abs(analytic - numeric) / denom

    @property
    def max_rel_error(self):
        return float(self.rel_errors.max()) if self.rel_errors.size else 0.0

    def passed(self, tol):
        return self.max_rel_error <= tol

    def __repr__(self):
        return f"GradCheckReport(n={self.rel_errors.size}, max_rel_error={self.max_rel_error:.3e})"


def finite_difference_check(f, x, analytic_grad, h=1e-5):
    """Compare ``analytic_grad`` with central differences of ``f`` at ``x``.

    ``f`` maps an array shaped like ``x`` to a scalar. ``x`` is perturbed
    in place and restored, so callers can pass a live parameter array and a
    closure that reads it.
    """
    x = np.asarray(x)
    analytic = np.asarray(analytic_grad, dtype=np.float64).reshape(x.shape)
    numeric = np.empty_like(analytic)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x)
        flat[i] = orig - h
        f_minus = f(x)
        flat[i] = orig
        num_flat[i] = (f_plus - f_minus) / (2.0 * h)
    return GradCheckReport(analytic.ravel(), numeric.ravel())

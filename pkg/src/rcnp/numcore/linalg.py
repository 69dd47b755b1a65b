"""Dense Cholesky factorization with jitter escalation and triangular solves."""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

DEFAULT_JITTER = 1e-8
MAX_JITTER = 1e-4


class CholeskyError(np.linalg.LinAlgError):
    """Raised when a matrix stays non-positive-definite after jitter escalation."""

    def __init__(self, pivot: int, jitter: float):
        self.pivot = pivot
        self.jitter = jitter
        super().__init__(
            f"matrix not positive definite: pivot {pivot} failed (jitter up to {jitter:g})"
        )


def _jitter_schedule(jitter):
    yield jitter
    j = max(jitter, DEFAULT_JITTER)
    if j == jitter:
        j *= 10.0
    while j <= MAX_JITTER * (1 + 1e-12):
        yield j
        j *= 10.0


def cholesky(a, jitter: float = DEFAULT_JITTER, return_jitter: bool = False):
    """Lower Cholesky factor of ``a + jitter * I``.

    On failure the jitter is multiplied by 10 up to 1e-4 before giving up with
    :class:`CholeskyError`, whose ``pivot`` is the 0-based index of the first
    failing diagonal pivot.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cholesky: expected a square matrix, got {a.shape}")
    n = a.shape[0]
    if n == 0:
        return (np.zeros((0, 0)), jitter) if return_jitter else np.zeros((0, 0))
    scale = max(1.0, float(np.max(np.abs(a))))
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12 * scale):
        raise ValueError("cholesky: matrix is not symmetric")
    pivot = -1
    used = jitter
    for used in _jitter_schedule(jitter):
        work = a.copy()
        if used:
            work[np.diag_indices(n)] += used
        c, info = lapack.dpotrf(work, lower=1, clean=1, overwrite_a=1)
        if info == 0:
            return (c, used) if return_jitter else c
        if info < 0:
            raise ValueError(f"dpotrf: illegal argument {-info}")
        pivot = info - 1
    raise CholeskyError(pivot, used)


def tri_solve(chol, b, transpose: bool = False):
    """Solve ``L x = b`` (or ``L^T x = b``) for lower-triangular ``L``."""
    chol = np.asarray(chol, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if chol.ndim != 2 or chol.shape[0] != chol.shape[1]:
        raise ValueError(f"tri_solve: expected a square factor, got {chol.shape}")
    diag = np.diagonal(chol)
    if np.any(diag == 0.0):
        raise ValueError(f"tri_solve: zero diagonal entry at index {int(np.argmin(np.abs(diag)))}")
    return scipy.linalg.solve_triangular(chol, b, lower=True, trans=1 if transpose else 0)


def cho_solve(chol, b):
    """Solve ``(L L^T) x = b`` given the lower factor ``L``."""
    return tri_solve(chol, tri_solve(chol, b), transpose=True)


def logdet_from_chol(chol) -> float:
    return 2.0 * float(np.sum(np.log(np.diagonal(chol))))

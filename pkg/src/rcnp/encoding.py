"""Comparison functions and set encoders.

The batched builders lay rows out so that every aggregation is a contiguous
block: target ``m`` of the diagonal encoding owns rows ``m*N:(m+1)*N`` (one per
context point ``n``), and for the full encoding rows ``m*N*N:(m+1)*N*N`` in
row-major ``(n, n')`` order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import ad

DIFFERENCE = "diff"
DISTANCE = "dist"


@dataclass(frozen=True)
class ComparisonFn:
    kind: str

    def __post_init__(self):
        if self.kind not in (DIFFERENCE, DISTANCE):
            raise ValueError(f"unknown comparison {self.kind!r}")

    def d_comp(self, d_x: int) -> int:
        return d_x if self.kind == DIFFERENCE else 1

    def pairwise(self, a, b) -> np.ndarray:
        """``g(a_i, b_j)`` for all pairs, shape (len(a), len(b), d_comp)."""
        diff = b[None, :, :] - a[:, None, :]
        if self.kind == DIFFERENCE:
            return diff
        return np.sqrt(np.sum(diff * diff, axis=-1, keepdims=True))


def compare(g: ComparisonFn, x, x_star) -> np.ndarray:
    """``x* - x`` for Difference, ``|x* - x|`` for Distance."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x_star = np.atleast_1d(np.asarray(x_star, dtype=np.float64))
    if x.shape != x_star.shape:
        raise ValueError(f"compare: dimension mismatch {x.shape} vs {x_star.shape}")
    return g.pairwise(x[None, :], x_star[None, :])[0, 0]


def relational_matrix(g: ComparisonFn, x, y) -> np.ndarray:
    """Entries ``(g(x_n, x_n'), y_n, y_n')``, shape (N, N, d_comp + 2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    n = x.shape[0]
    return np.concatenate(
        [g.pairwise(x, x), np.broadcast_to(y[:, None, :], (n, n, 1)), np.broadcast_to(y[None, :, :], (n, n, 1))],
        axis=-1,
    )


def _check_context(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if x.shape[0] == 0:
        raise ValueError("empty context set is not supported")
    if x.shape[0] != y.shape[0]:
        raise ValueError("context inputs and outputs differ in length")
    return x, y


def diag_inputs(g: ComparisonFn, x, y, x_star) -> np.ndarray:
    """Rows ``(g(x_n, x*_m), y_n)`` ordered by target then context, shape (M*N, d_comp + 1)."""
    x, y = _check_context(x, y)
    x_star = np.asarray(x_star, dtype=np.float64)
    comp = np.transpose(g.pairwise(x, x_star), (1, 0, 2))  # (M, N, dc): g(x_n, x*_m)
    m, n = x_star.shape[0], x.shape[0]
    ys = np.broadcast_to(y[None, :, :], (m, n, 1))
    return np.concatenate([comp, ys], axis=-1).reshape(m * n, -1)


def full_inputs(g: ComparisonFn, x, y, x_star) -> np.ndarray:
    """Rows ``(g(x_n, x*_m), g(x_n, x_n'), y_n, y_n')``, shape (M*N*N, 2*d_comp + 2)."""
    x, y = _check_context(x, y)
    x_star = np.asarray(x_star, dtype=np.float64)
    m, n = x_star.shape[0], x.shape[0]
    target = g.pairwise(x, x_star)  # (N, M, dc): g(x_n, x*_m)
    target = np.transpose(target, (1, 0, 2))  # (M, N, dc)
    rel = relational_matrix(g, x, y)  # (N, N, dc + 2)
    dc = target.shape[-1]
    rows = np.concatenate(
        [
            np.broadcast_to(target[:, :, None, :], (m, n, n, dc)),
            np.broadcast_to(rel[None], (m, n, n, rel.shape[-1])),
        ],
        axis=-1,
    )
    return rows.reshape(m * n * n, -1)


def deepset_inputs(x, y) -> np.ndarray:
    x, y = _check_context(x, y)
    return np.concatenate([x, y], axis=1)


def _aggregate(h, offsets, aggregate):
    out = ad.segment_sum(h, offsets)
    if aggregate == "mean":
        counts = np.diff(offsets).astype(np.float64)[:, None]
        out = ad.mul(out, np.broadcast_to(1.0 / counts, ad.value(out).shape).copy())
    elif aggregate != "sum":
        raise ValueError(f"unknown aggregation {aggregate!r}")
    return out


def rho_full(g: ComparisonFn, f_r, x_star_m, x, y, aggregate="sum"):
    """Full relational encoding of one target: sum over all (n, n') of ``f_r(...)``."""
    x_star_m = np.atleast_2d(np.asarray(x_star_m, dtype=np.float64))
    rows = full_inputs(g, x, y, x_star_m)
    return _aggregate(f_r(rows), np.array([0, rows.shape[0]]), aggregate)[0]


def rho_diag(g: ComparisonFn, f_r, x_star_m, x, y, aggregate="sum"):
    """Diagonal relational encoding of one target: sum over n of ``f_r(g(x_n, x*_m), y_n)``."""
    x_star_m = np.atleast_2d(np.asarray(x_star_m, dtype=np.float64))
    rows = diag_inputs(g, x, y, x_star_m)
    return _aggregate(f_r(rows), np.array([0, rows.shape[0]]), aggregate)[0]


def deepset_encode(f_e, x, y, aggregate="sum"):
    """Permutation-invariant context embedding: sum over n of ``f_e(x_n, y_n)``."""
    rows = deepset_inputs(x, y)
    return _aggregate(f_e(rows), np.array([0, rows.shape[0]]), aggregate)[0]


def aggregate_blocks(h, offsets, aggregate="sum"):
    return _aggregate(h, offsets, aggregate)

"""Reverse-mode automatic differentiation over a recorded tape.

Values are float64 numpy arrays. A :class:`Tape` records coarse primitives
(matmul, affine layers, elementwise maps, reductions, gathers) as they are
applied to :class:`Var` handles, and :meth:`Tape.backward` walks the records
in reverse to accumulate adjoints.

Every op also accepts plain arrays. If none of its inputs is a ``Var`` the op
is evaluated eagerly and nothing is recorded, so the same model code serves
both training (params on a tape) and inference (params as arrays).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.linalg

LOG_2PI = float(np.log(2.0 * np.pi))


class Tape:
    """Append-only record of primitive applications.

    ``values[i]`` holds the output of node ``i`` and ``parents[i]`` the node
    indices it consumed (``-1`` for constants). Parents always precede their
    children, so the record is topologically ordered by construction.
    """

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list[Callable | None] = []
        self.ops: list[str] = []
        # ReLU activation masks, used by grad_check to detect kink crossings.
        self.relu_masks: list[np.ndarray] = []
        self.adjoints: list[np.ndarray | None] | None = None

    def __len__(self):
        return len(self.values)

    def leaf(self, value) -> "Var":
        value = np.asarray(value, dtype=np.float64)
        return self._push("leaf", value, (), None)

    def _push(self, op, value, parents, vjp) -> "Var":
        self.values.append(value)
        self.parents.append(parents)
        self.vjps.append(vjp)
        self.ops.append(op)
        return Var(self, len(self.values) - 1)

    def backward(self, out: "Var", seed=None) -> list[np.ndarray | None]:
        """Accumulate adjoints of ``out`` with respect to every node."""
        if out.tape is not self:
            raise ValueError("output does not belong to this tape")
        adj: list[np.ndarray | None] = [None] * len(self.values)
        if seed is None:
            seed = np.ones_like(self.values[out.index])
        adj[out.index] = np.asarray(seed, dtype=np.float64)
        for i in range(out.index, -1, -1):
            g = adj[i]
            vjp = self.vjps[i]
            if g is None or vjp is None:
                continue
            parents = self.parents[i]
            grads = vjp(g)
            for p, gp in zip(parents, grads):
                if p < 0 or gp is None:
                    continue
                if adj[p] is None:
                    adj[p] = gp
                else:
                    adj[p] = adj[p] + gp
        self.adjoints = adj
        return adj

    def grad(self, out: "Var", wrt: Sequence["Var"]) -> list[np.ndarray]:
        adj = self.backward(out)
        return [
            adj[v.index] if adj[v.index] is not None else np.zeros_like(v.value)
            for v in wrt
        ]


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.shape}, op={self.tape.ops[self.index]})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def value(x) -> np.ndarray:
    """Underlying array of a Var or array-like."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("inputs live on different tapes")
    return tape


def _record(op, out, inputs, vjp):
    tape = _tape_of(*inputs)
    if tape is None:
        return out
    parents = tuple(x.index if isinstance(x, Var) else -1 for x in inputs)
    return tape._push(op, out, parents, vjp)


def _needs(*xs):
    return tuple(isinstance(x, Var) for x in xs)


# ---------------------------------------------------------------- elementwise


def _check_broadcast(a, b, op):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _sum_to(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b):
    av, bv = value(a), value(b)
    _check_broadcast(av, bv, "add")
    out = av + bv
    return _record("add", out, (a, b), lambda g: (_sum_to(g, av.shape), _sum_to(g, bv.shape)))


def sub(a, b):
    av, bv = value(a), value(b)
    _check_broadcast(av, bv, "sub")
    out = av - bv
    return _record("sub", out, (a, b), lambda g: (_sum_to(g, av.shape), _sum_to(-g, bv.shape)))


def mul(a, b):
    av, bv = value(a), value(b)
    _check_broadcast(av, bv, "mul")
    out = av * bv
    na, nb = _needs(a, b)

    def vjp(g):
        return (
            _sum_to(g * bv, av.shape) if na else None,
            _sum_to(g * av, bv.shape) if nb else None,
        )

    return _record("mul", out, (a, b), vjp)


def div(a, b):
    av, bv = value(a), value(b)
    _check_broadcast(av, bv, "div")
    out = av / bv
    na, nb = _needs(a, b)

    def vjp(g):
        return (
            _sum_to(g / bv, av.shape) if na else None,
            _sum_to(-g * out / bv, bv.shape) if nb else None,
        )

    return _record("div", out, (a, b), vjp)


def relu(x):
    xv = value(x)
    mask = xv > 0.0
    out = np.where(mask, xv, 0.0)
    res = _record("relu", out, (x,), lambda g: (g * mask,))
    if isinstance(res, Var):
        res.tape.relu_masks.append(mask)
    return res


def tanh(x):
    xv = value(x)
    out = np.tanh(xv)
    return _record("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def exp(x):
    out = np.exp(value(x))
    return _record("exp", out, (x,), lambda g: (g * out,))


def log(x):
    xv = value(x)
    if np.any(xv <= 0.0):
        raise ValueError("log of nonpositive value")
    out = np.log(xv)
    return _record("log", out, (x,), lambda g: (g / xv,))


def softplus(x):
    """log(1 + exp(x)), evaluated as max(x, 0) + log1p(exp(-|x|))."""
    xv = value(x)
    out = np.maximum(xv, 0.0) + np.log1p(np.exp(-np.abs(xv)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * xv))
    return _record("softplus", out, (x,), lambda g: (g * sig,))


def square(x):
    xv = value(x)
    return _record("square", xv * xv, (x,), lambda g: (2.0 * g * xv,))


def sqrt(x):
    xv = value(x)
    if np.any(xv < 0.0):
        raise ValueError("sqrt of negative value")
    out = np.sqrt(xv)
    return _record("sqrt", out, (x,), lambda g: (0.5 * g / out,))


# ------------------------------------------------------------ linear algebra


def matmul(a, b):
    av, bv = value(a), value(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul: shape mismatch {av.shape} @ {bv.shape}")
    out = av @ bv
    na, nb = _needs(a, b)

    def vjp(g):
        return (g @ bv.T if na else None, av.T @ g if nb else None)

    return _record("matmul", out, (a, b), vjp)


def linear(x, w, b):
    """Affine layer ``x @ w + b`` with ``b`` broadcast over rows."""
    xv, wv, bv = value(x), value(w), value(b)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise ValueError(f"linear: shape mismatch {xv.shape} @ {wv.shape}")
    if bv.shape != (wv.shape[1],):
        raise ValueError(f"linear: bias shape {bv.shape} does not match {wv.shape}")
    out = xv @ wv + bv
    nx, nw, nb = _needs(x, w, b)

    def vjp(g):
        return (
            g @ wv.T if nx else None,
            xv.T @ g if nw else None,
            g.sum(axis=0) if nb else None,
        )

    return _record("linear", out, (x, w, b), vjp)


def transpose(x):
    out = value(x).T
    return _record("transpose", out, (x,), lambda g: (g.T,))


def add_diag(a, d):
    """``a + diag(d)`` for square ``a`` and vector ``d``."""
    av, dv = value(a), value(d)
    if av.ndim != 2 or av.shape[0] != av.shape[1] or dv.shape != (av.shape[0],):
        raise ValueError(f"add_diag: shapes {av.shape} and {dv.shape}")
    out = av.copy()
    out[np.diag_indices_from(out)] += dv
    return _record("add_diag", out, (a, d), lambda g: (g, np.diagonal(g).copy()))


def eq_gram(f):
    """Unit-lengthscale exponentiated-quadratic Gram matrix of the rows of ``f``."""
    fv = value(f)
    sq = np.sum(fv * fv, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * fv @ fv.T, 0.0)
    out = np.exp(-0.5 * d2)

    def vjp(g):
        w = g * out
        w = w + w.T
        # d/df_i of -0.5 |f_i - f_j|^2 is -(f_i - f_j)
        return (-(w.sum(axis=1)[:, None] * fv - w @ fv),)

    return _record("eq_gram", out, (f,), vjp)


# ---------------------------------------------------------------- reductions


def reduce_sum(x, axis=None):
    """Sum along ``axis`` (all axes if None).

    numpy's pairwise summation runs in a fixed order for a given shape, so
    identical inputs give bit-identical results.
    """
    xv = value(x)
    if axis is not None and not -xv.ndim <= axis < xv.ndim:
        raise ValueError(f"reduce_sum: invalid axis {axis} for shape {xv.shape}")
    out = np.asarray(np.sum(xv, axis=axis))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, xv.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy(),)

    return _record("reduce_sum", out, (x,), vjp)


def mean(x, axis=None):
    xv = value(x)
    n = xv.size if axis is None else xv.shape[axis]
    return mul(reduce_sum(x, axis), 1.0 / n)


def segment_sum(x, offsets):
    """Sum contiguous row blocks ``x[offsets[i]:offsets[i+1]]``.

    ``offsets`` starts at 0 and ends at ``len(x)``; every block must be
    nonempty.
    """
    xv = value(x)
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets[0] != 0 or offsets[-1] != xv.shape[0] or np.any(np.diff(offsets) <= 0):
        raise ValueError("segment_sum: offsets must be strictly increasing from 0 to len(x)")
    out = np.add.reduceat(xv, offsets[:-1], axis=0)
    counts = np.diff(offsets)
    return _record("segment_sum", out, (x,), lambda g: (np.repeat(g, counts, axis=0),))


# ----------------------------------------------------------- shape plumbing


def reshape(x, shape):
    xv = value(x)
    out = xv.reshape(shape)
    return _record("reshape", out, (x,), lambda g: (g.reshape(xv.shape),))


def concat(xs, axis=0):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _record("concat", out, tuple(xs), vjp)


def take(x, indices, axis=0):
    """Gather along ``axis``; repeated indices accumulate in the adjoint."""
    xv = value(x)
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(xv, indices, axis=axis)

    def vjp(g):
        gx = np.zeros_like(xv)
        if axis == 0:
            np.add.at(gx, indices, g)
        else:
            gm = np.moveaxis(gx, axis, 0)
            np.add.at(gm, indices, np.moveaxis(g, axis, 0))
        return (gx,)

    return _record("take", out, (x,), vjp)


def getitem(x, idx):
    """Basic slicing (and integer indexing) of a tensor."""
    xv = value(x)
    out = xv[idx]
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (slice, int, np.integer)) for p in parts)

    def vjp(g):
        gx = np.zeros_like(xv)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _record("getitem", np.array(out, dtype=np.float64), (x,), vjp)


# ------------------------------------------------------------ likelihoods


def gaussian_logpdf(y, mean, std):
    """Elementwise univariate normal log-density."""
    yv, mv, sv = value(y), value(mean), value(std)
    if not (yv.shape == mv.shape == sv.shape):
        raise ValueError(f"gaussian_logpdf: shapes {yv.shape}, {mv.shape}, {sv.shape}")
    z = (yv - mv) / sv
    out = -0.5 * LOG_2PI - np.log(sv) - 0.5 * z * z
    ny, nm, ns = _needs(y, mean, std)

    def vjp(g):
        gz = g * z / sv
        return (
            -gz if ny else None,
            gz if nm else None,
            g * (z * z - 1.0) / sv if ns else None,
        )

    return _record("gaussian_logpdf", out, (y, mean, std), vjp)


def mvn_logpdf(y, mean, cov):
    """Multivariate normal log-density via a Cholesky factor of ``cov``.

    The adjoint uses d/dmean = cov^-1 r and d/dcov = (a a^T - cov^-1)/2 with
    r = y - mean and a = cov^-1 r. Jitter is added only if the exact factorization fails.
    """
    from .linalg import cholesky

    yv, mv, cv = value(y), value(mean), value(cov)
    m = yv.shape[0]
    if yv.shape != (m,) or mv.shape != (m,) or cv.shape != (m, m):
        raise ValueError(f"mvn_logpdf: shapes {yv.shape}, {mv.shape}, {cv.shape}")
    chol = cholesky(cv, jitter=0.0)
    r = yv - mv
    half = scipy.linalg.solve_triangular(chol, r, lower=True)
    out = np.asarray(
        -0.5 * float(half @ half) - float(np.sum(np.log(np.diagonal(chol)))) - 0.5 * m * LOG_2PI
    )
    ny, nm, nc = _needs(y, mean, cov)

    def vjp(g):
        a = scipy.linalg.cho_solve((chol, True), r)
        gc = None
        if nc:
            inv = scipy.linalg.cho_solve((chol, True), np.eye(m))
            gc = 0.5 * g * (np.outer(a, a) - inv)
        return (-g * a if ny else None, g * a if nm else None, gc)

    return _record("mvn_logpdf", out, (y, mean, cov), vjp)

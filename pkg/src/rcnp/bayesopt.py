"""Bayesian optimization of Hartmann functions with neural-process, GP or random surrogates.

Objectives are minimized. Surrogates see standardized observations and
expected improvement is computed on the negated objective.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import gpref, models, taskgen
from .models import ModelSpec
from .numcore import CholeskyError, cholesky, logdet_from_chol
from .numcore.linalg import cho_solve

# --------------------------------------------------------------- test functions

_H_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H3_A = np.array([[3.0, 10, 30], [0.1, 10, 35], [3.0, 10, 30], [0.1, 10, 35]])
_H3_P = 1e-4 * np.array([[3689, 1170, 2673], [4699, 4387, 7470], [1091, 8732, 5547], [381, 5743, 8828]])
_H6_A = np.array(
    [
        [10, 3, 17, 3.5, 1.7, 8],
        [0.05, 10, 17, 0.1, 8, 14],
        [3, 3.5, 1.7, 10, 17, 8],
        [17, 8, 0.05, 10, 0.1, 14],
    ]
)
_H6_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124, 8283, 5886],
        [2329, 4135, 8307, 3736, 1004, 9991],
        [2348, 1451, 3522, 2883, 3047, 6650],
        [4047, 8828, 8732, 5743, 1091, 381],
    ]
)


def _hartmann(a, p, x):
    x = np.atleast_2d(x)
    inner = np.sum(a[None] * (x[:, None, :] - p[None]) ** 2, axis=-1)
    return -np.exp(-inner) @ _H_ALPHA


@dataclass(frozen=True)
class BlackBox:
    name: str
    dim: int
    f_min: float
    x_min: tuple

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ValueError(f"{self.name} takes {self.dim}-dimensional inputs, got {pts.shape[1]}")
        if np.any(pts < 0) or np.any(pts > 1) or not np.all(np.isfinite(pts)):
            raise ValueError(f"{self.name}: input outside [0, 1]^{self.dim}")
        a, p = (_H3_A, _H3_P) if self.dim == 3 else (_H6_A, _H6_P)
        out = _hartmann(a, p, pts)
        return float(out[0]) if x.ndim == 1 else out


BLACKBOXES = {
    "hartmann3": BlackBox("hartmann3", 3, -3.86278, (0.114614, 0.555649, 0.852547)),
    "hartmann6": BlackBox("hartmann6", 6, -3.32237, (0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573)),
}


def blackbox(name: str) -> BlackBox:
    try:
        return BLACKBOXES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown black box {name!r}; choose from {sorted(BLACKBOXES)}") from None


def hartmann(name: str, x):
    return blackbox(name)(x)


# ------------------------------------------------------------------ acquisition


def expected_improvement(mu, sigma, f_best):
    """``E[max(f - f_best, 0)]`` for ``f ~ N(mu, sigma^2)`` (maximization form)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("negative predictive std")
    gain = mu - f_best
    safe = np.where(sigma > 0, sigma, 1.0)
    with np.errstate(over="ignore"):
        z = gain / safe
        ei = gain * ndtr(z) + safe * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    return np.where(sigma > 0, np.maximum(ei, 0.0), np.maximum(gain, 0.0))


def _standardize(y):
    y = np.asarray(y, dtype=np.float64)
    m, s = float(y.mean()), float(y.std())
    if not s > 1e-12:
        s = 1.0
    return (y - m) / s


# ------------------------------------------------------------------- surrogates


class RandomSurrogate:
    """Uniform random proposals; the baseline every model-based surrogate should beat."""

    name = "random"
    random = True


@dataclass
class GPFit:
    kernel: gpref.KernelSpec
    noise: float
    lml: float


GP_LENGTHSCALES = np.geomspace(0.05, 2.0, 16)
GP_SCALES = np.geomspace(0.1, 10.0, 8)
GP_NOISES = (1e-6, 1e-4, 1e-2)


def gp_surrogate_fit(x, y) -> GPFit:
    """Matern-5/2 hyperparameters maximizing the marginal likelihood over a fixed grid."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size < 2:
        raise ValueError("need at least two observations to fit a GP")
    best = None
    for ell in GP_LENGTHSCALES:
        k0 = gpref.gram(gpref.matern52(ell), x, x)
        for theta in GP_SCALES:
            for noise in GP_NOISES:
                kxx = theta * k0 + noise * np.eye(y.size)
                try:
                    chol = cholesky(kxx, jitter=0.0)
                except CholeskyError:
                    continue
                lml = -0.5 * y @ cho_solve(chol, y) - 0.5 * logdet_from_chol(chol) - 0.5 * y.size * np.log(2 * np.pi)
                if best is None or lml > best.lml:
                    best = GPFit(gpref.matern52(ell, theta), noise, float(lml))
    if best is None:
        raise CholeskyError(pivot=-1, jitter=0.0)
    return best


class GPSurrogate:
    """Matern-5/2 GP refit on the grid at every step."""

    name = "gp"
    random = False

    def __init__(self):
        self.last_fit = None

    def condition(self, x, y):
        ys = _standardize(y)
        fit = gp_surrogate_fit(x, ys)
        self.last_fit = fit

        def predict(xc):
            post = gpref.posterior(fit.kernel, x, ys, xc, fit.noise)
            return post.mean, np.sqrt(np.maximum(np.diagonal(post.cov), 0.0))

        return predict


def params_digest(params: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()


class NPSurrogate:
    """Pretrained neural process that conditions on observations as its context set.

    ``box`` is the input range the model was trained on; query points in
    [0, 1]^d are mapped affinely onto it. Weights are never updated.
    """

    random = False

    def __init__(self, spec: ModelSpec, params: dict, box=(0.0, 1.0)):
        self.spec, self.params = spec, params
        self.lo, self.hi = float(box[0]), float(box[1])
        self.name = spec.variant.lower()
        self.digest = params_digest(params)

    def _map(self, x):
        return self.lo + (self.hi - self.lo) * np.atleast_2d(x)

    def condition(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.spec.d_x:
            raise ValueError(f"surrogate expects d_x={self.spec.d_x}, observations have {x.shape[1]}")
        ys = _standardize(y)
        cx = self._map(x)

        def predict(xc):
            xc = self._map(xc)
            task = taskgen.Task(cx, ys, xc, np.zeros(len(xc)))
            return models.forward(self.spec, self.params, task).marginals()

        return predict


# --------------------------------------------------------------------- proposal

N_CANDIDATES = 512
N_STARTS = 4
PASSES_PER_START = 4
N_HALVINGS = 20


def _refine(acq, x, value, rng):
    """Coordinate sweeps with step-halving line search; moves only on strict improvement."""
    d = x.size
    for _ in range(PASSES_PER_START):
        for j in rng.permutation(d):
            step = 0.25
            for _ in range(N_HALVINGS):
                trial = np.repeat(x[None], 2, axis=0)
                trial[0, j] += step
                trial[1, j] -= step
                np.clip(trial, 0.0, 1.0, out=trial)
                vals = acq(trial)
                k = int(np.argmax(vals))
                if vals[k] > value:
                    x, value = trial[k], float(vals[k])
                else:
                    step *= 0.5
    return x, value


def propose(surrogate, x, y, rng: np.random.Generator):
    """Next query point in [0, 1]^d maximizing expected improvement."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = x.shape[1]
    if surrogate.random:
        return rng.uniform(0.0, 1.0, d)
    predict = surrogate.condition(x, y)
    # minimize y: EI on the negated, standardized objective
    f_best = float(np.max(-_standardize(y)))

    def acq(pts):
        mu, sd = predict(pts)
        return expected_improvement(-np.asarray(mu), np.asarray(sd), f_best)

    cand = rng.uniform(0.0, 1.0, (N_CANDIDATES, d))
    vals = acq(cand)
    order = np.argsort(-vals, kind="stable")[:N_STARTS]
    best_x, best_v = cand[order[0]], float(vals[order[0]])
    for i in order:
        xr, vr = _refine(acq, cand[i].copy(), float(vals[i]), rng)
        if vr > best_v:
            best_x, best_v = xr, vr
    return np.clip(best_x, 0.0, 1.0)


# -------------------------------------------------------------------- BO loop


@dataclass
class BOTrace:
    f_min: float
    xs: list = field(default_factory=list)
    ys: list = field(default_factory=list)

    def add(self, x, y):
        self.xs.append(np.asarray(x, dtype=np.float64))
        self.ys.append(float(y))

    def __len__(self):
        return len(self.ys)

    @property
    def best(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.ys))

    @property
    def error(self) -> np.ndarray:
        return np.abs(self.best - self.f_min)

    @property
    def final_error(self) -> float:
        return float(self.error[-1])

    def write_csv(self, path):
        """Columns ``step,x,y,best,error``; ``x`` is a comma-joined vector, step 0 is the first initial point."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "x", "y", "best", "error"])
            for i, (x, y, b, e) in enumerate(zip(self.xs, self.ys, self.best, self.error)):
                w.writerow([i, ",".join(repr(float(v)) for v in x), repr(y), repr(float(b)), repr(float(e))])


def restart_rngs(seed: int, restart: int):
    """Generators for the initial design and for proposals; the initial design is shared by all surrogates."""
    ss = np.random.SeedSequence([int(seed), int(restart)])
    init_ss, prop_ss = ss.spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(prop_ss)


def bo_run(surrogate, box: BlackBox, init: int = 5, steps: int = 50, seed: int = 0, restart: int = 0) -> BOTrace:
    if init < 1 or steps < 0:
        raise ValueError("need init >= 1 and steps >= 0")
    init_rng, rng = restart_rngs(seed, restart)
    trace = BOTrace(box.f_min)
    for x in init_rng.uniform(0.0, 1.0, (init, box.dim)):
        trace.add(x, box(x))
    for _ in range(steps):
        x = propose(surrogate, np.stack(trace.xs), np.asarray(trace.ys), rng)
        trace.add(x, box(x))
    return trace


# ------------------------------------------------------------- pretraining data

PRETRAIN_NOISE = 1e-3


def pretrain_task_config(d_x: int, regime: str = "iv", **overrides) -> taskgen.TaskConfig:
    """Kernel-regime GP tasks drawn on the unit cube, where the regime lengthscales live."""
    cfg = dict(int_range=(0.0, 1.0), ooid_range=(1.0, 2.0), noise=PRETRAIN_NOISE, regime=regime)
    cfg.update(overrides)
    return taskgen.TaskConfig.default("regime", d_x, **cfg)

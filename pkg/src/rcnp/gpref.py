"""Exact Gaussian-process machinery used for data generation and as the evaluation oracle.

Normal variates come from numpy's ``Generator.standard_normal`` (ziggurat).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import cholesky, logdet_from_chol, tri_solve
from .numcore.linalg import cho_solve

BASE_KINDS = ("EQ", "Matern12", "Matern32", "Matern52")
KINDS = BASE_KINDS + ("WeaklyPeriodic", "Sum", "Product")


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel ``scale * k0(|x - x'| / lengthscale)`` or a sum/product of two kernels."""

    kind: str
    lengthscale: float = 1.0
    scale: float = 1.0
    # weakly periodic only
    ld: float = 1.0
    lp: float = 1.0
    period: float = 1.0
    left: "KernelSpec | None" = None
    right: "KernelSpec | None" = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind in ("Sum", "Product"):
            if self.left is None or self.right is None:
                raise ValueError(f"{self.kind} kernel needs two children")
        for name in ("lengthscale", "scale", "ld", "lp", "period"):
            if not getattr(self, name) > 0:
                raise ValueError(f"kernel {name} must be positive")

    def __add__(self, other):
        return KernelSpec("Sum", left=self, right=other)

    def __mul__(self, other):
        return KernelSpec("Product", left=self, right=other)

    def describe(self) -> str:
        if self.kind == "Sum":
            return f"({self.left.describe()} + {self.right.describe()})"
        if self.kind == "Product":
            return f"({self.left.describe()} * {self.right.describe()})"
        if self.kind == "WeaklyPeriodic":
            return f"{self.scale:.4g}*WP(ld={self.ld:.4g}, lp={self.lp:.4g}, p={self.period:.4g})"
        return f"{self.scale:.4g}*{self.kind}(l={self.lengthscale:.4g})"


def eq(lengthscale=1.0, scale=1.0):
    return KernelSpec("EQ", lengthscale, scale)


def matern52(lengthscale=1.0, scale=1.0):
    return KernelSpec("Matern52", lengthscale, scale)


def weakly_periodic(ld, lp, period, scale=1.0):
    return KernelSpec("WeaklyPeriodic", scale=scale, ld=ld, lp=lp, period=period)


def _radial(kind, r):
    if kind == "EQ":
        return np.exp(-0.5 * r * r)
    if kind == "Matern12":
        return np.exp(-r)
    if kind == "Matern32":
        s = np.sqrt(3.0) * r
        return (1.0 + s) * np.exp(-s)
    if kind == "Matern52":
        s = np.sqrt(5.0) * r
        return (1.0 + s + s * s / 3.0) * np.exp(-s)
    raise ValueError(kind)


def _diffs(x1, x2):
    return x1[:, None, :] - x2[None, :, :]


def _gram(k: KernelSpec, x1, x2, diff):
    if k.kind == "Sum":
        return _gram(k.left, x1, x2, diff) + _gram(k.right, x1, x2, diff)
    if k.kind == "Product":
        return _gram(k.left, x1, x2, diff) * _gram(k.right, x1, x2, diff)
    if k.kind == "WeaklyPeriodic":
        d2 = np.sum(diff * diff, axis=-1)
        s = np.sin(np.pi / k.period * diff)
        return k.scale * np.exp(-0.5 * d2 / k.ld**2 - 2.0 / k.lp**2 * np.sum(s * s, axis=-1))
    r = np.sqrt(np.sum(diff * diff, axis=-1)) / k.lengthscale
    return k.scale * _radial(k.kind, r)


def _as_points(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def gram(k: KernelSpec, x1, x2) -> np.ndarray:
    """Matrix of kernel values between the rows of ``x1`` (N x d) and ``x2`` (N' x d)."""
    x1, x2 = _as_points(x1), _as_points(x2)
    if x1.shape[1] != x2.shape[1]:
        raise ValueError(f"gram: input dimensions differ ({x1.shape[1]} vs {x2.shape[1]})")
    return _gram(k, x1, x2, _diffs(x1, x2))


def kernel_eval(k: KernelSpec, x, x2) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if x.shape != x2.shape:
        raise ValueError(f"kernel_eval: dimension mismatch {x.shape} vs {x2.shape}")
    return float(gram(k, x[None, :], x2[None, :])[0, 0])


def sample_prior(k: KernelSpec, x, noise: float, rng: np.random.Generator, jitter=1e-8) -> np.ndarray:
    """One draw ``L z + sqrt(noise) * eps`` at the rows of ``x``."""
    x = _as_points(x)
    if x.shape[0] < 1:
        raise ValueError("sample_prior needs at least one input")
    chol = cholesky(gram(k, x, x), jitter=jitter)
    f = chol @ rng.standard_normal(x.shape[0])
    if noise > 0:
        f = f + np.sqrt(noise) * rng.standard_normal(x.shape[0])
    return f


@dataclass
class GPPosterior:
    """Posterior over latent function values; ``noise`` is kept separate from ``cov``."""

    mean: np.ndarray
    cov: np.ndarray
    noise: float

    def predictive_cov(self) -> np.ndarray:
        return self.cov + self.noise * np.eye(len(self.mean))


def posterior(k: KernelSpec, x, y, xs, noise: float, jitter=0.0) -> GPPosterior:
    xs = _as_points(xs)
    kss = gram(k, xs, xs)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        return GPPosterior(np.zeros(xs.shape[0]), kss, noise)
    x = _as_points(x)
    if x.shape[0] != y.size:
        raise ValueError(f"posterior: {x.shape[0]} inputs but {y.size} outputs")
    kxx = gram(k, x, x)
    kxx[np.diag_indices_from(kxx)] += noise
    chol = cholesky(kxx, jitter=jitter)
    ks = gram(k, x, xs)
    alpha = cho_solve(chol, y)
    v = tri_solve(chol, ks)
    cov = kss - v.T @ v
    cov = 0.5 * (cov + cov.T)
    return GPPosterior(ks.T @ alpha, cov, noise)


def log_marginal_likelihood(k: KernelSpec, x, y, noise: float, jitter=0.0) -> float:
    x = _as_points(x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    kxx = gram(k, x, x)
    kxx[np.diag_indices_from(kxx)] += noise
    return mvn_logpdf(y, np.zeros_like(y), kxx, jitter=jitter)


def mvn_logpdf(x, mean, cov, jitter=0.0) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    chol = cholesky(np.asarray(cov, dtype=np.float64), jitter=jitter)
    half = tri_solve(chol, x - mean)
    m = x.size
    return float(-0.5 * half @ half - 0.5 * logdet_from_chol(chol) - 0.5 * m * np.log(2.0 * np.pi))


def kl_gaussian(p_mean, p_cov, q_mean, q_cov, jitter=0.0) -> float:
    """KL(N(p_mean, p_cov) || N(q_mean, q_cov))."""
    p_mean = np.asarray(p_mean, dtype=np.float64).reshape(-1)
    q_mean = np.asarray(q_mean, dtype=np.float64).reshape(-1)
    m = p_mean.size
    lp = cholesky(np.asarray(p_cov, dtype=np.float64), jitter=jitter)
    lq = cholesky(np.asarray(q_cov, dtype=np.float64), jitter=jitter)
    a = tri_solve(lq, lp)
    diff = tri_solve(lq, q_mean - p_mean)
    kl = 0.5 * (
        float(np.sum(a * a)) + float(diff @ diff) - m + logdet_from_chol(lq) - logdet_from_chol(lp)
    )
    return kl


def kl_univariate(p_mean, p_std, q_mean, q_std):
    """Elementwise KL between univariate normals."""
    p_std = np.asarray(p_std, dtype=np.float64)
    q_std = np.asarray(q_std, dtype=np.float64)
    r = (np.asarray(q_mean) - np.asarray(p_mean)) / q_std
    ratio = (p_std / q_std) ** 2
    return 0.5 * (ratio + r * r - 1.0 - np.log(ratio))


# ------------------------------------------------------------ kernel regimes


def _lognormal_lengthscale(d_x, rng):
    return float(np.exp(rng.normal(np.log(np.sqrt(d_x) / 4.0), 0.5)))


def _lognormal_scale(rng):
    return float(np.exp(rng.normal(0.0, 1.0)))


def sample_kernel_regime(regime: str, d_x: int, rng: np.random.Generator) -> KernelSpec:
    """Draw a kernel from one of the four Bayesian-optimization pretraining regimes.

    i: Matern-5/2, fixed lengthscale sqrt(d_x)/4 and scale 1.
    ii: Matern-5/2 with log-normal lengthscale and scale.
    iii: one base kernel drawn uniformly, log-normal hyperparameters.
    iv: scale1 * k1 * k2 + scale2 * k3 * k4 with each factor a base kernel or absent.
    """
    if d_x < 1:
        raise ValueError("d_x must be >= 1")
    regime = regime.lower()
    if regime == "i":
        return KernelSpec("Matern52", np.sqrt(d_x) / 4.0, 1.0)
    if regime == "ii":
        return KernelSpec("Matern52", _lognormal_lengthscale(d_x, rng), _lognormal_scale(rng))
    if regime == "iii":
        kind = BASE_KINDS[rng.integers(len(BASE_KINDS))]
        return KernelSpec(kind, _lognormal_lengthscale(d_x, rng), _lognormal_scale(rng))
    if regime == "iv":
        while True:
            picks = rng.integers(len(BASE_KINDS) + 1, size=4)  # 0 means absent
            lengths = [_lognormal_lengthscale(d_x, rng) for _ in range(4)]
            scales = [_lognormal_scale(rng) for _ in range(2)]
            terms = []
            for t in range(2):
                factors = [
                    KernelSpec(BASE_KINDS[picks[i] - 1], lengths[i], 1.0)
                    for i in (2 * t, 2 * t + 1)
                    if picks[i] > 0
                ]
                if not factors:
                    continue
                first = factors[0]
                factors[0] = KernelSpec(first.kind, first.lengthscale, scales[t])
                term = factors[0] if len(factors) == 1 else factors[0] * factors[1]
                terms.append(term)
            if terms:
                return terms[0] if len(terms) == 1 else terms[0] + terms[1]
    raise ValueError(f"unknown regime {regime!r}")

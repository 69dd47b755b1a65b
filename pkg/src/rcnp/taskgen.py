"""Synthetic meta-learning tasks: GP draws, sawtooth waves and their mixture.

Task ``i`` of an epoch is generated from
``np.random.default_rng(np.random.SeedSequence([base_seed, i]))`` so any single
task can be regenerated without the rest of the epoch.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import gpref
from .gpref import KernelSpec

GP_FAMILIES = ("eq", "matern52", "weakly_periodic")
FAMILIES = GP_FAMILIES + ("sawtooth", "mixture", "regime")
MODES = ("INT", "OOID")


@dataclass
class Task:
    context_x: np.ndarray  # (N, d_x)
    context_y: np.ndarray  # (N, 1)
    target_x: np.ndarray  # (M, d_x)
    target_y: np.ndarray  # (M, 1)
    tag: str = ""
    seed: int = 0
    kernel: KernelSpec | None = None
    noise: float = 0.0

    def __post_init__(self):
        self.context_x = np.asarray(self.context_x, dtype=np.float64)
        self.target_x = np.asarray(self.target_x, dtype=np.float64)
        self.context_y = np.asarray(self.context_y, dtype=np.float64).reshape(-1, 1)
        self.target_y = np.asarray(self.target_y, dtype=np.float64).reshape(-1, 1)
        if self.context_x.ndim != 2 or self.target_x.ndim != 2:
            raise ValueError("task inputs must be 2-D (points x d_x)")
        if self.context_x.shape[0] < 1 or self.target_x.shape[0] < 1:
            raise ValueError("task needs at least one context and one target point")
        if self.context_x.shape[0] != self.context_y.shape[0]:
            raise ValueError("context inputs and outputs differ in length")
        if self.target_x.shape[0] != self.target_y.shape[0]:
            raise ValueError("target inputs and outputs differ in length")
        if self.context_x.shape[1] != self.target_x.shape[1]:
            raise ValueError("context and target inputs differ in dimension")

    @property
    def n_context(self):
        return self.context_x.shape[0]

    @property
    def n_target(self):
        return self.target_x.shape[0]

    @property
    def d_x(self):
        return self.context_x.shape[1]

    @property
    def has_reference(self):
        return self.kernel is not None

    def transformed(self, fn) -> "Task":
        """Copy with ``fn`` applied to every input point (rows of an N x d array)."""
        return replace(self, context_x=fn(self.context_x), target_x=fn(self.target_x))

    def translated(self, shift) -> "Task":
        shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (self.d_x,))
        return self.transformed(lambda x: x + shift)


@dataclass
class TaskConfig:
    family: str
    d_x: int = 1
    int_range: tuple[float, float] = (-2.0, 2.0)
    ooid_range: tuple[float, float] = (2.0, 6.0)
    context_range: tuple[int, int] = (1, 30)
    n_target: int = 50
    noise: float = 0.05
    regime: str = "iv"
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown task family {self.family!r}")
        lo, hi = self.context_range
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid context range {self.context_range}")
        if self.n_target < 1:
            raise ValueError("target count must be >= 1")
        if not self.hyper:
            self.hyper = default_hyperparams(self.d_x)

    @classmethod
    def default(cls, family: str, d_x: int = 1, **overrides) -> "TaskConfig":
        family = family.lower()
        if family in GP_FAMILIES or family == "regime":
            cfg = dict(context_range=(1, 30 * d_x), n_target=50 * d_x, noise=0.05)
        else:
            hi = 30 if d_x == 1 else 50 * d_x
            cfg = dict(context_range=(1, hi), n_target=100 * d_x, noise=0.05)
        cfg.update(overrides)
        return cls(family=family, d_x=d_x, **cfg)


def default_hyperparams(d_x: int) -> dict:
    """Generator hyperparameters scaled with input dimension."""
    if d_x < 1:
        raise ValueError("d_x must be >= 1")
    r = float(np.sqrt(d_x))
    return {
        "lengthscale": r,
        "ld": 2.0 * r,
        "lp": 4.0 * r,
        "period": r,
        "omega": (1.0 / (2.0 * r), 1.0 / r),
        "noise": 0.05,
    }


def family_kernel(family: str, hyper: dict) -> KernelSpec:
    if family == "eq":
        return gpref.eq(hyper["lengthscale"])
    if family == "matern52":
        return gpref.matern52(hyper["lengthscale"])
    if family == "weakly_periodic":
        return gpref.weakly_periodic(hyper["ld"], hyper["lp"], hyper["period"])
    raise ValueError(f"{family!r} is not a GP family")


def sample_sawtooth(d_x: int, omega_range, rng: np.random.Generator):
    """Random sawtooth ``(w <x, u> + phase) mod 1``; returns (f, params)."""
    lo, hi = omega_range
    if not 0 < lo <= hi:
        raise ValueError(f"invalid frequency range {omega_range}")
    w = rng.uniform(lo, hi)
    u = rng.standard_normal(d_x)
    u /= np.linalg.norm(u)
    phase = rng.uniform(0.0, 1.0)

    def f(x):
        return sawtooth_value(x, w, u, phase)

    return f, {"omega": w, "direction": u, "phase": phase}


def sawtooth_value(x, omega, direction, phase):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.mod(omega * (x @ np.asarray(direction)) + phase, 1.0)


def generate_task(cfg: TaskConfig, mode: str, rng: np.random.Generator, seed: int = 0) -> Task:
    mode = mode.upper()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    lo, hi = cfg.int_range if mode == "INT" else cfg.ooid_range
    family = cfg.family
    if family == "mixture":
        family = ("eq", "matern52", "weakly_periodic", "sawtooth")[rng.integers(4)]
    n = int(rng.integers(cfg.context_range[0], cfg.context_range[1] + 1))
    m = cfg.n_target
    x = rng.uniform(lo, hi, size=(n + m, cfg.d_x))
    tag = family if cfg.family != "mixture" else f"mixture:{family}"
    if family == "sawtooth":
        f, _ = sample_sawtooth(cfg.d_x, cfg.hyper["omega"], rng)
        y = f(x)
        kernel, noise = None, 0.0
    else:
        if family == "regime":
            kernel = gpref.sample_kernel_regime(cfg.regime, cfg.d_x, rng)
        else:
            kernel = family_kernel(family, cfg.hyper)
        noise = cfg.noise
        y = gpref.sample_prior(kernel, x, noise, rng)
    return Task(x[:n], y[:n], x[n:], y[n:], tag=tag, seed=seed, kernel=kernel, noise=noise)


def task_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), int(index)]))


def worker_count() -> int:
    env = os.environ.get("RCNP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def generate_epoch(cfg: TaskConfig, count: int, mode: str, base_seed: int) -> list[Task]:
    if count < 1:
        raise ValueError("count must be >= 1")

    def one(i):
        return generate_task(cfg, mode, task_rng(base_seed, i), seed=i)

    workers = min(worker_count(), count)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, range(count)))
    return [one(i) for i in range(count)]

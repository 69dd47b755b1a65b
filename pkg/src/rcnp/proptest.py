"""Executable property suites: equivariance of the relational models and gradient correctness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models, taskgen
from .models import MeanField, ModelSpec
from .numcore import grad_check

EQUIVARIANCE_TOL = 1e-6
CONTROL_MIN_DEVIATION = 1e-3
GRADIENT_TOL = 1e-4
MAX_CONDITION = 1e4
# Property suites draw weights at the He-uniform scale: larger activations
# make both the equivariance checks and the CNP control more demanding.
PROPERTY_INIT_FACTOR = 6.0


@dataclass
class PropertyResult:
    name: str
    passed: int = 0
    failed: int = 0
    skipped: int = 0
    worst: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def ok(self):
        return self.failed == 0 and self.passed > 0

    def line(self):
        status = "PASS" if self.ok else "FAIL"
        extra = f" skipped={self.skipped}" if self.skipped else ""
        return f"{status} {self.name}: passed={self.passed} failed={self.failed}{extra} worst={self.worst:.3g}"


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random rotation from the QR decomposition of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diagonal(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_shift(d: int, rng: np.random.Generator, max_norm: float = 10.0) -> np.ndarray:
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u) * rng.uniform(0.0, max_norm)


def random_task(d: int, rng: np.random.Generator, max_context=8, max_target=8) -> taskgen.Task:
    n = int(rng.integers(1, max_context + 1))
    m = int(rng.integers(1, max_target + 1))
    return taskgen.Task(
        rng.uniform(-2, 2, (n, d)), rng.standard_normal(n), rng.uniform(-2, 2, (m, d)), rng.standard_normal(m)
    )


def predictive_arrays(pred):
    """Mean and a second array (stds or dense covariance) that fully describe a predictive."""
    if isinstance(pred, MeanField):
        return pred.marginals()
    return pred.dense()


def max_deviation(a, b) -> float:
    return max(float(np.max(np.abs(x - y))) for x, y in zip(predictive_arrays(a), predictive_arrays(b)))


def transform_for(spec: ModelSpec, d: int, rng: np.random.Generator):
    """Input transformation the variant must be invariant to."""
    c = random_shift(d, rng)
    if spec.comparison == "dist":
        q = random_rotation(d, rng)
        return lambda x: x @ q.T + c
    return lambda x: x + c


def equivariance_check(spec: ModelSpec, params, tasks, transforms):
    """Max output deviation per task between original and transformed inputs."""
    moved = [t.transformed(f) for t, f in zip(tasks, transforms)]
    preds = models.forward_batch(spec, params, list(tasks) + moved)
    k = len(tasks)
    return np.array([max_deviation(preds[i], preds[k + i]) for i in range(k)])


def equivariance_suite(
    trials: int = 50, tasks_per_init: int = 50, dims=(1, 2, 3), seed: int = 1, negate_control: bool = False, **spec_kw
):
    """Relational variants under translation (Difference) or rigid motions (Distance), plus the CNP control.

    The control passes when CNP outputs move by more than 1e-3 under the shift
    ``4 * ones``. With ``negate_control`` the CNP is instead held to the
    equivariance tolerance, which must fail and so shows the check has power.
    """
    rng = np.random.default_rng(seed)
    results = []
    for variant in ("RCNP", "RGNP", "FullRCNP", "FullRGNP"):
        res = PropertyResult(f"equivariance[{variant}]")
        for d in dims:
            spec = ModelSpec(variant, d_x=d, **spec_kw)
            for _ in range(trials):
                params = models.init(spec, int(rng.integers(2**31)), PROPERTY_INIT_FACTOR)
                tasks = [random_task(d, rng) for _ in range(tasks_per_init)]
                dev = equivariance_check(spec, params, tasks, [transform_for(spec, d, rng) for _ in tasks])
                res.worst = max(res.worst, float(dev.max()))
                bad = int(np.sum(dev > EQUIVARIANCE_TOL))
                res.failed += bad
                res.passed += dev.size - bad
        results.append(res)
    results.append(cnp_control(trials, tasks_per_init, dims, rng, negate_control, **spec_kw))
    return results


def cnp_control(trials, tasks_per_init, dims, rng, negate=False, **spec_kw):
    res = PropertyResult("control[CNP not translation-invariant]" if not negate else "control[negated]")
    res.worst = np.inf
    for d in dims:
        spec = ModelSpec("CNP", d_x=d, **spec_kw)
        shift = 4.0 * np.ones(d)
        for _ in range(trials):
            params = models.init(spec, int(rng.integers(2**31)), PROPERTY_INIT_FACTOR)
            tasks = [random_task(d, rng) for _ in range(tasks_per_init)]
            dev = equivariance_check(spec, params, tasks, [lambda x: x + shift] * len(tasks))
            res.worst = min(res.worst, float(dev.min()))
            good = dev <= EQUIVARIANCE_TOL if negate else dev > CONTROL_MIN_DEVIATION
            res.passed += int(good.sum())
            res.failed += int((~good).sum())
    return res


# ------------------------------------------------------------------ gradients


def predictive_condition(spec, params, task) -> float:
    pred = models.forward(spec, params, task)
    if isinstance(pred, MeanField):
        return 1.0
    return float(np.linalg.cond(pred.dense()[1]))


def gradient_check_task(spec, params, task, n_coords: int, rng, h=1e-5):
    """Central-difference check of the loss gradient on a random subset of coordinates."""
    flat = models.flatten(params)
    coords = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)

    def f(v):
        return models.nll_objective(spec, models.unflatten_like(v, params), [task])

    return grad_check(f, flat, h=h, coords=coords)


def gradient_suite(
    tasks_per_variant: int = 10,
    seed: int = 1,
    n_coords: int = 40,
    max_attempts: int = 200,
    variants=models.VARIANTS,
    **spec_kw,
):
    """Gradient check on small random tasks for every variant.

    Pairs of (init, task) whose predictive covariance has condition number
    above 1e4 are skipped and counted: finite differences on such matrices
    are dominated by roundoff rather than by the gradient.
    """
    rng = np.random.default_rng(seed)
    results = []
    for variant in variants:
        res = PropertyResult(f"gradients[{variant}]")
        attempts = 0
        while res.passed + res.failed < tasks_per_variant and attempts < max_attempts:
            attempts += 1
            d = int(rng.integers(1, 3))
            spec = ModelSpec(variant, d_x=d, **spec_kw)
            params = models.init(spec, int(rng.integers(2**31)), PROPERTY_INIT_FACTOR)
            task = random_task(d, rng, max_context=4, max_target=3)
            if predictive_condition(spec, params, task) > MAX_CONDITION:
                res.skipped += 1
                continue
            r = gradient_check_task(spec, params, task, n_coords, rng)
            res.worst = max(res.worst, r.max_error)
            if r.max_error < GRADIENT_TOL and r.checked > 0:
                res.passed += 1
            else:
                res.failed += 1
        if res.passed + res.failed < tasks_per_variant:
            res.notes.append(f"only {res.passed + res.failed} usable tasks in {attempts} attempts")
            res.failed += tasks_per_variant - res.passed - res.failed
        results.append(res)
    return results


def run(suite: str = "all", trials: int = 50, seed: int = 1, negate_control: bool = False):
    out = []
    if suite in ("equivariance", "all"):
        out += equivariance_suite(trials=trials, tasks_per_init=trials, seed=seed, negate_control=negate_control)
    if suite in ("gradients", "all"):
        out += gradient_suite(tasks_per_variant=max(10, trials // 5), seed=seed)
    if not out:
        raise ValueError(f"unknown suite {suite!r}")
    return out

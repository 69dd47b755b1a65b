"""Evaluation metrics, the trivial and GP reference predictors, paired t-tests and a runtime bench."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import gpref, models, taskgen
from .models import DenseGaussian, MeanField, ModelSpec

TRIVIAL_STD_FLOOR = 1e-3


@dataclass
class EvalReport:
    values: np.ndarray
    mode: str = "INT"
    metric: str = "loglik"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size == 0:
            raise ValueError("empty report")

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        return float(self.values.std())

    def __len__(self):
        return self.values.size

    def write_csv(self, path):
        """One ``task_index,metric_value`` row per task, then ``mean`` and ``std`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task_index", "metric_value"])
            for i, v in enumerate(self.values):
                w.writerow([i, repr(float(v))])
            w.writerow(["mean", repr(self.mean)])
            w.writerow(["std", repr(self.std)])


# ---------------------------------------------------------------- predictors


def trivial_predictive(task: taskgen.Task) -> MeanField:
    """Empirical mean and population std of the context outputs at every target."""
    y = task.context_y.reshape(-1)
    sd = max(float(y.std()), TRIVIAL_STD_FLOOR)
    m = task.n_target
    return MeanField(np.full((m, 1), float(y.mean())), np.full((m, 1), sd))


def gp_predictive(task: taskgen.Task) -> DenseGaussian:
    """Exact posterior predictive of the generating GP, observation noise included."""
    if not task.has_reference:
        raise ValueError(f"task {task.seed} ({task.tag or 'untagged'}) has no GP reference")
    post = gpref.posterior(task.kernel, task.context_x, task.context_y, task.target_x, task.noise)
    return DenseGaussian(post.mean, post.predictive_cov())


def _predictions(model, params, tasks, batch_size=64):
    """Predictives for ``tasks``; ``model`` is a ModelSpec or a callable ``task -> predictive``."""
    if isinstance(model, ModelSpec):
        out = []
        for i in range(0, len(tasks), batch_size):
            out.extend(models.forward_batch(model, params, tasks[i : i + batch_size]))
        return out
    return [model(t) for t in tasks]


def _check_tasks(tasks):
    if len(tasks) == 0:
        raise ValueError("empty task set")


# -------------------------------------------------------------------- metrics


def normalized_loglik(model, params, tasks, mode=None) -> EvalReport:
    """Per-task ``loglik / M``."""
    _check_tasks(tasks)
    preds = _predictions(model, params, tasks)
    vals = [float(models.loglik(p, t.target_y)) / t.n_target for p, t in zip(preds, tasks)]
    return EvalReport(vals, mode or "INT", "loglik")


def _kl_to_reference(pred, ref: DenseGaussian, joint: bool) -> float:
    r_mean, r_cov = ref.dense()
    if isinstance(pred, MeanField) and not joint:
        mu, sd = pred.marginals()
        return float(np.sum(gpref.kl_univariate(mu, sd, r_mean, np.sqrt(np.diagonal(r_cov)))))
    mu, cov = pred.dense()
    return gpref.kl_gaussian(mu, cov, r_mean, r_cov)


def normalized_kl(model, params, tasks, mode=None, joint: bool = False) -> EvalReport:
    """Per-task ``KL(model || GP posterior predictive) / M``.

    Low-rank predictives are always compared jointly. Mean-field predictives
    are compared target by target against the GP marginals unless ``joint``,
    in which case their diagonal Gaussian is compared to the full GP predictive.
    """
    _check_tasks(tasks)
    refs = [gp_predictive(t) for t in tasks]
    preds = _predictions(model, params, tasks)
    vals = [_kl_to_reference(p, r, joint) / t.n_target for p, r, t in zip(preds, refs, tasks)]
    return EvalReport(vals, mode or "INT", "kl_joint" if joint else "kl")


def trivial_baseline(tasks, metric="loglik", mode=None, joint=False) -> EvalReport:
    if metric == "loglik":
        return normalized_loglik(trivial_predictive, None, tasks, mode)
    if metric == "kl":
        return normalized_kl(trivial_predictive, None, tasks, mode, joint=joint)
    raise ValueError(f"unknown metric {metric!r}")


# ------------------------------------------------------------- comparisons


@dataclass
class Comparison:
    t: float
    p: float  # one-sided p-value for "A better than B"
    verdict: str  # "A", "B" or "tie"
    mean_diff: float


def compare_models(a, b, higher_is_better: bool = True, alpha: float = 0.05) -> Comparison:
    """One-sided paired t-test on per-run scores ``a`` and ``b`` (paired by index).

    The verdict names the significantly better model, or "tie". With zero
    variance in the differences the sign alone decides.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValueError("paired samples differ in length")
    if a.size < 2:
        raise ValueError("need at least two paired runs")
    d = a - b if higher_is_better else b - a
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return Comparison(0.0, 0.5, "tie", 0.0)
        t = np.inf if mean > 0 else -np.inf
        return Comparison(t, 0.0 if mean > 0 else 1.0, "A" if mean > 0 else "B", mean)
    t = mean / (sd / np.sqrt(n))
    p_a = float(stats.t.sf(t, n - 1))
    p_b = float(stats.t.sf(-t, n - 1))
    verdict = "A" if p_a < alpha else "B" if p_b < alpha else "tie"
    return Comparison(float(t), p_a, verdict, mean)


def bold_set(scores: dict, higher_is_better: bool = True, alpha: float = 0.05) -> set:
    """Best-mean model plus every model not significantly worse than it."""
    if not scores:
        raise ValueError("no models to compare")
    sign = 1.0 if higher_is_better else -1.0
    best = max(scores, key=lambda k: sign * float(np.mean(scores[k])))
    out = {best}
    for name, vals in scores.items():
        if name != best:
            if compare_models(scores[best], vals, higher_is_better, alpha).verdict != "A":
                out.add(name)
    return out


# -------------------------------------------------------------------- bench


def bench_task(n: int, m: int, d_x: int, rng: np.random.Generator) -> taskgen.Task:
    return taskgen.Task(
        rng.uniform(-2, 2, (n, d_x)), rng.standard_normal(n), rng.uniform(-2, 2, (m, d_x)), rng.standard_normal(m)
    )


def runtime_bench(spec: ModelSpec, sizes, m: int = 20, repeats: int = 50, seed: int = 0, params=None):
    """Forward-pass wall time per context size.

    Returns rows ``(n, mean_ms, std_ms)``, std over repeats with ddof=0.
    """
    sizes = [int(n) for n in sizes]
    if any(n < 1 for n in sizes) or m < 1 or repeats < 1:
        raise ValueError("sizes, target count and repeats must be >= 1")
    if params is None:
        params = models.init(spec, seed)
    rng = np.random.default_rng(seed)
    models.forward(spec, params, bench_task(sizes[0], m, spec.d_x, rng))  # warm-up
    rows = []
    for n in sizes:
        times = []
        for _ in range(repeats):
            task = bench_task(n, m, spec.d_x, rng)
            t0 = time.perf_counter()
            pred = models.forward(spec, params, task)
            if not isinstance(pred, MeanField):
                pred.covariance()
            times.append(1e3 * (time.perf_counter() - t0))
        times = np.asarray(times)
        rows.append((n, float(times.mean()), float(times.std())))
    return rows


def write_bench_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "mean_ms", "std_ms"])
        for n, mean, sd in rows:
            w.writerow([n, repr(mean), repr(sd)])

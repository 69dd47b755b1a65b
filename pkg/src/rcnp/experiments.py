"""Desk-scale experiments shared by ``scripts/`` and the acceptance suite.

Trained models are cached as checkpoints under ``cache_dir``. The cache key
covers the model spec, task and training configs and a digest of the modules
that training depends on, so changing any of them retrains from scratch.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import bayesopt, checkpoint, evalbench, models, taskgen, trainer
from .models import ModelSpec

log = logging.getLogger(__name__)

DEFAULT_CACHE = Path(os.environ.get("RCNP_CACHE", Path.cwd() / ".rcnp_cache"))
EVAL_SEED = 11
N_EVAL = 256


TRAINING_SOURCES = ("numcore", "gpref.py", "taskgen.py", "encoding.py", "models.py", "trainer.py")


def source_digest() -> str:
    """Digest of the modules that determine training results."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    paths = []
    for name in TRAINING_SOURCES:
        p = root / name
        paths += sorted(p.rglob("*.py")) if p.is_dir() else [p]
    for path in paths:
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def _cache_key(spec, task_cfg, cfg) -> str:
    blob = json.dumps(
        {"spec": spec.to_dict(), "task": asdict(task_cfg), "train": cfg.to_dict(), "src": source_digest()},
        sort_keys=True,
        default=list,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def train_cached(spec: ModelSpec, task_cfg, cfg, cache_dir=None, use_cache=True):
    """Train (or load) a model; returns (params, meta) with ``meta["best_val_score"]``."""
    cache_dir = Path(cache_dir or DEFAULT_CACHE)
    path = cache_dir / f"{spec.variant}_{_cache_key(spec, task_cfg, cfg)}.rcnp"
    if use_cache and path.exists():
        ck = checkpoint.load(path)
        return ck.params, ck.meta
    t0 = time.perf_counter()
    params, record = trainer.train(spec, task_cfg, cfg)
    meta = {
        "best_epoch": record.best_epoch + 1,
        "best_val_score": record.best_score,
        "train_loss": record.train_loss,
        "val_score": record.val_score,
        "seconds": time.perf_counter() - t0,
    }
    if use_cache:
        cache_dir.mkdir(parents=True, exist_ok=True)
        checkpoint.save(path, checkpoint.Checkpoint(spec, params, meta))
    log.info("trained %s in %.0fs, best val %.4f", spec.variant, meta["seconds"], record.best_score)
    return params, meta


# Without a marginal warm-up, desk-scale GNP training settles on a near-prior
# joint Gaussian whose mean ignores the context.
GNP_WARMUP = 10


def desk_config(seed: int, **kw) -> trainer.TrainConfig:
    return trainer.TrainConfig.seeded(seed, **kw)


def variant_config(spec: ModelSpec, seed: int, cfg_kw=None) -> trainer.TrainConfig:
    """Desk config with the marginal warm-up for low-rank heads (a no-op for mean-field ones)."""
    warm = GNP_WARMUP if spec.head != "meanfield" else 0
    return desk_config(seed, **{"marginal_warmup": warm, **(cfg_kw or {})})


# ------------------------------------------------------------------ OOID


@dataclass
class OOIDResult:
    int_mean: dict = field(default_factory=dict)
    ooid_mean: dict = field(default_factory=dict)
    ooid_fresh_mean: dict = field(default_factory=dict)

    def gap(self, name):
        return self.int_mean[name] - self.ooid_mean[name]


def ooid_experiment(family="matern52", d_x=1, seed=0, variants=("RCNP", "CNP"), cfg_kw=None, **cache):
    """Train on the INT range and score on INT and OOID tasks.

    OOID tasks use the same evaluation seed as INT tasks (the ``eval``
    command's protocol); ``ooid_fresh_mean`` uses an unrelated seed.
    """
    task_cfg = taskgen.TaskConfig.default(family, d_x)
    int_tasks = taskgen.generate_epoch(task_cfg, N_EVAL, "INT", EVAL_SEED)
    ooid_tasks = taskgen.generate_epoch(task_cfg, N_EVAL, "OOID", EVAL_SEED)
    fresh = taskgen.generate_epoch(task_cfg, N_EVAL, "OOID", EVAL_SEED + 1000)
    res = OOIDResult()
    trained = {}
    for v in variants:
        spec = ModelSpec(v, d_x=d_x)
        params, _ = train_cached(spec, task_cfg, desk_config(seed, **(cfg_kw or {})), **cache)
        trained[v] = (spec, params)
        res.int_mean[v] = evalbench.normalized_loglik(spec, params, int_tasks).mean
        res.ooid_mean[v] = evalbench.normalized_loglik(spec, params, ooid_tasks).mean
        res.ooid_fresh_mean[v] = evalbench.normalized_loglik(spec, params, fresh).mean
    return res, trained


def translation_parity(spec, params, tasks, shift=4.0) -> np.ndarray:
    """Per-task |loglik(task) - loglik(task + shift)|."""
    a = evalbench.normalized_loglik(spec, params, tasks).values
    b = evalbench.normalized_loglik(spec, params, [t.translated(shift) for t in tasks]).values
    return np.abs(a - b)


# -------------------------------------------------------------------- KL


@dataclass
class KLResult:
    joint: dict = field(default_factory=dict)  # name -> per-seed mean KL
    marginal: dict = field(default_factory=dict)


def kl_experiment(family="eq", d_x=1, seeds=(0, 1, 2), variants=("RGNP", "RCNP", "CNP"), cfg_kw=None, **cache):
    """Per-seed mean normalized KL to the GP predictive, with the trivial predictor alongside."""
    task_cfg = taskgen.TaskConfig.default(family, d_x)
    res = KLResult()
    for name in list(variants) + ["Trivial"]:
        res.joint[name], res.marginal[name] = [], []
    for seed in seeds:
        tasks = taskgen.generate_epoch(task_cfg, N_EVAL, "INT", EVAL_SEED + seed)
        for v in variants:
            spec = ModelSpec(v, d_x=d_x)
            params, _ = train_cached(spec, task_cfg, variant_config(spec, seed, cfg_kw), **cache)
            res.joint[v].append(evalbench.normalized_kl(spec, params, tasks, joint=True).mean)
            res.marginal[v].append(evalbench.normalized_kl(spec, params, tasks).mean)
        res.joint["Trivial"].append(evalbench.trivial_baseline(tasks, "kl", joint=True).mean)
        res.marginal["Trivial"].append(evalbench.trivial_baseline(tasks, "kl").mean)
    return res


# --------------------------------------------------------------------- BO


BO_PRETRAIN = dict(lr=1e-3, marginal_warmup=GNP_WARMUP)


def pretrain_surrogate(d_x=3, seed=0, variant="RGNP", head="linear", cfg_kw=None, **cache):
    spec = ModelSpec(variant, d_x=d_x, head=head)
    task_cfg = bayesopt.pretrain_task_config(d_x)
    cfg = desk_config(seed, **{**BO_PRETRAIN, **(cfg_kw or {})})
    params, meta = train_cached(spec, task_cfg, cfg, **cache)
    return bayesopt.NPSurrogate(spec, params, box=task_cfg.int_range), meta


def bo_experiment(surrogates: dict, fn="hartmann3", restarts=10, steps=50, seed=0, out_dir=None):
    """Final errors per surrogate name; traces are written when ``out_dir`` is given."""
    box = bayesopt.blackbox(fn)
    finals = {}
    for name, sur in surrogates.items():
        finals[name] = []
        for k in range(restarts):
            trace = bayesopt.bo_run(sur, box, steps=steps, seed=seed, restart=k)
            finals[name].append(trace.final_error)
            if out_dir is not None:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                trace.write_csv(Path(out_dir) / f"trace_{name}_{k}.csv")
            log.info("%s restart %d: final error %.3g", name, k, trace.final_error)
    return {k: np.asarray(v) for k, v in finals.items()}


# ------------------------------------------------------------------ bench


def bench_ratios(variants=("FullRCNP", "RCNP", "CNP"), small=20, large=80, m=20, repeats=50, seed=0):
    """Forward time ratio large/small context per variant, plus the raw rows."""
    out = {}
    for v in variants:
        rows = evalbench.runtime_bench(ModelSpec(v), [small, large], m=m, repeats=repeats, seed=seed)
        out[v] = (rows[1][1] / rows[0][1], rows)
    return out

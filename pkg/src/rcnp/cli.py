"""Command-line interface: ``rcnp train|eval|bo|bench|proptest``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from . import bayesopt, checkpoint, evalbench, models, proptest, taskgen, trainer
from .models import ModelError, ModelSpec

log = logging.getLogger("rcnp")

SCALES = {
    "desk": dict(epochs=20, tasks_per_epoch=1024, width=128, d_emb=128, d_sigma=16),
    "paper": dict(epochs=100, tasks_per_epoch=2**14, width=256, d_emb=256, d_sigma=64),
}


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcnp", description="Relational conditional neural processes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on synthetic tasks")
    t.add_argument("--task", required=True, choices=taskgen.FAMILIES)
    t.add_argument("--dx", type=int, default=1)
    t.add_argument("--model", required=True)
    t.add_argument("--head", choices=models.HEADS)
    t.add_argument("--comparison", choices=("diff", "dist"))
    t.add_argument("--regime", default="iv", choices=("i", "ii", "iii", "iv"))
    t.add_argument("--bo-pretrain", action="store_true", help="kernel-regime tasks on the unit cube for BO")
    t.add_argument("--scale", default="desk", choices=sorted(SCALES))
    t.add_argument("--epochs", type=int)
    t.add_argument("--tasks-per-epoch", type=int)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--n-val", type=int, default=256)
    t.add_argument("--marginal-warmup", type=int, default=0, help="leading epochs on the marginal likelihood")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="epoch CSV (default: OUT.csv)")
    t.add_argument("--gnuplot-stub", action="store_true")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mode", default="int", choices=("int", "ooid"))
    e.add_argument("--metric", default="loglik", choices=("loglik", "kl"))
    e.add_argument("--joint-kl", action="store_true", help="joint KL for mean-field models")
    e.add_argument("--task", choices=taskgen.FAMILIES, help="override the training task family")
    e.add_argument("--n-eval", type=int, default=256)
    e.add_argument("--eval-seed", type=int, default=11)
    e.add_argument("--out", required=True)
    e.add_argument("--dump-tasks")
    e.add_argument("--gnuplot-stub", action="store_true")

    b = sub.add_parser("bo", help="Bayesian optimization on a Hartmann function")
    b.add_argument("--fn", required=True, choices=sorted(bayesopt.BLACKBOXES))
    b.add_argument("--surrogate", required=True)
    b.add_argument("--checkpoint")
    b.add_argument("--steps", type=int, default=50)
    b.add_argument("--init", type=int, default=5)
    b.add_argument("--restarts", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out-dir", default=".")
    b.add_argument("--gnuplot-stub", action="store_true")

    n = sub.add_parser("bench", help="forward-pass runtime against context size")
    n.add_argument("--model", required=True)
    n.add_argument("--dx", type=int, default=1)
    n.add_argument("--n", type=_int_list, default=[10, 20, 40, 80])
    n.add_argument("--m", type=int, default=20)
    n.add_argument("--repeats", type=int, default=50)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--out")
    n.add_argument("--gnuplot-stub", action="store_true")

    q = sub.add_parser("proptest", help="run the property suites")
    q.add_argument("--suite", default="all", choices=("equivariance", "gradients", "all"))
    q.add_argument("--trials", type=int, default=50)
    q.add_argument("--seed", type=int, default=1)
    q.add_argument("--negate-control", action="store_true")
    return p


# ------------------------------------------------------------------ commands


def _spec_from_args(args, scale) -> ModelSpec:
    try:
        return ModelSpec(
            args.model,
            d_x=args.dx,
            comparison=args.comparison,
            head=args.head,
            width=scale["width"],
            d_emb=scale["d_emb"],
            d_sigma=scale["d_sigma"],
        )
    except ModelError as err:
        raise UsageError(str(err)) from None


def _task_config(family, d_x, regime="iv", bo_pretrain=False) -> taskgen.TaskConfig:
    if bo_pretrain:
        return bayesopt.pretrain_task_config(d_x, regime)
    return taskgen.TaskConfig.default(family, d_x, regime=regime)


def _task_cfg_meta(cfg: taskgen.TaskConfig) -> dict:
    d = asdict(cfg)
    d.pop("hyper")
    return {f"task.{k}": list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _task_cfg_from_meta(meta: dict) -> taskgen.TaskConfig:
    kw = {k[5:]: v for k, v in meta.items() if k.startswith("task.")}
    for k in ("int_range", "ooid_range", "context_range"):
        kw[k] = tuple(kw[k])
    return taskgen.TaskConfig(**kw)


def _gnuplot(csv_path, x_col, y_col, title):
    return (
        "set datafile separator ','\n"
        f"set title '{title}'\n"
        "set key autotitle columnhead\n"
        f"plot '{csv_path}' using {x_col}:{y_col} with linespoints\n"
    )


def cmd_train(args):
    scale = dict(SCALES[args.scale])
    if args.task == "regime" or args.bo_pretrain:
        family = "regime"
    else:
        family = args.task
    spec = _spec_from_args(args, scale)
    task_cfg = _task_config(family, args.dx, args.regime, args.bo_pretrain)
    cfg = trainer.TrainConfig.seeded(
        args.seed,
        epochs=args.epochs or scale["epochs"],
        tasks_per_epoch=args.tasks_per_epoch or scale["tasks_per_epoch"],
        batch_size=args.batch_size,
        lr=args.lr,
        n_val=args.n_val,
        marginal_warmup=args.marginal_warmup,
    )
    params, record = trainer.train(spec, task_cfg, cfg, progress=_progress)
    meta = {f"train.{k}": v for k, v in cfg.to_dict().items()}
    meta.update(_task_cfg_meta(task_cfg))
    meta["seed"] = args.seed
    meta["best_epoch"] = record.best_epoch + 1
    meta["best_val_score"] = record.best_score
    checkpoint.save(args.out, checkpoint.Checkpoint(spec, params, meta))
    log_path = args.log or args.out + ".csv"
    record.write_csv(log_path)
    print(f"best epoch {record.best_epoch + 1}, validation score {record.best_score:.6f}")
    if args.gnuplot_stub:
        print(_gnuplot(log_path, 1, 3, "validation score"))
    return 0


def _progress(epoch, record):
    log.info("epoch %d: train loss %.5f, val score %.5f", epoch, record.train_loss[-1], record.val_score[-1])


def cmd_eval(args):
    ckpt = checkpoint.load(args.checkpoint)
    task_cfg = _task_cfg_from_meta(ckpt.meta)
    if args.task:
        task_cfg = _task_config(args.task, task_cfg.d_x, task_cfg.regime)
    if task_cfg.d_x != ckpt.spec.d_x:
        raise RuntimeError(f"checkpoint expects d_x={ckpt.spec.d_x} but tasks have d_x={task_cfg.d_x}")
    if args.metric == "kl" and task_cfg.family in ("sawtooth", "mixture"):
        raise RuntimeError(f"no GP reference for {task_cfg.family} tasks; use --metric loglik")
    mode = args.mode.upper()
    tasks = taskgen.generate_epoch(task_cfg, args.n_eval, mode, args.eval_seed)
    if args.dump_tasks:
        with open(args.dump_tasks, "wb") as fh:
            fh.write(checkpoint.dumps_tasks(tasks))
    if args.metric == "kl":
        report = evalbench.normalized_kl(ckpt.spec, ckpt.params, tasks, mode, joint=args.joint_kl)
    else:
        report = evalbench.normalized_loglik(ckpt.spec, ckpt.params, tasks, mode)
    report.write_csv(args.out)
    print(f"{report.metric} {mode}: mean {report.mean:.6f} std {report.std:.6f} over {len(report)} tasks")
    if args.gnuplot_stub:
        print(_gnuplot(args.out, 1, 2, f"{report.metric} per task"))
    return 0


def _surrogate(args, box):
    kind = args.surrogate.lower()
    if kind == "gp":
        return bayesopt.GPSurrogate()
    if kind == "random":
        return bayesopt.RandomSurrogate()
    if not args.checkpoint:
        raise UsageError(f"--surrogate {args.surrogate} needs --checkpoint")
    ckpt = checkpoint.load(args.checkpoint)
    try:
        variant = models.canonical_variant(kind)
    except ModelError as err:
        raise UsageError(str(err)) from None
    if variant != ckpt.spec.variant:
        raise RuntimeError(f"checkpoint holds a {ckpt.spec.variant}, not a {variant}")
    if ckpt.spec.d_x != box.dim:
        raise RuntimeError(f"checkpoint has d_x={ckpt.spec.d_x} but {box.name} is {box.dim}-dimensional")
    lo, hi = ckpt.meta.get("task.int_range", (0.0, 1.0))
    return bayesopt.NPSurrogate(ckpt.spec, ckpt.params, box=(lo, hi))


def cmd_bo(args):
    box = bayesopt.blackbox(args.fn)
    surrogate = _surrogate(args, box)
    if args.restarts < 1:
        raise UsageError("--restarts must be >= 1")
    os.makedirs(args.out_dir, exist_ok=True)
    finals = []
    for k in range(args.restarts):
        trace = bayesopt.bo_run(surrogate, box, init=args.init, steps=args.steps, seed=args.seed, restart=k)
        trace.write_csv(os.path.join(args.out_dir, f"trace_{surrogate.name}_{k}.csv"))
        finals.append(trace.final_error)
        log.info("restart %d: final error %.6g", k, trace.final_error)
    summary = os.path.join(args.out_dir, f"summary_{surrogate.name}.csv")
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["restart", "final_error"])
        for k, e in enumerate(finals):
            w.writerow([k, repr(e)])
        w.writerow(["median", repr(float(np.median(finals)))])
    print(f"{surrogate.name} on {box.name}: median final error {np.median(finals):.6g}")
    if args.gnuplot_stub:
        print(_gnuplot(os.path.join(args.out_dir, f"trace_{surrogate.name}_0.csv"), 1, 5, "error"))
    return 0


def cmd_bench(args):
    try:
        spec = ModelSpec(args.model, d_x=args.dx)
    except ModelError as err:
        raise UsageError(str(err)) from None
    rows = evalbench.runtime_bench(spec, args.n, args.m, args.repeats, args.seed)
    out = args.out or sys.stdout
    if args.out:
        evalbench.write_bench_csv(rows, args.out)
    else:
        w = csv.writer(out)
        w.writerow(["n", "mean_ms", "std_ms"])
        for r in rows:
            w.writerow([r[0], repr(r[1]), repr(r[2])])
    if args.gnuplot_stub:
        print(_gnuplot(args.out or "bench.csv", 1, 2, f"{spec.variant} forward time (ms)"))
    return 0


def cmd_proptest(args):
    results = proptest.run(args.suite, trials=args.trials, seed=args.seed, negate_control=args.negate_control)
    for r in results:
        print(r.line())
        for note in r.notes:
            print(f"  {note}")
    return 0 if all(r.ok for r in results) else 1


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bo": cmd_bo, "bench": cmd_bench, "proptest": cmd_proptest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "model", None) is not None and args.command == "train":
        try:
            variant = models.canonical_variant(args.model)
        except ModelError as err:
            parser.error(str(err))
        if variant in ("CNP", "GNP") and args.comparison:
            parser.error(f"--comparison is not valid for {variant}")
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        parser.error(str(err))
    except (RuntimeError, ValueError, OSError, FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"rcnp: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

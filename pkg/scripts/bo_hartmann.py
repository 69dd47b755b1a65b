"""Bayesian optimization on Hartmann functions: pretrained RGNP vs GP vs random search."""

import argparse
import csv
import logging
from pathlib import Path

import numpy as np

from rcnp import bayesopt, experiments


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--fn", default="hartmann3", choices=sorted(bayesopt.BLACKBOXES))
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--head", default="linear", choices=("linear", "kvv"))
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--tasks-per-epoch", type=int, default=1024)
    p.add_argument("--marginal-warmup", type=int, default=experiments.BO_PRETRAIN["marginal_warmup"])
    p.add_argument("--out-dir", default="bo_out")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    dim = bayesopt.blackbox(args.fn).dim
    cfg_kw = dict(epochs=args.epochs, tasks_per_epoch=args.tasks_per_epoch, marginal_warmup=args.marginal_warmup)
    sur, meta = experiments.pretrain_surrogate(dim, seed=0, head=args.head, cfg_kw=cfg_kw)
    print(f"pretrained RGNP ({args.head}), best validation score {meta['best_val_score']:.4f}")
    surrogates = {"rgnp": sur, "gp": bayesopt.GPSurrogate(), "random": bayesopt.RandomSurrogate()}
    finals = experiments.bo_experiment(surrogates, args.fn, args.restarts, args.steps, args.seed, args.out_dir)

    out = Path(args.out_dir) / "summary.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["surrogate", "median_final_error", "mean_final_error"])
        for k, v in finals.items():
            w.writerow([k, repr(float(np.median(v))), repr(float(np.mean(v)))])
            print(f"{k:7s} median final error {np.median(v):.4g}")
    print(f"traces and summary in {args.out_dir}/")


if __name__ == "__main__":
    main()

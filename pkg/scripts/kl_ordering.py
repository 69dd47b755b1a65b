"""Normalized KL to the GP predictive for RGNP, RCNP, CNP and the trivial predictor."""

import argparse
import logging

import numpy as np

from rcnp import evalbench, experiments


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--family", default="eq")
    p.add_argument("--dx", type=int, default=1)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--tasks-per-epoch", type=int, default=1024)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    seeds = [int(s) for s in args.seeds.split(",")]
    cfg_kw = dict(epochs=args.epochs, tasks_per_epoch=args.tasks_per_epoch)
    res = experiments.kl_experiment(args.family, args.dx, seeds, cfg_kw=cfg_kw)
    for label, table in (("joint", res.joint), ("marginal", res.marginal)):
        print(f"{label} KL (mean over seeds, std)")
        for k, v in table.items():
            print(f"  {k:8s} {np.mean(v):.4f} ({np.std(v):.4f})")
    bold = evalbench.bold_set(res.joint, higher_is_better=False)
    print("best under joint KL (not significantly worse than the best mean):", ", ".join(sorted(bold)))


if __name__ == "__main__":
    main()

"""Forward-pass time against context size for CNP, RCNP and FullRCNP (M=20)."""

import argparse

from rcnp import evalbench
from rcnp.models import ModelSpec


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", default="10,20,40,80")
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--out", help="CSV with one row per (model, n)")
    args = p.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    rows = []
    for v in ("CNP", "RCNP", "FullRCNP"):
        for n, mean, sd in evalbench.runtime_bench(ModelSpec(v), sizes, m=args.m, repeats=args.repeats):
            rows.append((v, n, mean, sd))
            print(f"{v:9s} N={n:4d} {mean:9.2f} ms ({sd:.2f})")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("model,n,mean_ms,std_ms\n")
            for r in rows:
                fh.write(f"{r[0]},{r[1]},{r[2]!r},{r[3]!r}\n")


if __name__ == "__main__":
    main()

"""Time one likelihood, score and Fisher evaluation over a range of sizes.

Prints oracle column counts, timings and the log-log slopes of total and
linear-algebra time against n.
"""
import argparse
import warnings

import numpy as np

from hodlr_gp import pipeline as pl
from hodlr_gp.config import ModelConfig
from hodlr_gp.mle import HodlrConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="adr", choices=("wind", "adr", "matern"))
    ap.add_argument("--log2n", type=int, nargs=2, default=(9, 13), metavar=("LO", "HI"))
    ap.add_argument("--rank", type=int, default=32)
    ap.add_argument("--leaf-min", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    warnings.simplefilter("ignore")
    ns = [2**r for r in range(args.log2n[0], args.log2n[1] + 1)]
    cfg = HodlrConfig(args.rank, args.leaf_min, 2 * args.leaf_min)
    theta = pl.DEFAULT_THETA[args.model][1]
    cells = []
    print("n depth apply_cols deriv_cols oracle_s linalg_s total_s")
    for n in ns:
        ds = pl.simulate_dataset(ModelConfig(name=args.model, n=n), args.seed)
        c = pl.bench_cell(ds, theta, cfg)
        cells.append(c)
        print(n, c["depth"], c["apply_columns"], c["deriv_columns"],
              f"{c['oracle_seconds']:.3f} {c['linear_algebra_seconds']:.3f} {c['total_seconds']:.3f}", flush=True)
    for key in ("linear_algebra_seconds", "total_seconds"):
        slope = np.polyfit(np.log(ns), np.log([c[key] for c in cells]), 1)[0]
        print(f"slope {key}: {slope:.3f}")


if __name__ == "__main__":
    main()

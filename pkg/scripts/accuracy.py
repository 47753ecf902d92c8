"""Log10 relative precisions of the approximate likelihood, score and Fisher matrix."""
import argparse
import warnings

import numpy as np

from hodlr_gp import pipeline as pl
from hodlr_gp.config import ModelConfig
from hodlr_gp.mle import HodlrConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="wind", choices=("wind", "adr", "matern"))
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--rank", type=int, default=128)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    warnings.simplefilter("ignore")
    theta = pl.DEFAULT_THETA[args.model][1]
    rows = []
    for seed in range(args.seeds):
        ds = pl.simulate_dataset(ModelConfig(name=args.model, n=args.n), seed)
        acc = pl.accuracy_at(pl.make_problem(ds, theta, HodlrConfig(args.rank)), theta)
        rows.append([pl.log10(acc[m]) for m in pl.METRICS])
        print(seed, " ".join(f"{m}={v:.2f}" for m, v in zip(pl.METRICS, rows[-1])), flush=True)
    print("mean", " ".join(f"{m}={v:.2f}" for m, v in zip(pl.METRICS, np.mean(rows, axis=0))))


if __name__ == "__main__":
    main()

"""Fit the same data with the HODLR and the dense likelihood and compare estimates."""
import argparse
import warnings

import numpy as np

from hodlr_gp import pipeline as pl
from hodlr_gp.config import ModelConfig
from hodlr_gp.mle import HodlrConfig, fit_mle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="adr", choices=("wind", "adr", "matern"))
    ap.add_argument("--n", type=int, default=1024)
    ap.add_argument("--rank", type=int, default=128)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()
    warnings.simplefilter("ignore")
    theta0 = pl.DEFAULT_THETA[args.model][1]
    for seed in args.seeds:
        ds = pl.simulate_dataset(ModelConfig(name=args.model, n=args.n), seed)
        hod = fit_mle(pl.make_problem(ds, theta0, HodlrConfig(args.rank)), theta0)
        dense = fit_mle(pl.make_problem(ds, theta0, method="dense"), theta0)
        print(f"seed {seed}: hodlr {hod.status} {np.round(hod.theta_hat, 4)} "
              f"({hod.times['total']:.0f} s), dense {dense.status} {np.round(dense.theta_hat, 4)} "
              f"({dense.times['total']:.0f} s)")
        if dense.ci is not None and dense.ci.valid:
            ratio = np.abs(hod.theta_hat - dense.theta_hat) / dense.ci.half_width
            print("  |difference| / dense half-width:", np.round(ratio, 4))


if __name__ == "__main__":
    main()

"""``hodlr-gp <simulate|fit|bench|accuracy|demo1d> --config <path> [--out <dir>] [--seed <u64>]``.

Exit codes: 0 success, 2 config or input error, 3 resource guard, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import ConfigError, ModelConfig, ResourceGuardError, RunConfig, load_config
from .mle import FitOptions, fit_mle

EXIT_OK, EXIT_CONFIG, EXIT_GUARD, EXIT_NUMERIC = 0, 2, 3, 4


class NumericalFailure(RuntimeError):
    pass


def _threads() -> int:
    raw = os.environ.get("HODLRGP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"HODLRGP_THREADS must be an integer, got {raw!r}")


def _map(fn, items):
    """Ordered map over a worker pool capped by ``HODLRGP_THREADS``."""
    items = list(items)
    nt = _threads()
    if nt == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=nt) as ex:
        return list(ex.map(fn, items))


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([pl.fmt(v) for v in r])
    tmp.replace(path)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def _outdir(cfg: RunConfig, out) -> Path:
    d = Path(out or cfg.out or ".")
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {d}: {exc}") from exc
    if not os.access(d, os.W_OK):
        raise ConfigError(f"output directory {d} is not writable")
    return d


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    ds = pl.simulate_dataset(cfg.model, cfg.seed)
    csv_path, meta_path = pl.write_dataset(ds, out)
    print(f"wrote {csv_path} ({ds.n} locations) and {meta_path}")
    return EXIT_OK


def cmd_fit(cfg: RunConfig, out: Path) -> int:
    if cfg.dataset is None:
        raise ConfigError("fit needs a dataset path")
    ds = pl.read_dataset(cfg.dataset, cfg.metadata)
    theta0 = cfg.fit.theta0 if cfg.fit.theta0 is not None else pl.DEFAULT_THETA[ds.model][1]
    method = cfg.fit.method
    prob = pl.make_problem(ds, theta0, pl.hodlr_config(cfg), method)
    if prob.method == "dense":
        pl.check_dense(prob.n)
    rep = fit_mle(prob, theta0, FitOptions(max_iter=cfg.fit.max_iter, rel_tol=cfg.fit.rel_tol))
    names = list(prob.oracle.param_names)
    report = rep.to_json()
    report.update({"model": ds.model, "n": ds.n, "method": prob.method, "theta0": [float(v) for v in theta0],
                   "hodlr": vars(pl.hodlr_config(cfg)), "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")})
    _write_json(out / "fit_report.json", report)
    _write_csv(out / "fit_iterations.csv", ["iter", "loglik", "score_norm", *names],
               [[h["iter"], h["loglik"], h["score_norm"], *h["theta"]] for h in rep.history])
    if rep.ci is not None:
        _write_csv(out / "fit_ci.csv", ["param", "estimate", "lo", "hi"],
                   [[nm, e, lo, hi] for nm, e, lo, hi in zip(names, rep.theta_hat, rep.ci.lo, rep.ci.hi)])
    print(f"fit {rep.status} after {rep.iterations} iterations: "
          + ", ".join(f"{nm}={v:.6g}" for nm, v in zip(names, rep.theta_hat)))
    if rep.status == "failed":
        print(f"optimizer failure: {rep.message}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_bench(cfg: RunConfig, out: Path) -> int:
    b = cfg.bench
    sizes = [int(s) for s in b.sizes]
    ranks = [int(k) for k in b.ranks]
    if not sizes or not ranks:
        raise ConfigError("bench needs non-empty size and rank lists")
    big = [s for s in sizes if (2 * s if cfg.model.name == "wind" else s) > pl.BENCH_LIMIT]
    if big:
        raise ResourceGuardError(f"bench sizes {big} exceed the guard {pl.BENCH_LIMIT}")
    if cfg.model.name == "nonstationary1d":
        raise ConfigError("bench needs a matrix-free model (wind, adr or matern)")
    theta = b.theta if b.theta is not None else pl.DEFAULT_THETA[cfg.model.name][1]
    cells = [(n, k, r) for n in sizes for k in ranks for r in range(b.repeats)]
    datasets = {}
    for n in sizes:
        m = ModelConfig(**{**vars(cfg.model), "n": n, "grid": None, "thin": 1.0, "coarsen": 1})
        datasets[n] = pl.simulate_dataset(m, cfg.seed)

    def run(cell):
        n, k, r = cell
        h = pl.hodlr_config(cfg)
        h.rank = k
        return cell, pl.bench_cell(datasets[n], theta, h)

    rows = []
    for (n, k, r), res in _map(run, cells):
        for metric, value in res.items():
            rows.append([n, k, metric, value, r])
    _write_csv(out / "bench.csv", ["n", "k", "metric", "value", "repeat"], rows)
    _write_json(out / "bench_metadata.json", {"model": cfg.model.name, "sizes": sizes, "ranks": ranks,
                                              "repeats": b.repeats, "theta": list(theta), "seed": cfg.seed,
                                              "threads": _threads(), "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")})
    print(f"wrote {out / 'bench.csv'} ({len(cells)} cells)")
    return EXIT_OK


def cmd_accuracy(cfg: RunConfig, out: Path) -> int:
    m = cfg.model
    if cfg.dataset is not None:
        datasets = [pl.read_dataset(cfg.dataset, cfg.metadata)]
    else:
        pts, _, _ = pl.observation_points(m, cfg.seed)
        dim = 2 * pts.shape[0] if m.name == "wind" else pts.shape[0]
        pl.check_dense(dim)
        datasets = [pl.simulate_dataset(m, cfg.seed + s) for s in range(cfg.accuracy.n_seeds)]
    name = datasets[0].model
    theta = cfg.accuracy.theta if cfg.accuracy.theta is not None else pl.DEFAULT_THETA[name][1]

    def run(ds):
        prob = pl.make_problem(ds, theta, pl.hodlr_config(cfg))
        pl.check_dense(prob.n)
        return ds.meta.get("seed", cfg.seed), pl.accuracy_at(prob, theta)

    results = _map(run, datasets)
    header = ["seed", *(f"log10_{k}" for k in pl.METRICS), "fisher_spd"]
    rows = [[s, *(pl.log10(r[k]) for k in pl.METRICS), int(r["fisher_spd"])] for s, r in results]
    means = [float(np.mean([row[1 + i] for row in rows])) for i in range(len(pl.METRICS))]
    rows.append(["mean", *means, int(all(r["fisher_spd"] for _, r in results))])
    _write_csv(out / "accuracy.csv", header, rows)
    _write_json(out / "accuracy_metadata.json", {"model": name, "theta": list(theta), "hodlr": vars(pl.hodlr_config(cfg)),
                                                 "seeds": [s for s, _ in results],
                                                 "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")})
    print("mean log10 precisions: " + ", ".join(f"{k}={v:.3f}" for k, v in zip(pl.METRICS, means)))
    return EXIT_OK


def cmd_demo1d(cfg: RunConfig, out: Path) -> int:
    demo = cfg.demo
    cells = [(s, cfg.seed + i) for s, _, _ in pl.DEMO_SETTINGS for i in range(demo.n_seeds)]
    results = _map(lambda c: pl.demo1d_fit(c[0], c[1], demo), cells)
    keys = ["setting", "seed", "n", "status", "ci_valid", "a_hat", "b_hat", "a_lo", "a_hi", "b_lo", "b_hi",
            "a_width", "b_width"]
    _write_csv(out / "demo1d.csv", keys, [[int(r[k]) if k == "ci_valid" else r[k] for k in keys] for r in results])
    summary = []
    for s, _, _ in pl.DEMO_SETTINGS:
        rs = [r for r in results if r["setting"] == s and r["ci_valid"]]
        summary.append([s, len(rs), np.mean([r["a_width"] for r in rs]) if rs else np.nan,
                        np.mean([r["b_width"] for r in rs]) if rs else np.nan])
    _write_csv(out / "demo1d_summary.csv", ["setting", "valid_fits", "mean_a_width", "mean_b_width"], summary)
    _write_json(out / "demo1d_metadata.json", {"theta_true": list(demo.theta_true), "sigma": demo.sigma,
                                               "nugget": demo.nugget, "n_seeds": demo.n_seeds, "seed": cfg.seed,
                                               "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")})
    for row in summary:
        print(f"{row[0]:>10}: {row[1]} valid fits, mean CI width a={row[2]:.4g}, b={row[3]:.4g}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "bench": cmd_bench, "accuracy": cmd_accuracy,
            "demo1d": cmd_demo1d}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hodlr-gp", description="HODLR Gaussian-process likelihood toolkit")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="unsigned 64-bit seed overriding the config")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        out = _outdir(cfg, args.out)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ResourceGuardError, MemoryError) as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (np.linalg.LinAlgError, FloatingPointError, NumericalFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

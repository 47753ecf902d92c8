"""Experiment plumbing shared by the command line, scripts and acceptance tests.

Datasets, problems and the bench / accuracy / 1D demo drivers.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ModelConfig, ResourceGuardError, RunConfig
from .mle import (
    ConfidenceIntervals, FitOptions, GpProblem, HodlrConfig, accuracy_metrics, confidence_intervals, evaluate, fit_mle,
)
from .models import MaternObsOracle, nonstationary_oracle, simulate_data
from .models import adr as adr_mod
from .models import wind as wind_mod
from .models.simulate import build_adr, build_wind, grid_scheme, mesh_nodes_for, simulate_adr, simulate_wind, subsample_grid

SAMPLER_LIMIT = 2**14   # largest covariance dimension drawn densely
DENSE_LIMIT = 2**13     # largest covariance dimension for dense reference quantities
BENCH_LIMIT = 2**16
DOMAIN = (-5.0, 5.0, -5.0, 5.0)

DEFAULT_THETA = {
    "wind": (wind_mod.THETA_TRUE, wind_mod.THETA_INIT),
    "adr": (adr_mod.THETA_TRUE, adr_mod.THETA_INIT),
    "matern": ((1.0, 1.0), (1.5, 1.5)),
    "nonstationary1d": ((0.1, 0.6), (0.3, 0.3)),
}
PARAM_NAMES = {
    "wind": wind_mod.PARAM_NAMES,
    "adr": adr_mod.PARAM_NAMES,
    "matern": ("sigma", "l"),
    "nonstationary1d": ("a", "b"),
}
TRANSFORMS = {
    "wind": ("tanh", "exp", "exp", "exp"),
    "adr": ("exp", "exp"),
    "matern": ("exp", "exp"),
    "nonstationary1d": ("identity", "identity"),
}


def fmt(x) -> str:
    """Full-precision decimal text for CSV and JSON-adjacent output."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Observations plus everything needed to rebuild the model."""

    model: str
    points: np.ndarray
    y: np.ndarray            # covariance-ordered data (wind: all u then all v)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.points.shape[0]


def observation_points(m: ModelConfig, seed: int):
    """``(points, spacing, layout)`` for the configured observation scheme."""
    if m.name == "nonstationary1d":
        x0, x1 = map(float, m.x_range)
        if not (x1 > x0 and m.dx > 0):
            raise ConfigError("nonstationary1d needs x_range with x1 > x0 and dx > 0")
        count = int(round((x1 - x0) / m.dx)) + 1
        x = x0 + m.dx * np.arange(count)
        return x[:, None], float(m.dx), {"x_range": [x0, x1], "dx": float(m.dx)}
    thin = m.thin
    if m.grid is not None:
        g = int(m.grid)
    elif m.n is not None:
        if m.coarsen != 1:
            raise ConfigError("model.coarsen needs an explicit model.grid")
        try:
            g, thin = grid_scheme(int(m.n))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if m.thin != 1.0:
            raise ConfigError("model.thin is derived from model.n; give model.grid to thin explicitly")
    else:
        raise ConfigError("model needs n or grid")
    if g < 2:
        raise ConfigError("grid needs at least 2 points per axis")
    rng = np.random.default_rng(np.uint64(seed) + np.uint64(7919))
    pts, idx = subsample_grid(g, m.coarsen, thin, rng, DOMAIN)
    # typical distance between observations; thinning by a fraction f widens it by 1/sqrt(f),
    # which keeps the latent mesh size close to n
    spacing = (DOMAIN[1] - DOMAIN[0]) / (g - 1) * m.coarsen / np.sqrt(thin)
    return pts, spacing, {"grid": g, "coarsen": int(m.coarsen), "thin": float(thin), "parent_index": idx.tolist()}


def _theta(m: ModelConfig, which: int):
    if which == 0 and m.theta_true is not None:
        return tuple(float(v) for v in m.theta_true)
    return DEFAULT_THETA[m.name][which]


def simulate_dataset(m: ModelConfig, seed: int) -> Dataset:
    pts, spacing, layout = observation_points(m, seed)
    theta = _theta(m, 0)
    if len(theta) != len(PARAM_NAMES[m.name]):
        raise ConfigError(f"{m.name} needs {len(PARAM_NAMES[m.name])} parameters")
    dim = 2 * pts.shape[0] if m.name == "wind" else pts.shape[0]
    if dim > SAMPLER_LIMIT:
        raise ResourceGuardError(f"covariance dimension {dim} exceeds the sampler guard {SAMPLER_LIMIT}")
    meta = {"model": m.name, "n": int(pts.shape[0]), "theta_true": list(theta), "seed": int(seed),
            "spacing": spacing, "mesh_factor": float(m.mesh_factor), "param_names": list(PARAM_NAMES[m.name])}
    meta.update({k: v for k, v in layout.items() if k != "parent_index"})
    try:
        if m.name == "wind":
            model = build_wind(pts, spacing, m.mesh_factor)
            d = simulate_wind(model, theta, seed, 0.1 if m.noise_fraction is None else m.noise_fraction)
            y, sigma_n = d.y, d.sigma_n
        elif m.name == "adr":
            model = build_adr(pts, spacing, m.mesh_factor)
            d = simulate_adr(model, theta, seed, 0.2 if m.noise_fraction is None else m.noise_fraction)
            y, sigma_n = d.y, d.sigma_n
        elif m.name == "matern":
            orc = MaternObsOracle.on_points(pts, theta, mesh_n=mesh_nodes_for(spacing / m.mesh_factor, 11.0),
                                            nugget=m.nugget)
            y, sigma_n = _sample_matern(orc, seed), m.nugget
        else:
            orc = nonstationary_oracle(pts[:, 0], theta, m.sigma, m.nugget)
            y, sigma_n = simulate_data(orc, seed=seed, limit=SAMPLER_LIMIT), m.nugget
            meta["sigma"] = float(m.sigma)
    except ValueError as exc:
        raise ConfigError(f"invalid model parameters: {exc}") from exc
    meta["sigma_n"] = float(sigma_n)
    meta["parent_index"] = layout.get("parent_index")
    return Dataset(m.name, pts, np.asarray(y, dtype=float), meta)


def _sample_matern(orc: MaternObsOracle, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.uint64(seed))
    s, l = orc.theta
    w = orc.spde.sample(s, l, rng)[:, 0]
    return orc.Phi @ w + np.sqrt(orc.nugget) * rng.standard_normal(orc.n)


def write_dataset(ds: Dataset, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path, meta_path = directory / "dataset.csv", directory / "metadata.json"
    n = ds.n
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if ds.model == "wind":
            w.writerow(["x1", "x2", "u", "v"])
            rows = zip(ds.points[:, 0], ds.points[:, 1], ds.y[:n], ds.y[n:])
        elif ds.points.shape[1] == 1:
            w.writerow(["x1", "y"])
            rows = zip(ds.points[:, 0], ds.y)
        else:
            w.writerow(["x1", "x2", "y"])
            rows = zip(ds.points[:, 0], ds.points[:, 1], ds.y)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    meta = dict(ds.meta)
    meta["created"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    meta_path.write_text(json.dumps(meta, indent=2))
    return csv_path, meta_path


def read_dataset(csv_path, meta_path=None) -> Dataset:
    csv_path = Path(csv_path)
    meta_path = csv_path.with_name("metadata.json") if meta_path is None else Path(meta_path)
    try:
        meta = json.loads(meta_path.read_text())
        name = meta["model"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read dataset metadata {meta_path}: {exc}") from exc
    if name not in PARAM_NAMES:
        raise ConfigError(f"unknown model {name!r} in metadata")
    expected = {"wind": ["x1", "x2", "u", "v"], "nonstationary1d": ["x1", "y"]}.get(name, ["x1", "x2", "y"])
    try:
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {csv_path}: {exc}") from exc
    if not rows or [h.strip() for h in rows[0]] != expected:
        raise ConfigError(f"dataset header must be {','.join(expected)}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"non-numeric value in dataset: {exc}") from exc
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != len(expected) or not np.all(np.isfinite(data)):
        raise ConfigError("dataset rows are ragged, empty or non-finite")
    if "n" in meta and int(meta["n"]) != data.shape[0]:
        raise ConfigError(f"dataset has {data.shape[0]} rows, metadata says {meta['n']}")
    if name == "wind":
        pts, y = data[:, :2], np.concatenate([data[:, 2], data[:, 3]])
    elif name == "nonstationary1d":
        pts, y = data[:, :1], data[:, 1]
    else:
        pts, y = data[:, :2], data[:, 2]
    return Dataset(name, pts, y, meta)


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------

def make_problem(ds: Dataset, theta, hodlr: HodlrConfig | None = None, method: str = "hodlr") -> GpProblem:
    """GP problem for a dataset; the covariance model is rebuilt from its metadata."""
    meta = ds.meta
    try:
        sigma_n = float(meta["sigma_n"])
        spacing = float(meta.get("spacing", 1.0))
        mf = float(meta.get("mesh_factor", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"metadata lacks model settings: {exc}") from exc
    hodlr = HodlrConfig() if hodlr is None else hodlr
    theta = tuple(float(v) for v in theta)
    if len(theta) != len(PARAM_NAMES[ds.model]):
        raise ConfigError(f"{ds.model} needs {len(PARAM_NAMES[ds.model])} parameters, got {len(theta)}")
    mean = None
    points = ds.points
    if ds.model == "wind":
        model = build_wind(ds.points, spacing, mf)
        orc = model.oracle(theta, sigma_n)
        points = np.vstack([ds.points, ds.points])
    elif ds.model == "adr":
        model = build_adr(ds.points, spacing, mf)
        orc = model.oracle(theta, sigma_n)
        mean = model.mean
    elif ds.model == "matern":
        orc = MaternObsOracle.on_points(ds.points, theta, mesh_n=mesh_nodes_for(spacing / mf, 11.0), nugget=sigma_n)
    else:
        orc = nonstationary_oracle(ds.points[:, 0], theta, float(meta.get("sigma", 1.0)), sigma_n)
        orc.param_names = PARAM_NAMES["nonstationary1d"]
        method = "dense"
    if not orc.param_names:
        orc.param_names = PARAM_NAMES[ds.model]
    return GpProblem(orc, ds.y, points, mean=mean, hodlr=hodlr, transforms=TRANSFORMS[ds.model], method=method)


def hodlr_config(cfg: RunConfig) -> HodlrConfig:
    h = cfg.hodlr
    return HodlrConfig(int(h.rank), int(h.leaf_min), int(h.leaf_max), int(h.sketch_seed))


def check_dense(dim: int) -> None:
    if dim > DENSE_LIMIT:
        raise ResourceGuardError(f"dense reference needs covariance dimension <= {DENSE_LIMIT}, got {dim}")


# ---------------------------------------------------------------------------
# accuracy
# ---------------------------------------------------------------------------

METRICS = ("eps_L", "eps_S", "eps_I", "eta_g", "eta_I")


def accuracy_at(problem: GpProblem, theta) -> dict:
    """Dense vs HODLR ``L``, ``S``, ``I`` at ``theta`` and the resulting precision metrics."""
    check_dense(problem.n)
    dense = GpProblem(problem.oracle, problem.y, problem.points, problem.mean, method="dense")
    ed = evaluate(dense, theta, True, True)
    eh = evaluate(problem, theta, True, True)
    out = accuracy_metrics({"L": ed.loglik, "S": ed.score, "I": ed.fisher},
                           {"L": eh.loglik, "S": eh.score, "I": eh.fisher})
    out["fisher_spd"] = bool(np.linalg.eigvalsh(eh.fisher).min() > 0)
    return out


def log10(x: float) -> float:
    return float(np.log10(x)) if x > 0 else -np.inf


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def expected_columns(problem: GpProblem) -> int:
    t = problem.tree
    return 2 * problem.hodlr.rank * t.depth + t.max_leaf


def bench_cell(ds: Dataset, theta, hodlr: HodlrConfig) -> dict:
    """One timed likelihood, score and Fisher evaluation with counts."""
    prob = make_problem(ds, theta, hodlr)
    ev = evaluate(prob, theta, want_score=True, want_fisher=True)
    t = ev.times
    total = sum(t.values())
    oracle_seconds = ev.counts["seconds"]
    p, k, tau = prob.p, prob.hodlr.rank, prob.tree.depth
    cols = expected_columns(prob)
    return {
        "apply_columns": ev.counts["apply_columns"],
        "deriv_columns": ev.counts["deriv_columns"],
        # one peel of K, plus one k-column product per level for each derivative
        "expected_apply_columns": cols + p * k * tau,
        "expected_deriv_columns": p * cols,
        "depth": tau,
        "leaf_max": prob.tree.max_leaf,
        "build_seconds": t["build"],
        "factorize_seconds": t["factorize"],
        "loglik_seconds": t["loglik"],
        "products_seconds": t["products"],
        "score_seconds": t["score"],
        "fisher_seconds": t["fisher"],
        "oracle_seconds": oracle_seconds,
        "total_seconds": total,
        "linear_algebra_seconds": total - oracle_seconds,
    }


# ---------------------------------------------------------------------------
# 1D demo
# ---------------------------------------------------------------------------

DEMO_SETTINGS = (
    ("full", (0.0, 10.0), 0.05),
    ("subsampled", (0.0, 10.0), 0.2),
    ("truncated", (0.0, 2.5), 0.05),
)


def demo1d_fit(setting: str, seed: int, demo) -> dict:
    rng_range, dx = {s: (r, d) for s, r, d in DEMO_SETTINGS}[setting]
    m = ModelConfig(name="nonstationary1d", x_range=list(rng_range), dx=dx, theta_true=list(demo.theta_true),
                    nugget=demo.nugget, sigma=demo.sigma)
    ds = simulate_dataset(m, seed)
    theta0 = demo.theta0 if demo.theta0 is not None else demo.theta_true
    prob = make_problem(ds, theta0)
    rep = fit_mle(prob, theta0, FitOptions(max_iter=demo.max_iter, rel_tol=demo.rel_tol))
    ci = rep.ci if rep.ci is not None else ConfidenceIntervals(rep.theta_hat, *(np.full(2, np.nan),) * 3, False)
    # a failed fit (e.g. stalled on the likelihood spike of the indefinite kernel) gives no usable interval
    valid = bool(ci.valid and rep.status != "failed")
    return {"setting": setting, "seed": seed, "n": ds.n, "status": rep.status, "ci_valid": valid,
            "a_hat": rep.theta_hat[0], "b_hat": rep.theta_hat[1],
            "a_lo": ci.lo[0], "a_hi": ci.hi[0], "b_lo": ci.lo[1], "b_hi": ci.hi[1],
            "a_width": 2 * ci.half_width[0], "b_width": 2 * ci.half_width[1]}


__all__ = [
    "Dataset", "simulate_dataset", "write_dataset", "read_dataset", "make_problem", "hodlr_config", "accuracy_at",
    "bench_cell", "demo1d_fit", "DEMO_SETTINGS", "METRICS", "fmt", "log10", "confidence_intervals",
]

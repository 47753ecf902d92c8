"""Observation grids and synthetic data.

The wind and ADR data are drawn exactly from the discrete models (latent
SPDE draws pushed through the sparse operators), so the simulated vectors
follow the same covariance the oracles represent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..oracle import CovarianceOracle
from .adr import AdrModel
from .wind import WindModel

DENSE_SAMPLER_LIMIT = 2**14


def regular_grid(g: int, bounds=(-5.0, 5.0, -5.0, 5.0)) -> np.ndarray:
    """``g x g`` vertex grid, x varying fastest."""
    x0, x1, y0, y1 = bounds
    xs, ys = np.linspace(x0, x1, g), np.linspace(y0, y1, g)
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


def subsample_grid(g: int, coarsen: int = 1, thin: float = 1.0, rng=None, bounds=(-5.0, 5.0, -5.0, 5.0)):
    """Coarsen a ``g x g`` grid by keeping every ``coarsen``-th index per axis, then keep a random ``thin`` fraction.

    Returns ``(points, parent_index)`` where ``parent_index`` indexes the full grid.
    """
    if coarsen < 1 or not 0 < thin <= 1:
        raise ValueError("need coarsen >= 1 and 0 < thin <= 1")
    keep = np.arange(0, g, coarsen)
    J, I = np.meshgrid(keep, keep, indexing="ij")
    idx = (J * g + I).ravel()
    if thin < 1:
        rng = np.random.default_rng(rng)
        m = int(round(thin * idx.size))
        idx = np.sort(rng.choice(idx, size=m, replace=False))
    return regular_grid(g, bounds)[idx], idx


def grid_scheme(n: int) -> tuple[int, float]:
    """``(g, thin)`` giving exactly ``n`` points: a square grid, or a square grid of ``2n`` thinned by half."""
    g = int(round(np.sqrt(n)))
    if g * g == n:
        return g, 1.0
    g = int(round(np.sqrt(2 * n)))
    if g * g == 2 * n:
        return g, 0.5
    raise ValueError(f"n={n} is neither a square nor twice a square")


def mesh_nodes_for(spacing: float, extent: float) -> int:
    return int(np.ceil(extent / spacing - 1e-9)) + 1


@dataclass
class Dataset:
    model: str
    points: np.ndarray
    y: np.ndarray
    mean: np.ndarray
    sigma_n: float
    theta_true: tuple
    seed: int
    meta: dict = field(default_factory=dict)


def build_wind(points: np.ndarray, spacing: float, mesh_factor: float = 1.0) -> WindModel:
    return WindModel(points, mesh_nodes_for(spacing / mesh_factor, 11.0))


def build_adr(points: np.ndarray, spacing: float, mesh_factor: float = 1.0, kappa=0.001, c=0.5) -> AdrModel:
    h = spacing / mesh_factor
    return AdrModel(points, mesh_nodes_for(h, 10.0), mesh_nodes_for(h, 15.0), kappa=kappa, c=c)


def simulate_wind(model: WindModel, theta, seed: int, noise_fraction: float = 0.1) -> Dataset:
    """Noise variance is ``noise_fraction`` times the sample variance of the noise-free field."""
    rng = np.random.default_rng(np.uint64(seed))
    U = model.sample_field(theta, rng)
    sigma_n = noise_fraction * float(np.var(U))
    y = U + np.sqrt(sigma_n) * rng.standard_normal(U.size)
    return Dataset("wind", model.points, y, np.zeros_like(y), sigma_n, tuple(theta), int(seed))


def simulate_adr(model: AdrModel, theta, seed: int, noise_fraction: float = 0.2) -> Dataset:
    """Noise standard deviation is ``noise_fraction`` times the sample std of the noise-free field."""
    rng = np.random.default_rng(np.uint64(seed))
    u = model.sample_field(theta, rng)
    sigma_n = (noise_fraction * float(np.std(u))) ** 2
    y = u + np.sqrt(sigma_n) * rng.standard_normal(u.size)
    return Dataset("adr", model.points, y, model.mean.copy(), sigma_n, tuple(theta), int(seed))


def simulate_data(cov, mean=None, seed: int = 0, limit: int = DENSE_SAMPLER_LIMIT) -> np.ndarray:
    """``mean + chol(K) z`` with a dense Cholesky factor (one jitter retry)."""
    K = cov.dense() if isinstance(cov, CovarianceOracle) else np.asarray(cov, dtype=float)
    n = K.shape[0]
    if n > limit:
        raise MemoryError(f"dense sampler refuses n={n} > {limit}")
    mean = np.zeros(n) if mean is None else np.asarray(mean, dtype=float)
    z = np.random.default_rng(np.uint64(seed)).standard_normal(n)
    if not np.any(K):
        return mean.copy()
    try:
        Lc = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        Lc = np.linalg.cholesky(K + 1e-10 * np.trace(K) / n * np.eye(n))
    return mean + Lc @ z

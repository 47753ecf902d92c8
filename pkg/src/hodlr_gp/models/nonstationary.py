"""1D squared-exponential kernel with a linearly varying length scale ``l(x) = a + b x``."""

from __future__ import annotations

import numpy as np

from ..oracle import DenseOracle


def _lengths(a, b, x):
    l = a + b * np.asarray(x, dtype=float)
    if np.any(l <= 0):
        raise ValueError("length scale a + b x must be positive on the domain")
    return l


def nonstationary_1d_cov(a: float, b: float, sigma: float, xi, xj):
    """``sigma * exp(-(xi - xj)^2 / (2 l(xi) l(xj)))``."""
    li, lj = _lengths(a, b, xi), _lengths(a, b, xj)
    d = np.asarray(xi, dtype=float) - np.asarray(xj, dtype=float)
    return sigma * np.exp(-(d**2) / (2 * li * lj))


def nonstationary_matrix(x, a, b, sigma=1.0, nugget=0.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    K = nonstationary_1d_cov(a, b, sigma, x[:, None], x[None, :])
    return K + nugget * np.eye(x.size)


def nonstationary_derivatives(x, a, b, sigma=1.0) -> list[np.ndarray]:
    """``[dK/da, dK/db]``."""
    x = np.asarray(x, dtype=float)
    li = _lengths(a, b, x)
    d2 = (x[:, None] - x[None, :]) ** 2
    P = np.outer(li, li)
    K = sigma * np.exp(-d2 / (2 * P))
    # d/dq of -d2/(2 li lj) = d2/(2 P) * (dli/li + dlj/lj)
    base = K * d2 / (2 * P)
    dA = base * (1 / li[:, None] + 1 / li[None, :])
    dB = base * (x[:, None] / li[:, None] + x[None, :] / li[None, :])
    return [dA, dB]


def nonstationary_oracle(x, theta, sigma=1.0, nugget=0.0) -> DenseOracle:
    """Dense oracle with ``theta = (a, b)``."""
    x = np.asarray(x, dtype=float)
    return DenseOracle(
        lambda th: nonstationary_matrix(x, th[0], th[1], sigma, nugget),
        theta,
        lambda th: nonstationary_derivatives(x, th[0], th[1], sigma),
    )

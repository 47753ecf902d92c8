"""SPDE Matérn covariance (nu = 1, d = 2) on a P1 mesh, and the closed-form Whittle kernel."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gamma as gamma_fn, kv

from ..oracle import CovarianceOracle
from .fem import FemDiscretization, assemble_fem


@dataclass(frozen=True)
class MaternSpdeParams:
    sigma: float
    l: float
    nu: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0 and self.l > 0):
            raise ValueError(f"need sigma > 0 and l > 0, got sigma={self.sigma}, l={self.l}")
        if self.nu != 1.0:
            raise ValueError("only nu = 1 is supported")

    @property
    def gamma(self) -> float:
        """Scale of the SPDE operator that gives marginal variance ``sigma**2``."""
        return self.l / (self.sigma * np.sqrt(4 * np.pi))


def matern_exact_cov(r, nu: float = 1.0, l: float = 1.0):
    """Whittle-Matérn correlation ``(2^{nu-1} Gamma(nu))^{-1} (r/l)^nu K_nu(r/l)``; 1 at r = 0."""
    if l <= 0:
        raise ValueError("length scale must be positive")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distances must be nonnegative")
    x = r / l
    with np.errstate(invalid="ignore", divide="ignore"):
        val = x**nu * kv(nu, x) / (2 ** (nu - 1) * gamma_fn(nu))
    return np.where(x == 0, 1.0, val)[()]


class MaternSpde:
    """``K_w = gamma^{-2} A^{-1} Ct A^{-1}`` with ``A = C / l^2 + S``; factorizations cached per ``l``."""

    def __init__(self, fem: FemDiscretization, cache_size: int = 4):
        self.fem = fem
        self.C = fem.C.tocsc()
        self.S = fem.S.tocsc()
        self.Ct = fem.C_lumped
        self.cache_size = cache_size
        self._lu = OrderedDict()

    @property
    def size(self) -> int:
        return self.fem.n_basis

    def factor(self, l: float):
        key = float(l)
        if key in self._lu:
            self._lu.move_to_end(key)
            return self._lu[key]
        A = (self.C / key**2 + self.S).tocsc()
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:  # pragma: no cover - A is SPD for l > 0
            raise np.linalg.LinAlgError(f"SPDE operator factorization failed at l={l}") from exc
        self._lu[key] = lu
        if len(self._lu) > self.cache_size:
            self._lu.popitem(last=False)
        return lu

    @staticmethod
    def scale(sigma: float, l: float) -> float:
        """``gamma^{-2} = 4 pi sigma^2 / l^2``."""
        return 4 * np.pi * sigma**2 / l**2

    def apply(self, V, sigma: float, l: float):
        lu = self.factor(l)
        return self.scale(sigma, l) * lu.solve(self.Ct[:, None] * lu.solve(_2d(V))).reshape(np.shape(V))

    def apply_dl(self, V, sigma: float, l: float):
        """``dK_w/dl @ V``; ``dA/dl = -2 C / l^3`` plus the ``gamma(l)`` factor."""
        lu = self.factor(l)
        g = self.scale(sigma, l)
        V2 = _2d(V)
        W1 = lu.solve(V2)
        W3 = lu.solve(self.Ct[:, None] * W1)
        T1 = lu.solve(self.C @ W3)
        T2 = lu.solve(self.Ct[:, None] * lu.solve(self.C @ W1))
        out = -2.0 / l * g * W3 + g * 2.0 / l**3 * (T1 + T2)
        return out.reshape(np.shape(V))

    def apply_dsigma(self, V, sigma: float, l: float):
        return 2.0 / sigma * self.apply(V, sigma, l)

    def sample(self, sigma: float, l: float, rng, m: int = 1) -> np.ndarray:
        """Exact draws ``gamma^{-1} A^{-1} Ct^{1/2} z`` from the discrete field, shape ``(N_b, m)``."""
        lu = self.factor(l)
        z = rng.standard_normal((self.size, m))
        return np.sqrt(self.scale(sigma, l)) * lu.solve(np.sqrt(self.Ct)[:, None] * z)

    def dense(self, sigma: float, l: float) -> np.ndarray:
        """Dense ``K_w`` via dense inverses (independent of the sparse solve path)."""
        A = (self.C / l**2 + self.S).toarray()
        Ainv = np.linalg.inv(A)
        return self.scale(sigma, l) * (Ainv * self.Ct) @ Ainv.T


def _2d(V):
    V = np.asarray(V, dtype=float)
    return V[:, None] if V.ndim == 1 else V


def matern_spde_matvec(fem: FemDiscretization, params: MaternSpdeParams, V, spde: MaternSpde | None = None):
    """``K_w @ V`` for the SPDE Matérn field on ``fem``."""
    spde = MaternSpde(fem) if spde is None else spde
    return spde.apply(V, params.sigma, params.l)


class MaternObsOracle(CovarianceOracle):
    """Observed SPDE Matérn field: ``K = nugget I + Phi K_w(sigma, l) Phi^T``, ``theta = (sigma, l)``."""

    param_names = ("sigma", "l")

    def __init__(self, spde: MaternSpde, Phi, theta, nugget: float = 0.0):
        super().__init__(Phi.shape[0], theta)
        if self.p != 2:
            raise ValueError("theta must be (sigma, l)")
        MaternSpdeParams(*self.theta)
        self.spde = spde
        self.Phi = sp.csr_matrix(Phi)
        self.PhiT = self.Phi.T.tocsr()
        self.nugget = float(nugget)

    @classmethod
    def on_points(cls, points, theta, bounds=(-5.5, 5.5, -5.5, 5.5), mesh_n=64, nugget=0.0):
        fem = assemble_fem(bounds, mesh_n, points)
        return cls(MaternSpde(fem), fem.Phi, theta, nugget)

    def _apply(self, V):
        s, l = self.theta
        return self.nugget * V + self.Phi @ self.spde.apply(self.PhiT @ V, s, l)

    def _apply_derivative(self, j, V):
        s, l = self.theta
        W = self.PhiT @ V
        dW = self.spde.apply_dsigma(W, s, l) if j == 0 else self.spde.apply_dl(W, s, l)
        return self.Phi @ dW

    def at(self, theta):
        return MaternObsOracle(self.spde, self.Phi, theta, self.nugget)

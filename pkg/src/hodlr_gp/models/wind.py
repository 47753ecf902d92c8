"""Helmholtz wind model: ``U = L [phi; chi]`` with a bivariate SPDE Matérn latent pair.

``K_U = sigma_n I + Phihat L (Sigma2 kron K_w) L^T Phihat^T`` with
``L = [[-L2, L1], [L1, L2]]`` and ``Phihat = blockdiag(Phi, Phi)``.  The
data vector stacks all ``u`` values, then all ``v`` values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..oracle import CovarianceOracle
from .fem import assemble_fem, difference_operators
from .matern import MaternSpde

PARAM_NAMES = ("rho", "sigma_phi", "sigma_chi", "l")
THETA_TRUE = (0.7, 1.0, 0.3, 0.5)
THETA_INIT = (0.5, 0.5, 0.5, 0.5)


@dataclass(frozen=True)
class WindModelParams:
    rho: float
    sigma_phi: float
    sigma_chi: float
    l: float

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"need |rho| < 1, got {self.rho}")
        if not (self.sigma_phi > 0 and self.sigma_chi > 0 and self.l > 0):
            raise ValueError("sigma_phi, sigma_chi and l must be positive")

    def cross_cov(self) -> np.ndarray:
        sp_, sc = self.sigma_phi, self.sigma_chi
        c = self.rho * sp_ * sc
        return np.array([[sp_**2, c], [c, sc**2]])

    def cross_cov_derivative(self, j: int) -> np.ndarray:
        r, sp_, sc = self.rho, self.sigma_phi, self.sigma_chi
        if j == 0:
            return np.array([[0.0, sp_ * sc], [sp_ * sc, 0.0]])
        if j == 1:
            return np.array([[2 * sp_, r * sc], [r * sc, 0.0]])
        if j == 2:
            return np.array([[0.0, r * sp_], [r * sp_, 2 * sc]])
        raise IndexError(j)


class WindModel:
    """Discretization shared by every parameter value: latent mesh, ``Phihat L`` and the SPDE cache."""

    def __init__(self, obs_points, mesh_n, bounds=(-5.5, 5.5, -5.5, 5.5)):
        self.points = np.asarray(obs_points, dtype=float)
        self.fem = assemble_fem(bounds, mesh_n, self.points)
        self.spde = MaternSpde(self.fem)
        L1, L2 = difference_operators(self.fem.grid)
        Phi = self.fem.Phi
        self.L1, self.L2 = L1, L2
        # Phihat L = [[-Phi L2, Phi L1], [Phi L1, Phi L2]]
        self.B = sp.bmat([[-(Phi @ L2), Phi @ L1], [Phi @ L1, Phi @ L2]], format="csr")
        self.BT = self.B.T.tocsr()

    @property
    def n_obs(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.n_obs

    @property
    def n_latent(self) -> int:
        return self.fem.n_basis

    def latent_apply(self, W, Sigma, l, deriv_l: bool = False):
        """``(Sigma kron K_w) W`` (or with ``dK_w/dl``) for ``W`` of shape ``(2 N_b, s)``."""
        Nb = self.n_latent
        s = W.shape[1]
        both = np.hstack([W[:Nb], W[Nb:]])
        Kb = self.spde.apply_dl(both, 1.0, l) if deriv_l else self.spde.apply(both, 1.0, l)
        Kp, Kq = Kb[:, :s], Kb[:, s:]
        return np.vstack([Sigma[0, 0] * Kp + Sigma[0, 1] * Kq, Sigma[1, 0] * Kp + Sigma[1, 1] * Kq])

    def oracle(self, theta, sigma_n: float) -> "WindOracle":
        return WindOracle(self, theta, sigma_n)

    def sample_field(self, theta, rng) -> np.ndarray:
        """Noise-free ``U`` drawn exactly from the discrete model."""
        prm = WindModelParams(*theta)
        w = self.spde.sample(1.0, prm.l, rng, m=2)  # two independent unit fields
        Lc = np.linalg.cholesky(prm.cross_cov())
        latent = w @ Lc.T  # columns (phi, chi)
        return self.B @ np.concatenate([latent[:, 0], latent[:, 1]])


class WindOracle(CovarianceOracle):
    param_names = PARAM_NAMES

    def __init__(self, model: WindModel, theta, sigma_n: float):
        super().__init__(model.dim, theta)
        if self.p != 4:
            raise ValueError("wind theta must be (rho, sigma_phi, sigma_chi, l)")
        self.params = WindModelParams(*self.theta)
        if sigma_n < 0:
            raise ValueError("noise variance must be nonnegative")
        self.model = model
        self.sigma_n = float(sigma_n)

    def _apply(self, V):
        m = self.model
        inner = m.latent_apply(m.BT @ V, self.params.cross_cov(), self.params.l)
        return self.sigma_n * V + m.B @ inner

    def _apply_derivative(self, j, V):
        m = self.model
        W = m.BT @ V
        if j == 3:
            inner = m.latent_apply(W, self.params.cross_cov(), self.params.l, deriv_l=True)
        else:
            inner = m.latent_apply(W, self.params.cross_cov_derivative(j), self.params.l)
        return m.B @ inner

    def at(self, theta):
        return WindOracle(self.model, theta, self.sigma_n)

    def dense_reference(self) -> np.ndarray:
        """Dense ``K_U`` from dense sparse products and a dense ``K_w`` (independent path)."""
        m = self.model
        Kw = m.spde.dense(1.0, self.params.l)
        B = m.B.toarray()
        return self.sigma_n * np.eye(self.n) + B @ np.kron(self.params.cross_cov(), Kw) @ B.T

"""Stationary advection-diffusion-reaction model with a Matérn source.

``-div(kappa grad u) + v . grad u + c u = phi`` on ``[-5, 5]^2`` (Neumann),
Galerkin P1.  The source lives on a larger Matérn mesh and is loaded through
the ADR mass matrix after nodal interpolation, so
``K_u = sigma_n I + Phi L^{-1} G K_w G^T L^{-T} Phi^T`` with ``G = M P``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from ..oracle import CovarianceOracle
from .fem import assemble_advection, assemble_fem, interpolation_matrix
from .matern import MaternSpde

PARAM_NAMES = ("sigma_phi", "l")
THETA_TRUE = (1.0, 1.0)
THETA_INIT = (1.5, 1.5)


def default_velocity(x: np.ndarray) -> np.ndarray:
    return np.column_stack([x[:, 0] + 5.0, x[:, 1] + 5.0])


def default_source_mean(x: np.ndarray) -> np.ndarray:
    return 20.0 * np.exp(-np.sum(x**2, axis=1) / (2 * 2.0**2))


@dataclass(frozen=True)
class AdrModelParams:
    sigma_phi: float
    l: float
    kappa: float = 0.001
    c: float = 0.5

    def __post_init__(self):
        if not (self.sigma_phi > 0 and self.l > 0):
            raise ValueError("sigma_phi and l must be positive")
        if self.kappa <= 0 or self.c <= 0:
            raise ValueError("kappa and c must be positive")


class AdrModel:
    def __init__(self, obs_points, adr_mesh_n, matern_mesh_n, kappa=0.001, c=0.5,
                 adr_bounds=(-5.0, 5.0, -5.0, 5.0), matern_bounds=(-7.5, 7.5, -7.5, 7.5),
                 velocity=default_velocity, source_mean=default_source_mean):
        self.points = np.asarray(obs_points, dtype=float)
        self.kappa, self.c = float(kappa), float(c)
        self.fem = assemble_fem(adr_bounds, adr_mesh_n, self.points)
        grid = self.fem.grid
        nodes = grid.nodes()
        adv = assemble_advection(nodes, grid.triangles(), velocity)
        self.L = (self.kappa * self.fem.S + adv + self.c * self.fem.C).tocsc()
        vmax = float(np.max(np.linalg.norm(velocity(nodes), axis=1)))
        self.peclet = vmax * max(grid.h) / (2 * self.kappa)
        if self.peclet > 1:
            warnings.warn(f"mesh Peclet number {self.peclet:.3g} > 1; plain Galerkin may oscillate", RuntimeWarning, stacklevel=2)
        try:
            self.lu = spla.splu(self.L)
        except RuntimeError as exc:
            raise np.linalg.LinAlgError("ADR operator factorization failed") from exc
        self.mfem = assemble_fem(matern_bounds, matern_mesh_n)
        self.spde = MaternSpde(self.mfem)
        P = interpolation_matrix(self.mfem.grid, nodes)
        self.G = (self.fem.C @ P).tocsr()
        self.GT = self.G.T.tocsr()
        self.Phi = self.fem.Phi
        self.PhiT = self.Phi.T.tocsr()
        self.mean = self.forward(source_mean(self.mfem.grid.nodes()))

    @property
    def dim(self) -> int:
        return self.points.shape[0]

    def forward(self, phi_nodes: np.ndarray) -> np.ndarray:
        """Observed ``u`` for a source given at Matérn mesh nodes."""
        return self.Phi @ self.lu.solve(self.G @ phi_nodes)

    def _to_latent(self, V):
        return self.GT @ self.lu.solve(self.PhiT @ V, trans="T")

    def _from_latent(self, W):
        return self.Phi @ self.lu.solve(self.G @ W)

    def oracle(self, theta, sigma_n: float) -> "AdrOracle":
        return AdrOracle(self, theta, sigma_n)

    def sample_field(self, theta, rng) -> np.ndarray:
        """Noise-free observed ``u`` with the source drawn exactly from the discrete Matérn model."""
        s, l = theta
        phi = self.spde.sample(s, l, rng)[:, 0]
        return self.mean + self.forward(phi)


class AdrOracle(CovarianceOracle):
    param_names = PARAM_NAMES

    def __init__(self, model: AdrModel, theta, sigma_n: float):
        super().__init__(model.dim, theta)
        if self.p != 2:
            raise ValueError("ADR theta must be (sigma_phi, l)")
        AdrModelParams(*self.theta, kappa=model.kappa, c=model.c)
        self.model = model
        self.sigma_n = float(sigma_n)

    def _apply(self, V):
        m = self.model
        s, l = self.theta
        return self.sigma_n * V + m._from_latent(m.spde.apply(m._to_latent(V), s, l))

    def _apply_derivative(self, j, V):
        m = self.model
        s, l = self.theta
        W = m._to_latent(V)
        dW = m.spde.apply_dsigma(W, s, l) if j == 0 else m.spde.apply_dl(W, s, l)
        return m._from_latent(dW)

    def at(self, theta):
        return AdrOracle(self.model, theta, self.sigma_n)

    def dense_reference(self) -> np.ndarray:
        """Dense ``K_u`` from dense inverses (independent of the sparse LU path)."""
        m = self.model
        s, l = self.theta
        Linv = np.linalg.inv(m.L.toarray())
        T = m.Phi.toarray() @ Linv @ m.G.toarray()
        return self.sigma_n * np.eye(self.n) + T @ m.spde.dense(s, l) @ T.T

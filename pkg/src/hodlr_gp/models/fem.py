"""P1 finite elements on a structured triangulation of a rectangle (natural Neumann BC)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid2D:
    """``mesh_n[0] x mesh_n[1]`` nodes on ``[x0, x1] x [y0, y1]``; node ``(i, j)`` has index ``j * nx + i``."""

    bounds: tuple[float, float, float, float]
    mesh_n: tuple[int, int]

    def __post_init__(self):
        x0, x1, y0, y1 = self.bounds
        nx, ny = self.mesh_n
        if nx < 2 or ny < 2:
            raise ValueError(f"need at least 2 nodes per axis, got {self.mesh_n}")
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate domain {self.bounds}")

    @property
    def nx(self) -> int:
        return self.mesh_n[0]

    @property
    def ny(self) -> int:
        return self.mesh_n[1]

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def h(self) -> tuple[float, float]:
        x0, x1, y0, y1 = self.bounds
        return (x1 - x0) / (self.nx - 1), (y1 - y0) / (self.ny - 1)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        x0, x1, y0, y1 = self.bounds
        return np.linspace(x0, x1, self.nx), np.linspace(y0, y1, self.ny)

    def nodes(self) -> np.ndarray:
        xs, ys = self.axes()
        X, Y = np.meshgrid(xs, ys)  # row j is y_j
        return np.column_stack([X.ravel(), Y.ravel()])

    def triangles(self) -> np.ndarray:
        """Each cell split along its (i,j)-(i+1,j+1) diagonal."""
        nx, ny = self.mesh_n
        i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
        i, j = i.ravel(), j.ravel()
        n00 = j * nx + i
        n10 = n00 + 1
        n01 = n00 + nx
        n11 = n01 + 1
        t1 = np.column_stack([n00, n10, n11])
        t2 = np.column_stack([n00, n11, n01])
        return np.vstack([t1, t2])


@dataclass
class FemDiscretization:
    grid: Grid2D
    C: sp.csc_matrix
    C_lumped: np.ndarray
    S: sp.csc_matrix
    Phi: sp.csr_matrix | None = None
    obs: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_basis(self) -> int:
        return self.grid.size


def _p1_local(coords: np.ndarray):
    """Areas, gradients ``(T, 3, 2)`` of the barycentric basis, for triangles ``coords (T, 3, 2)``."""
    p0, p1, p2 = coords[:, 0], coords[:, 1], coords[:, 2]
    d1, d2 = p1 - p0, p2 - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * np.abs(det)
    # gradients of the three hat functions: rotate opposite edges
    e0 = p2 - p1
    e1 = p0 - p2
    e2 = p1 - p0
    rot = lambda e: np.column_stack([e[:, 1], -e[:, 0]])  # noqa: E731
    grads = np.stack([rot(e0), rot(e1), rot(e2)], axis=1) / det[:, None, None]
    return area, grads


_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def assemble_matrices(nodes: np.ndarray, tris: np.ndarray):
    """Consistent mass ``C`` and stiffness ``S`` for a P1 mesh."""
    area, grads = _p1_local(nodes[tris])
    Ke = area[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)
    Me = area[:, None, None] * _MASS_REF[None]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    N = nodes.shape[0]
    S = sp.csc_matrix((Ke.ravel(), (rows, cols)), shape=(N, N))
    C = sp.csc_matrix((Me.ravel(), (rows, cols)), shape=(N, N))
    return C, S


def assemble_advection(nodes: np.ndarray, tris: np.ndarray, velocity) -> sp.csc_matrix:
    """``B_ij = int phi_i (v . grad phi_j)`` for a velocity field linear on each element (exact)."""
    area, grads = _p1_local(nodes[tris])
    v = velocity(nodes)  # (N, 2) nodal values
    vt = v[tris]  # (T, 3, 2)
    # int phi_i v = sum_m v_m M_ref[i, m] * area
    phiv = area[:, None, None] * np.einsum("im,tmk->tik", _MASS_REF, vt)
    Be = np.einsum("tik,tjk->tij", phiv, grads)
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    N = nodes.shape[0]
    return sp.csc_matrix((Be.ravel(), (rows, cols)), shape=(N, N))


def interpolation_matrix(grid: Grid2D, points: np.ndarray) -> sp.csr_matrix:
    """Barycentric P1 interpolation from grid nodes to ``points`` (rows sum to 1)."""
    pts = np.asarray(points, dtype=float)
    x0, x1, y0, y1 = grid.bounds
    tol = 1e-12 * max(x1 - x0, y1 - y0)
    outside = (pts[:, 0] < x0 - tol) | (pts[:, 0] > x1 + tol) | (pts[:, 1] < y0 - tol) | (pts[:, 1] > y1 + tol)
    if np.any(outside):
        raise ValueError(f"{int(outside.sum())} observation point(s) lie outside the FEM domain {grid.bounds}")
    hx, hy = grid.h
    fx = (pts[:, 0] - x0) / hx
    fy = (pts[:, 1] - y0) / hy
    i = np.clip(np.floor(fx).astype(int), 0, grid.nx - 2)
    j = np.clip(np.floor(fy).astype(int), 0, grid.ny - 2)
    s = np.clip(fx - i, 0.0, 1.0)
    t = np.clip(fy - j, 0.0, 1.0)
    n00 = j * grid.nx + i
    n10, n01, n11 = n00 + 1, n00 + grid.nx, n00 + grid.nx + 1
    lower = s >= t  # triangle (00, 10, 11)
    w00 = np.where(lower, 1 - s, 1 - t)
    wa = np.where(lower, s - t, t - s)
    w11 = np.where(lower, t, s)
    na = np.where(lower, n10, n01)
    m = pts.shape[0]
    rows = np.repeat(np.arange(m), 3)
    cols = np.column_stack([n00, na, n11]).ravel()
    vals = np.column_stack([w00, wa, w11]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, grid.size))


def assemble_fem(bounds, mesh_n, obs_points=None) -> FemDiscretization:
    """Mass, lumped mass, stiffness and (optionally) the observation interpolation matrix."""
    if np.isscalar(mesh_n):
        mesh_n = (int(mesh_n), int(mesh_n))
    grid = Grid2D(tuple(float(b) for b in bounds), tuple(int(m) for m in mesh_n))
    nodes = grid.nodes()
    C, S = assemble_matrices(nodes, grid.triangles())
    C_lumped = np.asarray(C.sum(axis=1)).ravel()
    Phi = None if obs_points is None else interpolation_matrix(grid, obs_points)
    return FemDiscretization(grid, C, C_lumped, S, Phi, None if obs_points is None else np.asarray(obs_points, float))


def assemble_fem_1d(length: float, mesh_n: int):
    """P1 mass and stiffness on ``[0, length]`` with ``mesh_n`` nodes (used for spectrum checks)."""
    if mesh_n < 2:
        raise ValueError("need at least 2 nodes")
    h = length / (mesh_n - 1)
    main_m = np.full(mesh_n, 4 * h / 6)
    main_m[[0, -1]] = 2 * h / 6
    main_s = np.full(mesh_n, 2 / h)
    main_s[[0, -1]] = 1 / h
    off = np.ones(mesh_n - 1)
    C = sp.diags([off * h / 6, main_m, off * h / 6], [-1, 0, 1], format="csc")
    S = sp.diags([-off / h, main_s, -off / h], [-1, 0, 1], format="csc")
    return C, S


def difference_operators(grid: Grid2D) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """``(L1, L2)``: d/dx and d/dy on grid nodes; central inside, one-sided at the boundary."""
    hx, hy = grid.h
    D1 = _diff_1d(grid.nx, hx)
    D2 = _diff_1d(grid.ny, hy)
    L1 = sp.kron(sp.identity(grid.ny), D1, format="csr")  # x varies fastest
    L2 = sp.kron(D2, sp.identity(grid.nx), format="csr")
    return L1, L2


def _diff_1d(m: int, h: float) -> sp.csr_matrix:
    D = sp.lil_matrix((m, m))
    for r in range(1, m - 1):
        D[r, r - 1] = -0.5 / h
        D[r, r + 1] = 0.5 / h
    if m >= 3:
        D[0, 0], D[0, 1], D[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
        D[m - 1, m - 3], D[m - 1, m - 2], D[m - 1, m - 1] = 0.5 / h, -2.0 / h, 1.5 / h
    else:
        D[0, 0], D[0, 1] = -1 / h, 1 / h
        D[1, 0], D[1, 1] = -1 / h, 1 / h
    return D.tocsr()

"""Randomized peeling: HODLR approximations of a covariance and its derivatives from matvecs.

Sampling matrices come from a :class:`SketchPlan` drawn once from a seed, so
the construction is a deterministic, differentiable function of the
parameters.  Only symmetric operators are supported.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .hodlr import HodlrMatrix, LowRankBlock
from .oracle import CovarianceOracle, DenseOracle, PermutedOracle  # noqa: F401  (re-export)
from .partition import ClusterTree


class IllConditionedWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SketchPlan:
    """Gaussian blocks for every off-diagonal block, fixed by ``seed``.

    ``gaussians[i-1][b]`` has one row per point of the right child of node
    ``b`` at depth ``i - 1``; it fills the nonzero rows of the level-``i``
    patterned sampler.
    """

    seed: int
    k: int
    gaussians: tuple
    leaf_width: int
    signature: tuple

    @classmethod
    def create(cls, tree: ClusterTree, k: int, seed: int = 0) -> "SketchPlan":
        if k < 1:
            raise ValueError("rank k must be positive")
        rng = np.random.default_rng(np.uint64(seed))
        gaussians = []
        for i in range(1, tree.depth + 1):
            nxt = tree.ranges(i)
            lv = []
            for b in range(2 ** (i - 1)):
                lo, hi = nxt[2 * b + 1]
                lv.append(rng.standard_normal((int(hi - lo), k)))
            gaussians.append(tuple(lv))
        return cls(int(seed), int(k), tuple(gaussians), tree.max_leaf, _signature(tree))

    def check(self, tree: ClusterTree, k: int) -> None:
        if k != self.k:
            raise ValueError(f"plan was drawn for rank {self.k}, asked for {k}")
        if _signature(tree) != self.signature:
            raise ValueError("sketch plan was drawn for a different tree")

    def r_sampler(self, tree: ClusterTree, level: int) -> np.ndarray:
        R = np.zeros((tree.n, self.k))
        nxt = tree.ranges(level)
        for b, g in enumerate(self.gaussians[level - 1]):
            lo, hi = nxt[2 * b + 1]
            R[lo:hi] = g
        return R

    def leaf_sampler(self, tree: ClusterTree) -> np.ndarray:
        S = np.zeros((tree.n, self.leaf_width))
        for lo, hi in tree.leaves:
            S[lo:hi, : hi - lo] = np.eye(hi - lo)
        return S


def _signature(tree: ClusterTree) -> tuple:
    return tuple(tuple(map(tuple, lv.tolist())) for lv in tree.levels)


# ---------------------------------------------------------------------------
# QR pieces
# ---------------------------------------------------------------------------

def _complete_basis(Q: np.ndarray, r: int, k: int):
    """Extend the first ``r`` orthonormal columns of ``Q`` to ``k`` with canonical vectors.

    Returns the basis and the canonical indices used for the completion.
    """
    m = Q.shape[0]
    out = np.zeros((m, k))
    out[:, :r] = Q[:, :r]
    used = []
    resid = 1.0 - np.sum(out[:, :r] ** 2, axis=1)
    for c in range(r, k):
        # canonical vector with the largest component outside the current span
        e = int(np.argmax(resid))
        v = -out[:, :c] @ out[e, :c]
        v[e] += 1.0
        v -= out[:, :c] @ (out[:, :c].T @ v)
        out[:, c] = v / np.linalg.norm(v)
        resid -= out[:, c] ** 2
        resid[e] = -1.0
        used.append(e)
    return out, np.array(used, dtype=int)


RANK_RTOL = 1e-8


def pivoted_qr(Y: np.ndarray, rtol: float = RANK_RTOL):
    """Column-pivoted QR with a positive diagonal.

    Returns ``(Q, R, piv, r, fill)`` with ``Y[:, piv] = Q R`` on the first ``r``
    columns, where ``r`` counts pivots above ``rtol`` times the largest one.
    ``Q`` is completed to ``k`` columns with the canonical vectors ``fill``.
    Dropping near-dependent columns keeps the derivative of ``Q`` from
    amplifying rounding noise.
    """
    m, k = Y.shape
    if m < k:
        raise ValueError(f"need at least as many rows as columns, got {Y.shape}")
    Q, R, piv = sla.qr(Y, mode="economic", pivoting=True, check_finite=False)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    Q = Q * s
    R = s[:, None] * R
    d = np.abs(np.diag(R))
    r = int(np.count_nonzero(d > rtol * d[0])) if d.size and d[0] > 0 else 0
    fill = np.zeros(0, dtype=int)
    if r < k:
        Q, fill = _complete_basis(Q, r, k)
    return Q, R, piv, r, fill


def randomized_range(Y: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ``range(Y)`` with exactly ``Y.shape[1]`` columns."""
    return pivoted_qr(np.asarray(Y, dtype=float))[0]


def _right_inv(X: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``X @ inv(R)`` for upper-triangular ``R``."""
    return sla.solve_triangular(R, X.T, trans="T", lower=False, check_finite=False).T


def diff_qr(B: np.ndarray, dB: np.ndarray, Q: np.ndarray, R: np.ndarray):
    """Forward derivative ``(dQ, dR)`` of the compact QR ``B = Q R`` along ``dB``."""
    cond = np.linalg.cond(R) if R.size else 1.0
    if not np.isfinite(cond) or cond > 1e12:
        warnings.warn(f"QR factor is ill-conditioned (cond={cond:.3g})", IllConditionedWarning, stacklevel=2)
    QtdB = Q.T @ dB
    Y = _right_inv(QtdB, R)
    low = np.tril(Y, -1)
    dOmega = low - low.T
    dR = (Y - dOmega) @ R
    dQ = Q @ dOmega + _right_inv(dB - Q @ QtdB, R)
    return dQ, dR


def _diff_range(Yb, dYb, Q, R, piv, r, fill):
    """Derivative of ``pivoted_qr(Y)[0]`` with pivots, rank and completion indices held fixed."""
    k = Q.shape[1]
    if r == 0 or Q.shape[0] == k:
        # a square basis spans everything, so the projector is constant and dQ = 0 is exact
        return np.zeros_like(Q)
    B = Yb[:, piv[:r]]
    dB = dYb[:, piv[:r]]
    dQr, _ = diff_qr(B, dB, Q[:, :r], R[:r, :r])
    if r == k:
        return dQr
    # the completion is the QR of (I - Qr Qr^T) E for fixed canonical columns E
    Qr, Qc = Q[:, :r], Q[:, r:]
    E = np.zeros((Q.shape[0], fill.size))
    E[fill, np.arange(fill.size)] = 1.0
    QrtE = Qr.T @ E
    M = E - Qr @ QrtE
    dM = -(dQr @ QrtE + Qr @ (dQr.T @ E))
    Rc = np.triu(Qc.T @ M)
    dQc, _ = diff_qr(M, dM, Qc, Rc)
    return np.hstack([dQr, dQc])


# ---------------------------------------------------------------------------
# peeling
# ---------------------------------------------------------------------------

def _offdiag_matvec(tree: ClusterTree, blocks, upto: int, X: np.ndarray) -> np.ndarray:
    """Apply the symmetric off-diagonal part of levels ``1..upto`` to ``X``."""
    out = np.zeros_like(X)
    for i in range(1, upto + 1):
        nxt = tree.ranges(i)
        for b, blk in enumerate(blocks[i - 1]):
            (l0, l1), (r0, r1) = nxt[2 * b], nxt[2 * b + 1]
            out[l0:l1] += blk.left @ (blk.right.T @ X[r0:r1])
            out[r0:r1] += blk.right @ (blk.left.T @ X[l0:l1])
    return out


def _q_sampler(tree: ClusterTree, level: int, Qs) -> np.ndarray:
    S = np.zeros((tree.n, Qs[0].shape[1]))
    nxt = tree.ranges(level)
    for b, Q in enumerate(Qs):
        lo, hi = nxt[2 * b]
        S[lo:hi] = Q
    return S


def _check_rank(tree: ClusterTree, k: int) -> None:
    for i in range(1, tree.depth + 1):
        sizes = tree.ranges(i)[:, 1] - tree.ranges(i)[:, 0]
        if k > sizes.min():
            raise ValueError(f"rank {k} exceeds the smallest block dimension {int(sizes.min())} at level {i}")


def _peel(oracle: CovarianceOracle, tree: ClusterTree, k: int, plan: SketchPlan, with_derivs: bool):
    if oracle.n != tree.n:
        raise ValueError(f"oracle dimension {oracle.n} does not match tree size {tree.n}")
    _check_rank(tree, k)
    plan.check(tree, k)
    tau = tree.depth
    p = oracle.p if with_derivs else 0
    blocks = []
    dblocks = [[] for _ in range(p)]
    for i in range(1, tau + 1):
        nxt = tree.ranges(i)
        nb = 2 ** (i - 1)
        Rs = plan.r_sampler(tree, i)
        Y = oracle.apply(Rs) - _offdiag_matvec(tree, blocks, i - 1, Rs)
        qr = []
        for b in range(nb):
            lo, hi = nxt[2 * b]
            qr.append(pivoted_qr(Y[lo:hi]))
        Qs = [q[0] for q in qr]
        S = _q_sampler(tree, i, Qs)
        Z = oracle.apply(S) - _offdiag_matvec(tree, blocks, i - 1, S)
        level = []
        for b in range(nb):
            lo, hi = nxt[2 * b + 1]
            level.append(LowRankBlock(Qs[b], Z[lo:hi].copy()))

        for j in range(p):
            dY = oracle.apply_derivative(j, Rs) - _offdiag_matvec(tree, dblocks[j], i - 1, Rs)
            dQs = []
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", IllConditionedWarning)
                for b in range(nb):
                    lo, hi = nxt[2 * b]
                    dQs.append(_diff_range(Y[lo:hi], dY[lo:hi], *qr[b]))
            for w in caught:
                warnings.warn(f"level {i}, parameter {j}: {w.message}", IllConditionedWarning, stacklevel=2)
            SdQ = _q_sampler(tree, i, dQs)
            dZ = (oracle.apply_derivative(j, S) - _offdiag_matvec(tree, dblocks[j], i - 1, S)
                  + oracle.apply(SdQ) - _offdiag_matvec(tree, blocks, i - 1, SdQ))
            dlevel = []
            for b in range(nb):
                lo, hi = nxt[2 * b + 1]
                # d(Q T^T) = dQ T^T + Q dT^T, kept as one width-2k pair
                dlevel.append(LowRankBlock(np.hstack([dQs[b], Qs[b]]), np.hstack([level[b].right, dZ[lo:hi]])))
            dblocks[j].append(dlevel)
        blocks.append(level)

    S = plan.leaf_sampler(tree)
    Z = oracle.apply(S) - _offdiag_matvec(tree, blocks, tau, S)
    leaves = _leaf_blocks(tree, Z)
    H = HodlrMatrix(tree, leaves, blocks)
    Hd = []
    for j in range(p):
        dZ = oracle.apply_derivative(j, S) - _offdiag_matvec(tree, dblocks[j], tau, S)
        Hd.append(HodlrMatrix(tree, _leaf_blocks(tree, dZ), dblocks[j]))
    return H, Hd


def _leaf_blocks(tree: ClusterTree, Z: np.ndarray) -> list:
    out = []
    for lo, hi in tree.leaves:
        a = Z[lo:hi, : hi - lo]
        out.append(0.5 * (a + a.T))
    return out


def build_hodlr(oracle: CovarianceOracle, tree: ClusterTree, k: int, plan: SketchPlan | None = None) -> HodlrMatrix:
    """HODLR approximation of rank ``k`` using ``2 k tau + n_leaf_max`` oracle columns."""
    plan = SketchPlan.create(tree, k) if plan is None else plan
    return _peel(oracle, tree, k, plan, with_derivs=False)[0]


def build_hodlr_with_derivatives(oracle: CovarianceOracle, tree: ClusterTree, k: int, plan: SketchPlan | None = None):
    """``(H, [dH_1, ..., dH_p])``; derivative off-diagonal blocks have width ``2k``."""
    plan = SketchPlan.create(tree, k) if plan is None else plan
    return _peel(oracle, tree, k, plan, with_derivs=True)

"""Exact products and traces of HODLR operands without recompression.

``A B`` and ``A^{-1} B`` are represented as an HODLR matrix plus one
block-diagonal low-rank correction per level (:class:`ProductRep`).  Traces
of those, and of ``A^{-1} B C^{-1} D``, follow from small inner products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hodlr import LEFT, RIGHT, HodlrFactorization, HodlrMatrix, LowRankBlock, _mm, factorize
from .partition import ClusterTree


@dataclass
class ProductRep:
    """``base + sum_i blockdiag_b(U[i-1][b] @ V[i-1][b].T)``.

    ``U[i-1]`` and ``V[i-1]`` hold one block per node at depth ``i - 1``.
    """

    base: HodlrMatrix
    U: list
    V: list

    @property
    def tree(self) -> ClusterTree:
        return self.base.tree

    @property
    def n(self) -> int:
        return self.base.n

    def correction_widths(self) -> list[int]:
        return [max((u.shape[1] for u in lv), default=0) for lv in self.U]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        out = self.base.matvec(x)
        for i, (Ul, Vl) in enumerate(zip(self.U, self.V), start=1):
            for (lo, hi), u, v in zip(self.tree.ranges(i - 1), Ul, Vl):
                out[lo:hi] += u @ (v.T @ x[lo:hi])
        return out

    def densify(self, limit: int | None = None) -> np.ndarray:
        out = self.base.densify() if limit is None else self.base.densify(limit)
        for i, (Ul, Vl) in enumerate(zip(self.U, self.V), start=1):
            for (lo, hi), u, v in zip(self.tree.ranges(i - 1), Ul, Vl):
                out[lo:hi, lo:hi] += u @ v.T
        return out


def _nodes_within(tree: ClusterTree, depth: int, lo: int, hi: int) -> range:
    r = tree.ranges(depth)
    a = int(np.searchsorted(r[:, 0], lo))
    b = int(np.searchsorted(r[:, 1], hi, side="right"))
    return range(a, b)


def _apply_blockdiag(tree: ClusterTree, depth: int, lo: int, arr: np.ndarray, fn) -> np.ndarray:
    """Apply ``fn(node, rows)`` to each depth-``depth`` segment of ``arr`` (rows start at ``lo``)."""
    out = np.empty_like(arr)
    r = tree.ranges(depth)
    for c in _nodes_within(tree, depth, lo, lo + arr.shape[0]):
        a, b = r[c, 0] - lo, r[c, 1] - lo
        out[a:b] = fn(c, arr[a:b])
    return out


def _check_trees(A_tree: ClusterTree, B: HodlrMatrix) -> None:
    if not A_tree.same_structure(B.tree):
        raise ValueError("operands do not share the same cluster tree")


def _engine(tree: ClusterTree, B: HodlrMatrix, level_factors, leaf_fn) -> ProductRep:
    """Push ``B`` through identity-plus-low-rank level factors (coarse to fine), then the leaf factor.

    ``level_factors[i-1]`` is a list of ``(X_b, W_b)`` with level factor block
    ``I + X_b W_b^T`` on node ``b`` at depth ``i - 1``; ``leaf_fn(c, rows)``
    applies the leaf factor on leaf ``c``.
    """
    tau = tree.depth
    upL = [[blk.left.copy() for blk in B.upper[i - 1]] for i in range(1, tau + 1)]
    upR = [[blk.right for blk in B.upper[i - 1]] for i in range(1, tau + 1)]
    loL = [[B.lower_block(i, b).left.copy() for b in range(2 ** (i - 1))] for i in range(1, tau + 1)]
    loR = [[B.lower_block(i, b).right for b in range(2 ** (i - 1))] for i in range(1, tau + 1)]
    U: list = []
    V: list = []
    for i in range(1, tau + 1):
        facs = level_factors[i - 1]
        d = i - 1

        def D(c, rows, facs=facs):
            X, W = facs[c]
            if X.shape[1] == 0:
                return rows
            return rows + _mm(X, _mm(W.T, rows))

        # existing corrections, rows only
        for ic in range(1, i):
            r = tree.ranges(ic - 1)
            U[ic - 1] = [_apply_blockdiag(tree, d, r[b, 0], u, D) for b, u in enumerate(U[ic - 1])]
        # left factors of the coarser off-diagonal blocks
        for ic in range(1, i):
            nxt = tree.ranges(ic)
            for b in range(2 ** (ic - 1)):
                upL[ic - 1][b] = _apply_blockdiag(tree, d, nxt[2 * b, 0], upL[ic - 1][b], D)
                loL[ic - 1][b] = _apply_blockdiag(tree, d, nxt[2 * b + 1, 0], loL[ic - 1][b], D)
        # new correction: X_b (W_b^T B[b, b]) with B's untouched diagonal block
        U.append([X for X, _ in facs])
        V.append([B.node_matvec(d, b, W, transpose=True) for b, (_, W) in enumerate(facs)])
    # leaf factor on every left factor, the leaves and the corrections
    leaves = [leaf_fn(c, a) for c, a in enumerate(B.leaves)]
    for ic in range(1, tau + 1):
        nxt = tree.ranges(ic)
        for b in range(2 ** (ic - 1)):
            upL[ic - 1][b] = _apply_blockdiag(tree, tau, nxt[2 * b, 0], upL[ic - 1][b], leaf_fn)
            loL[ic - 1][b] = _apply_blockdiag(tree, tau, nxt[2 * b + 1, 0], loL[ic - 1][b], leaf_fn)
        r = tree.ranges(ic - 1)
        U[ic - 1] = [_apply_blockdiag(tree, tau, r[b, 0], u, leaf_fn) for b, u in enumerate(U[ic - 1])]
    upper = [[LowRankBlock(a, b) for a, b in zip(la, ra)] for la, ra in zip(upL, upR)]
    lower = [[LowRankBlock(a, b) for a, b in zip(la, ra)] for la, ra in zip(loL, loR)]
    base = HodlrMatrix(tree, leaves, upper, lower, symmetric=False)
    return ProductRep(base, U, V)


def multiply(F: HodlrFactorization, B: HodlrMatrix) -> ProductRep:
    """``A B`` from the RIGHT factorization of ``A``."""
    if F.orientation != RIGHT:
        raise ValueError("multiply needs a RIGHT-oriented factorization")
    _check_trees(F.tree, B)
    factors = [[(blk.X, blk.Y) for blk in lv] for lv in F.levels]
    solvers = F.leaf_solvers
    return _engine(F.tree, B, factors, lambda c, rows: _mm(solvers[c].a, rows))


def solve_multiply(F: HodlrFactorization, B: HodlrMatrix) -> ProductRep:
    """``A^{-1} B`` from the LEFT factorization of ``A`` (Woodbury on every level factor)."""
    if F.orientation != LEFT:
        raise ValueError("solve_multiply needs a LEFT-oriented factorization")
    _check_trees(F.tree, B)
    factors = [[blk.inverse_update() for blk in lv] for lv in F.levels]
    solvers = F.leaf_solvers
    return _engine(F.tree, B, factors, lambda c, rows: solvers[c].solve(rows))


def trace_product_rep(P: ProductRep) -> float:
    t = P.base.trace()
    for Ul, Vl in zip(P.U, P.V):
        for u, v in zip(Ul, Vl):
            t += float(np.sum(u * v))
    return float(t)


def _as_left(A) -> HodlrFactorization:
    if isinstance(A, HodlrFactorization):
        if A.orientation != LEFT:
            raise ValueError("expected a LEFT-oriented factorization")
        return A
    return factorize(A, LEFT)


def trace_solve(A, B: HodlrMatrix) -> float:
    """``tr(A^{-1} B)``; ``A`` is an :class:`HodlrMatrix` or its LEFT factorization."""
    return trace_product_rep(solve_multiply(_as_left(A), B))


def trace_pair(X: HodlrMatrix, Y: HodlrMatrix) -> float:
    """``tr(X Y)`` for two HODLR matrices on one tree, by pairing block ``(I,J)`` with ``(J,I)``."""
    _check_trees(X.tree, Y)
    t = sum(float(np.sum(a * b.T)) for a, b in zip(X.leaves, Y.leaves))
    for i in range(1, X.tau + 1):
        for b in range(2 ** (i - 1)):
            t += _lowrank_pair(X.upper[i - 1][b], Y.lower_block(i, b))
            t += _lowrank_pair(X.lower_block(i, b), Y.upper[i - 1][b])
    return float(t)


def _lowrank_pair(P: LowRankBlock, Q: LowRankBlock) -> float:
    """``tr(P Q)`` with ``P = a b^T`` and ``Q = c d^T``: ``tr((d^T a)(b^T c))``."""
    if P.rank == 0 or Q.rank == 0:
        return 0.0
    return float(np.sum((Q.right.T @ P.left) * (P.right.T @ Q.left).T))


class _AncestorTable:
    """``table[(fine, coarse)][f]`` is the depth-``coarse`` ancestor of node ``f`` at depth ``fine``."""

    def __init__(self, tree: ClusterTree):
        self.tree = tree
        self._cache = {}

    def __getitem__(self, key):
        if key not in self._cache:
            fine, coarse = key
            self._cache[key] = np.arange(2**fine) >> (fine - coarse)
        return self._cache[key]


def trace_quad(A, B: HodlrMatrix, C, D: HodlrMatrix, first_term: str = "pairing") -> float:
    """``tr(A^{-1} B C^{-1} D)``, exact up to roundoff.

    With ``P1 = A^{-1}B = Bb + sum Ub Vb^T`` and ``P2 = C^{-1}D = Db + sum Uc Vc^T``
    the trace splits into ``tr(Bb Db)``, two cross sums against node diagonal
    blocks and a double sum over correction pairs.  ``first_term="multiply"``
    evaluates ``tr(Bb Db)`` through a RIGHT factorization of ``Bb`` instead of
    direct block pairing; it needs ``Bb`` to be factorizable.
    """
    P1 = solve_multiply(_as_left(A), B)
    P2 = solve_multiply(_as_left(C), D)
    return trace_of_product(P1, P2, first_term=first_term)


def trace_of_product(P1: ProductRep, P2: ProductRep, first_term: str = "pairing") -> float:
    tree = P1.tree
    if not tree.same_structure(P2.tree):
        raise ValueError("product representations live on different trees")
    if first_term == "pairing":
        t = trace_pair(P1.base, P2.base)
    elif first_term == "multiply":
        t = trace_product_rep(multiply(factorize(P1.base, RIGHT), P2.base))
    else:
        raise ValueError(f"unknown first_term method {first_term!r}")
    # cross sums tr(V^T Dbar[b,b] U) and tr(V^T Bbar[b,b] U)
    for Pa, Pb in ((P1, P2), (P2, P1)):
        for i, (Ul, Vl) in enumerate(zip(Pa.U, Pa.V), start=1):
            for b, (u, v) in enumerate(zip(Ul, Vl)):
                t += float(np.sum(v * Pb.base.node_matvec(i - 1, b, u)))
    # double sum over (i, j) on the finer of the two partitions
    anc = _AncestorTable(tree)
    tau = tree.depth
    for i in range(1, tau + 1):
        for j in range(1, tau + 1):
            fine = max(i, j) - 1
            rf = tree.ranges(fine)
            ai, aj = anc[(fine, i - 1)], anc[(fine, j - 1)]
            ri, rj = tree.ranges(i - 1), tree.ranges(j - 1)
            for f in range(2**fine):
                lo, hi = rf[f]
                b, c = ai[f], aj[f]
                sb, sc = lo - ri[b, 0], lo - rj[c, 0]
                Ub = P1.U[i - 1][b][sb:sb + hi - lo]
                Vb = P1.V[i - 1][b][sb:sb + hi - lo]
                Uc = P2.U[j - 1][c][sc:sc + hi - lo]
                Vc = P2.V[j - 1][c][sc:sc + hi - lo]
                t += float(np.sum((Vc.T @ Ub) * (Vb.T @ Uc).T))
    return float(t)

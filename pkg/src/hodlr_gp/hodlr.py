"""HODLR matrices, their identity-plus-low-rank factorization, solves and log-determinants.

All arrays live in the tree's reordered coordinates.  Off-diagonal blocks are
indexed by *level* ``i = 1..tau``: level ``i`` holds ``2**(i-1)`` blocks, one per
node at depth ``i - 1``, coupling that node's left child (rows) to its right
child (columns).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .partition import ClusterTree

DENSE_LIMIT = 2**14


class SingularBlockError(np.linalg.LinAlgError):
    pass


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class FlopCounter:
    """Multiply-add tally shared by the structured kernels (opt-in)."""

    def __init__(self):
        self.enabled = False
        self.count = 0

    def add(self, n: int) -> None:
        if self.enabled:
            self.count += int(n)

    def reset(self) -> None:
        self.count = 0


flops = FlopCounter()


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    flops.add(a.shape[0] * a.shape[1] * (b.shape[1] if b.ndim > 1 else 1))
    return a @ b


@dataclass
class LowRankBlock:
    """``left @ right.T``; a sum of factor pairs is kept as concatenated columns."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        if self.left.shape[1] != self.right.shape[1]:
            raise ValueError("factor widths differ")

    @classmethod
    def from_terms(cls, terms) -> "LowRankBlock":
        terms = list(terms)
        return cls(np.hstack([t[0] for t in terms]), np.hstack([t[1] for t in terms]))

    @classmethod
    def zeros(cls, m: int, mp: int, rank: int = 0) -> "LowRankBlock":
        return cls(np.zeros((m, rank)), np.zeros((mp, rank)))

    @property
    def rank(self) -> int:
        return self.left.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.left.shape[0], self.right.shape[0]

    def dense(self) -> np.ndarray:
        return self.left @ self.right.T

    def matvec(self, x):
        return _mm(self.left, _mm(self.right.T, x))

    def rmatvec(self, x):
        return _mm(self.right, _mm(self.left.T, x))

    def T(self) -> "LowRankBlock":
        return LowRankBlock(self.right, self.left)

    def with_left(self, left) -> "LowRankBlock":
        return LowRankBlock(left, self.right)


class HodlrMatrix:
    """Dense leaves plus low-rank off-diagonal blocks on a :class:`ClusterTree`.

    ``upper[i-1][b]`` is the block ``A[left(b), right(b)]``.  ``lower`` holds
    ``A[right(b), left(b)]``; it is ``None`` for symmetric matrices, where the
    lower block is the transpose of the upper one.
    """

    def __init__(self, tree: ClusterTree, leaves, upper, lower=None, symmetric: bool | None = None):
        self.tree = tree
        self.leaves = [np.asarray(a, dtype=float) for a in leaves]
        self.upper = [list(lv) for lv in upper]
        self.lower = None if lower is None else [list(lv) for lv in lower]
        self.symmetric = (lower is None) if symmetric is None else symmetric
        if self.symmetric and self.lower is not None:
            raise ValueError("symmetric HODLR matrices store only the upper blocks")
        self._check()

    def _check(self):
        t = self.tree
        if len(self.leaves) != 2**t.depth or len(self.upper) != t.depth:
            raise ValueError("block counts do not match the tree")
        for (lo, hi), a in zip(t.leaves, self.leaves):
            if a.shape != (hi - lo, hi - lo):
                raise ValueError(f"leaf block shape {a.shape} does not match range [{lo},{hi})")
        for i in range(1, t.depth + 1):
            nxt = t.ranges(i)
            for b, blk in enumerate(self.upper[i - 1]):
                m = nxt[2 * b, 1] - nxt[2 * b, 0]
                mp = nxt[2 * b + 1, 1] - nxt[2 * b + 1, 0]
                if blk.shape != (m, mp):
                    raise ValueError(f"level {i} block {b} has shape {blk.shape}, expected {(m, mp)}")
                if self.lower is not None and self.lower[i - 1][b].shape != (mp, m):
                    raise ValueError(f"level {i} lower block {b} has the wrong shape")

    # -- basic properties -------------------------------------------------
    @property
    def n(self) -> int:
        return self.tree.n

    @property
    def tau(self) -> int:
        return self.tree.depth

    shape = property(lambda self: (self.n, self.n))

    def lower_block(self, level: int, b: int) -> LowRankBlock:
        if self.lower is None:
            return self.upper[level - 1][b].T()
        return self.lower[level - 1][b]

    def max_rank(self) -> int:
        ranks = [blk.rank for lv in self.upper for blk in lv]
        if self.lower is not None:
            ranks += [blk.rank for lv in self.lower for blk in lv]
        return max(ranks, default=0)

    # -- products ---------------------------------------------------------
    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: matrix is {self.n}, vector has {x.shape[0]} rows")
        return self.node_matvec(0, 0, x)

    __matmul__ = matvec

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        """``A.T @ x``."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: matrix is {self.n}, vector has {x.shape[0]} rows")
        return self.node_matvec(0, 0, x, transpose=True)

    def node_matvec(self, depth: int, b: int, x: np.ndarray, transpose: bool = False) -> np.ndarray:
        """Multiply the diagonal block of node ``(depth, b)`` (or its transpose) by ``x``.

        ``x`` has as many rows as the node range; the result is in the same
        local coordinates.
        """
        t = self.tree
        base = t.ranges(depth)[b, 0]
        out = np.zeros_like(x, dtype=float)
        span = 1
        for e in range(depth, t.depth):
            nxt = t.ranges(e + 1)
            for c in range(b * span, (b + 1) * span):
                (l0, l1), (r0, r1) = nxt[2 * c], nxt[2 * c + 1]
                l0, l1, r0, r1 = l0 - base, l1 - base, r0 - base, r1 - base
                up = self.upper[e][c]
                lw = self.lower_block(e + 1, c)
                if transpose:
                    up, lw = lw.T(), up.T()
                if up.rank:
                    out[l0:l1] += up.matvec(x[r0:r1])
                if lw.rank:
                    out[r0:r1] += lw.matvec(x[l0:l1])
            span *= 2
        leaves = t.leaves
        first = b * 2 ** (t.depth - depth)
        for c in range(first, first + 2 ** (t.depth - depth)):
            lo, hi = leaves[c, 0] - base, leaves[c, 1] - base
            a = self.leaves[c].T if transpose else self.leaves[c]
            out[lo:hi] += _mm(a, x[lo:hi])
        return out

    def node_dense(self, depth: int, b: int) -> np.ndarray:
        lo, hi = self.tree.ranges(depth)[b]
        return self.node_matvec(depth, b, np.eye(hi - lo))

    # -- structure ---------------------------------------------------------
    def densify(self, limit: int = DENSE_LIMIT) -> np.ndarray:
        if self.n > limit:
            raise MemoryError(f"refusing to densify an {self.n}x{self.n} HODLR matrix (limit {limit})")
        t = self.tree
        out = np.zeros((self.n, self.n))
        for (lo, hi), a in zip(t.leaves, self.leaves):
            out[lo:hi, lo:hi] = a
        for i in range(1, t.depth + 1):
            nxt = t.ranges(i)
            for b in range(2 ** (i - 1)):
                (l0, l1), (r0, r1) = nxt[2 * b], nxt[2 * b + 1]
                out[l0:l1, r0:r1] = self.upper[i - 1][b].dense()
                out[r0:r1, l0:l1] = self.lower_block(i, b).dense()
        return out

    def transpose(self) -> "HodlrMatrix":
        if self.symmetric:
            return self
        return HodlrMatrix(
            self.tree,
            [a.T.copy() for a in self.leaves],
            [[blk.T() for blk in lv] for lv in self.lower],
            [[blk.T() for blk in lv] for lv in self.upper],
            symmetric=False,
        )

    def as_general(self) -> "HodlrMatrix":
        """Copy with explicit lower blocks (drops the symmetric shortcut)."""
        lower = [[self.lower_block(i, b) for b in range(2 ** (i - 1))] for i in range(1, self.tau + 1)]
        return HodlrMatrix(self.tree, [a.copy() for a in self.leaves], self.upper, lower, symmetric=False)

    def scaled(self, c: float) -> "HodlrMatrix":
        up = [[LowRankBlock(c * blk.left, blk.right) for blk in lv] for lv in self.upper]
        lw = None if self.lower is None else [[LowRankBlock(c * blk.left, blk.right) for blk in lv] for lv in self.lower]
        return HodlrMatrix(self.tree, [c * a for a in self.leaves], up, lw, symmetric=self.symmetric)

    def trace(self) -> float:
        return float(sum(np.trace(a) for a in self.leaves))

    # -- constructors ------------------------------------------------------
    @classmethod
    def identity(cls, tree: ClusterTree) -> "HodlrMatrix":
        sizes = tree.leaf_sizes
        upper = [
            [LowRankBlock.zeros(*_child_sizes(tree, i, b)) for b in range(2 ** (i - 1))]
            for i in range(1, tree.depth + 1)
        ]
        return cls(tree, [np.eye(m) for m in sizes], upper)

    @classmethod
    def from_dense(cls, K: np.ndarray, tree: ClusterTree, rank: int | None = None, symmetric: bool | None = None):
        """Compress a dense matrix (already in tree order).

        With ``rank=None`` every off-diagonal block keeps its full numerical
        rank, so the round trip is exact up to roundoff.
        """
        K = np.asarray(K, dtype=float)
        if symmetric is None:
            symmetric = np.allclose(K, K.T, rtol=0, atol=1e-14 * max(1.0, np.abs(K).max()))
        leaves = [K[lo:hi, lo:hi].copy() for lo, hi in tree.leaves]
        upper, lower = [], []
        for i in range(1, tree.depth + 1):
            nxt = tree.ranges(i)
            up_lv, lw_lv = [], []
            for b in range(2 ** (i - 1)):
                (l0, l1), (r0, r1) = nxt[2 * b], nxt[2 * b + 1]
                up_lv.append(_compress(K[l0:l1, r0:r1], rank))
                if not symmetric:
                    lw_lv.append(_compress(K[r0:r1, l0:l1], rank))
            upper.append(up_lv)
            lower.append(lw_lv)
        return cls(tree, leaves, upper, None if symmetric else lower, symmetric=symmetric)


def _child_sizes(tree: ClusterTree, level: int, b: int) -> tuple[int, int]:
    nxt = tree.ranges(level)
    return int(nxt[2 * b, 1] - nxt[2 * b, 0]), int(nxt[2 * b + 1, 1] - nxt[2 * b + 1, 0])


def _compress(block: np.ndarray, rank: int | None) -> LowRankBlock:
    if rank is None:
        u, s, vt = np.linalg.svd(block, full_matrices=False)
        keep = s > s[0] * 1e-15 if s.size and s[0] > 0 else np.zeros(s.size, bool)
        return LowRankBlock(u[:, keep] * s[keep], vt[keep].T)
    u, s, vt = np.linalg.svd(block, full_matrices=False)
    r = min(rank, s.size)
    return LowRankBlock(u[:, :r] * s[:r], vt[:r].T)


def random_hodlr(tree: ClusterTree, rank: int, rng=None, spd: bool = True, symmetric: bool = True) -> HodlrMatrix:
    """Random HODLR matrix with exact off-diagonal ``rank``.

    With ``spd=True`` the leaves are shifted so the spectrum lies in roughly
    ``[0.1 s, 2.1 s]`` where ``s`` estimates the unshifted spectral norm.
    """
    rng = np.random.default_rng(rng)
    leaves = []
    for m in tree.leaf_sizes:
        g = rng.standard_normal((m, m)) / np.sqrt(m)
        leaves.append(g + g.T if symmetric else g)
    upper, lower = [], []
    for i in range(1, tree.depth + 1):
        up_lv, lw_lv = [], []
        for b in range(2 ** (i - 1)):
            m, mp = _child_sizes(tree, i, b)
            r = min(rank, m, mp)
            up_lv.append(LowRankBlock(rng.standard_normal((m, r)) / np.sqrt(m), rng.standard_normal((mp, r)) / np.sqrt(mp)))
            if not symmetric:
                lw_lv.append(LowRankBlock(rng.standard_normal((mp, r)) / np.sqrt(mp), rng.standard_normal((m, r)) / np.sqrt(m)))
        upper.append(up_lv)
        lower.append(lw_lv)
    H = HodlrMatrix(tree, leaves, upper, None if symmetric else lower, symmetric=symmetric)
    if spd:
        if not symmetric:
            raise ValueError("spd=True needs symmetric=True")
        s = _norm_estimate(H, rng)
        shift = 1.1 * s
        H = HodlrMatrix(tree, [a + shift * np.eye(a.shape[0]) for a in H.leaves], H.upper)
    return H


def _norm_estimate(H: HodlrMatrix, rng, iters: int = 60) -> float:
    v = rng.standard_normal(H.n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = H.matvec(v)
        lam = np.linalg.norm(w)
        if lam == 0:
            return 0.0
        v = w / lam
    return float(lam)


# ---------------------------------------------------------------------------
# factorization
# ---------------------------------------------------------------------------

RIGHT = "right"
LEFT = "left"


class LeafSolver:
    """Dense decomposition of one leaf block (Cholesky when possible, else LU)."""

    def __init__(self, a: np.ndarray, index: int, symmetric: bool):
        self.a = a
        self.index = index
        self.kind = None
        if symmetric:
            try:
                self.fac = sla.cho_factor(a, lower=False, check_finite=False)
                self.kind = "cho"
            except np.linalg.LinAlgError:
                pass
        if self.kind is None:
            lu, piv = sla.lu_factor(a, check_finite=False)
            d = np.abs(np.diag(lu))
            if a.shape[0] and (not np.all(np.isfinite(d)) or d.min() <= np.finfo(float).eps * max(d.max(), 1e-300) * a.shape[0]):
                raise SingularBlockError(f"leaf block {index} is singular")
            self.fac = (lu, piv)
            self.kind = "lu"

    def solve(self, b: np.ndarray, trans: bool = False) -> np.ndarray:
        flops.add(self.a.shape[0] ** 2 * (b.shape[1] if b.ndim > 1 else 1))
        if self.kind == "cho":
            return sla.cho_solve(self.fac, b, check_finite=False)
        return sla.lu_solve(self.fac, b, trans=1 if trans else 0, check_finite=False)

    def slogdet(self) -> tuple[float, float]:
        if self.kind == "cho":
            return 1.0, 2.0 * float(np.sum(np.log(np.diag(self.fac[0]))))
        lu, piv = self.fac
        d = np.diag(lu)
        sign = np.prod(np.sign(d)) * (-1) ** np.count_nonzero(piv != np.arange(piv.size))
        return float(sign), float(np.sum(np.log(np.abs(d))))


class UpdateBlock:
    """One diagonal block ``I + X Y^T`` of a level factor, on range ``[lo, hi)``."""

    def __init__(self, lo: int, hi: int, X: np.ndarray, Y: np.ndarray):
        self.lo, self.hi = int(lo), int(hi)
        # balance column scales: X D, Y D^{-1} keeps X Y^T and makes the
        # capacitance a similarity transform of the unbalanced one
        nx, ny = np.linalg.norm(X, axis=0), np.linalg.norm(Y, axis=0)
        ok = (nx > 0) & (ny > 0)
        if np.any(ok):
            s = np.ones(X.shape[1])
            s[ok] = np.sqrt(ny[ok] / nx[ok])
            X, Y = X * s, Y / s
        self.X, self.Y = X, Y
        cap = np.eye(X.shape[1]) + Y.T @ X
        self.cap = cap
        if cap.size:
            self.cap_lu = sla.lu_factor(cap, check_finite=False)
            d = np.abs(np.diag(self.cap_lu[0]))
            if d.min() <= np.finfo(float).eps * max(d.max(), 1.0) * cap.shape[0]:
                raise SingularBlockError(f"capacitance matrix on [{lo},{hi}) is singular")
        else:
            self.cap_lu = None

    @property
    def width(self) -> int:
        return self.X.shape[1]

    def apply(self, v):
        if not self.width:
            return v.copy()
        return v + _mm(self.X, _mm(self.Y.T, v))

    def solve(self, v):
        """Woodbury: ``(I + X Y^T)^{-1} v = v - X (I + Y^T X)^{-1} Y^T v``."""
        if not self.width:
            return v.copy()
        return v - _mm(self.X, sla.lu_solve(self.cap_lu, _mm(self.Y.T, v), check_finite=False))

    def inverse_update(self) -> tuple[np.ndarray, np.ndarray]:
        """``(X, Yhat)`` with ``(I + X Y^T)^{-1} = I + X Yhat^T``."""
        if not self.width:
            return self.X, self.Y
        # Yhat^T = -(I + Y^T X)^{-1} Y^T
        yt = -sla.lu_solve(self.cap_lu, self.Y.T, check_finite=False)
        return self.X, yt.T

    def slogdet(self) -> tuple[float, float]:
        """Sylvester: ``det(I + X Y^T) = det(I + Y^T X)``."""
        if not self.width:
            return 1.0, 0.0
        lu, piv = self.cap_lu
        d = np.diag(lu)
        sign = np.prod(np.sign(d)) * (-1) ** np.count_nonzero(piv != np.arange(piv.size))
        return float(sign), float(np.sum(np.log(np.abs(d))))


@dataclass
class HodlrFactorization:
    """``A = Abar (I+U^(tau)V^(tau)T) ... (I+U^(1)V^(1)T)`` (RIGHT) or
    ``A = (I+V^(1)U^(1)T) ... (I+V^(tau)U^(tau)T) Abar`` (LEFT).

    ``levels[i-1]`` holds the ``2**(i-1)`` :class:`UpdateBlock` objects of
    level ``i`` whatever the orientation; each block stores the factor it
    represents as ``I + X Y^T``.
    """

    tree: ClusterTree
    orientation: str
    leaf_solvers: list
    levels: list
    symmetric: bool = True
    _logdet: float | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.tree.n

    @property
    def tau(self) -> int:
        return self.tree.depth

    def apply_leaves(self, x: np.ndarray, inverse: bool = False) -> np.ndarray:
        out = np.empty_like(x, dtype=float)
        for (lo, hi), s in zip(self.tree.leaves, self.leaf_solvers):
            out[lo:hi] = s.solve(x[lo:hi]) if inverse else _mm(s.a, x[lo:hi])
        return out

    def apply_level(self, i: int, x: np.ndarray, inverse: bool = False) -> np.ndarray:
        out = np.empty_like(x, dtype=float)
        for blk in self.levels[i - 1]:
            seg = x[blk.lo:blk.hi]
            out[blk.lo:blk.hi] = blk.solve(seg) if inverse else blk.apply(seg)
        return out

    def order(self, inverse: bool = False) -> list:
        """Factors as they act on a vector, rightmost first: ``('leaf',)`` or ``('level', i)``."""
        seq = [("level", i) for i in range(1, self.tau + 1)]
        if self.orientation == RIGHT:
            seq = seq + [("leaf",)]  # Abar D_tau ... D_1
        else:
            seq = [("leaf",)] + seq[::-1]  # D_1 ... D_tau Abar
        return seq[::-1] if inverse else seq

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Product with the factored matrix (mainly a consistency check)."""
        x = np.asarray(x, dtype=float)
        for f in self.order():
            x = self.apply_leaves(x) if f[0] == "leaf" else self.apply_level(f[1], x)
        return x

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: factorization is {self.n}, rhs has {b.shape[0]} rows")
        x = b
        for f in self.order(inverse=True):
            x = self.apply_leaves(x, inverse=True) if f[0] == "leaf" else self.apply_level(f[1], x, inverse=True)
        return x

    def slogdet(self) -> tuple[float, float]:
        sign, total = 1.0, 0.0
        for s in self.leaf_solvers:
            sg, ld = s.slogdet()
            sign *= sg
            total += ld
        for lv in self.levels:
            for blk in lv:
                sg, ld = blk.slogdet()
                sign *= sg
                total += ld
        return sign, total

    def logdet(self) -> float:
        if self._logdet is None:
            for s in self.leaf_solvers:
                if s.slogdet()[0] <= 0:
                    raise NotPositiveDefiniteError(f"leaf block {s.index} has non-positive determinant")
            for i, lv in enumerate(self.levels, start=1):
                for b, blk in enumerate(lv):
                    if blk.slogdet()[0] <= 0:
                        raise NotPositiveDefiniteError(f"capacitance at level {i}, block {b} has non-positive determinant")
            self._logdet = self.slogdet()[1]
        return self._logdet

    def densify(self, limit: int = DENSE_LIMIT) -> np.ndarray:
        if self.n > limit:
            raise MemoryError("factorization too large to densify")
        return self.matvec(np.eye(self.n))

    def max_width(self) -> int:
        return max((blk.width for lv in self.levels for blk in lv), default=0)


def _leaf_rows_apply(tree: ClusterTree, solvers, lo: int, arr: np.ndarray) -> np.ndarray:
    """Apply ``Abar^{-1}`` to the rows of ``arr`` (which start at global row ``lo``)."""
    out = np.empty_like(arr)
    hi = lo + arr.shape[0]
    for (a, b), s in zip(tree.leaves, solvers):
        if a >= lo and b <= hi:
            out[a - lo:b - lo] = s.solve(arr[a - lo:b - lo])
    return out


def _right_factorization(H: HodlrMatrix, solvers) -> list:
    t = H.tree
    tau = t.depth
    # working copies of the left factors: W (upper, rows=left child), Y (lower, rows=right child)
    W = [[None] * 2 ** (i - 1) for i in range(1, tau + 1)]
    Yl = [[None] * 2 ** (i - 1) for i in range(1, tau + 1)]
    for i in range(1, tau + 1):
        nxt = t.ranges(i)
        for b in range(2 ** (i - 1)):
            up = H.upper[i - 1][b]
            lw = H.lower_block(i, b)
            W[i - 1][b] = _leaf_rows_apply(t, solvers, nxt[2 * b, 0], up.left)
            Yl[i - 1][b] = _leaf_rows_apply(t, solvers, nxt[2 * b + 1, 0], lw.left)
    levels = [None] * tau
    for i in range(tau, 0, -1):
        rng_i = t.ranges(i - 1)
        nxt = t.ranges(i)
        blocks = []
        for b in range(2 ** (i - 1)):
            lo, hi = rng_i[b]
            mid = nxt[2 * b + 1, 0]
            up = H.upper[i - 1][b]
            lw = H.lower_block(i, b)
            kw, ky = up.rank, lw.rank
            X = np.zeros((hi - lo, kw + ky))
            Y = np.zeros((hi - lo, kw + ky))
            X[: mid - lo, :kw] = W[i - 1][b]
            X[mid - lo:, kw:] = Yl[i - 1][b]
            Y[mid - lo:, :kw] = up.right  # V = [[0, Z], [X, 0]]
            Y[: mid - lo, kw:] = lw.right
            blocks.append(UpdateBlock(lo, hi, X, Y))
        levels[i - 1] = blocks
        # fold D_i^{-1} into every coarser left factor
        for ic in range(1, i):
            cn = t.ranges(ic)
            for bc in range(2 ** (ic - 1)):
                for store, child in ((W, 2 * bc), (Yl, 2 * bc + 1)):
                    arr = store[ic - 1][bc]
                    c0 = cn[child, 0]
                    new = np.empty_like(arr)
                    for blk in blocks:
                        if blk.lo >= c0 and blk.hi <= c0 + arr.shape[0]:
                            new[blk.lo - c0:blk.hi - c0] = blk.solve(arr[blk.lo - c0:blk.hi - c0])
                    store[ic - 1][bc] = new
    return levels


def factorize(H: HodlrMatrix, orientation: str = RIGHT) -> HodlrFactorization:
    """Basic HODLR factorization into a leaf factor and identity-plus-low-rank levels."""
    if orientation not in (RIGHT, LEFT):
        raise ValueError(f"unknown orientation {orientation!r}")
    solvers = [LeafSolver(a, idx, H.symmetric) for idx, a in enumerate(H.leaves)]
    if orientation == RIGHT:
        levels = _right_factorization(H, solvers)
    else:
        # A = (A^T)^T and A^T = Abar' D'_tau ... D'_1  =>  A = D'_1^T ... D'_tau^T Abar'^T
        Ht = H.transpose()
        tsolvers = solvers if H.symmetric else [LeafSolver(a, idx, False) for idx, a in enumerate(Ht.leaves)]
        tl = _right_factorization(Ht, tsolvers)
        levels = [[UpdateBlock(blk.lo, blk.hi, blk.Y, blk.X) for blk in lv] for lv in tl]
    return HodlrFactorization(H.tree, orientation, solvers, levels, symmetric=H.symmetric)


def solve(F: HodlrFactorization, b: np.ndarray) -> np.ndarray:
    return F.solve(b)


def logdet(F: HodlrFactorization) -> float:
    return F.logdet()


def matvec(H: HodlrMatrix, v: np.ndarray) -> np.ndarray:
    return H.matvec(v)


def densify(H: HodlrMatrix, limit: int = DENSE_LIMIT) -> np.ndarray:
    return H.densify(limit)


# ---------------------------------------------------------------------------
# debug serialization: JSON manifest plus little-endian float64 sidecars
# ---------------------------------------------------------------------------

def _dump(arr: np.ndarray, path: Path) -> dict:
    np.ascontiguousarray(arr, dtype="<f8").tofile(path)
    return {"file": path.name, "shape": list(arr.shape)}


def _load(entry: dict, root: Path) -> np.ndarray:
    data = np.fromfile(root / entry["file"], dtype="<f8")
    return data.reshape(entry["shape"])


def save_hodlr(H: HodlrMatrix, directory) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    t = H.tree
    manifest = {
        "n": H.n,
        "tau": H.tau,
        "symmetric": H.symmetric,
        "perm": t.perm.tolist(),
        "leaf_min": t.leaf_min,
        "leaf_max": t.leaf_max,
        "levels": [lv.tolist() for lv in t.levels],
        "leaves": [_dump(a, root / f"leaf_{c}.bin") for c, a in enumerate(H.leaves)],
        "blocks": [],
    }
    sides = [("upper", H.upper)] + ([] if H.lower is None else [("lower", H.lower)])
    for side, store in sides:
        for i, lv in enumerate(store, start=1):
            for b, blk in enumerate(lv):
                tag = f"{side}_{i}_{b}"
                manifest["blocks"].append({
                    "side": side, "level": i, "node": b, "rank": blk.rank,
                    "left": _dump(blk.left, root / f"{tag}_left.bin"),
                    "right": _dump(blk.right, root / f"{tag}_right.bin"),
                })
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_hodlr(directory) -> HodlrMatrix:
    root = Path(directory)
    m = json.loads((root / "manifest.json").read_text())
    tree = ClusterTree(np.array(m["perm"], dtype=np.int64), [np.array(lv, dtype=np.int64).reshape(-1, 2) for lv in m["levels"]],
                       m["leaf_min"], m["leaf_max"])
    leaves = [_load(e, root) for e in m["leaves"]]
    tau = m["tau"]
    store = {"upper": [[None] * 2 ** (i - 1) for i in range(1, tau + 1)],
             "lower": [[None] * 2 ** (i - 1) for i in range(1, tau + 1)]}
    for e in m["blocks"]:
        store[e["side"]][e["level"] - 1][e["node"]] = LowRankBlock(_load(e["left"], root), _load(e["right"], root))
    lower = None if m["symmetric"] else store["lower"]
    return HodlrMatrix(tree, leaves, store["upper"], lower, symmetric=m["symmetric"])

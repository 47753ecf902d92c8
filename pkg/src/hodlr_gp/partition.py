"""KD-tree ordering of observation points and the cluster tree behind HODLR blocks.

The tree is always a *full* binary tree of uniform depth ``tau``: every node at
depth ``d < tau`` has two children, and the ``2**tau`` leaves sit at depth
``tau``.  Node ranges are half-open ``[lo, hi)`` intervals in reordered
coordinates; the node at depth ``d`` and position ``b`` has children ``2b`` and
``2b + 1`` at depth ``d + 1``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class PointSet:
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("a point set needs at least one point")
        if c.shape[1] not in (1, 2):
            raise ValueError(f"only 1D and 2D points are supported, got d={c.shape[1]}")
        if not np.all(np.isfinite(c)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class ClusterTree:
    """Binary cluster tree over a reordered index set.

    ``perm[i]`` is the original index of the point stored at reordered
    position ``i``; ``inverse[j]`` is the reordered position of original point
    ``j``.  ``levels[d]`` is an ``(2**d, 2)`` integer array of node ranges.
    """

    perm: np.ndarray
    levels: list[np.ndarray]
    leaf_min: int
    leaf_max: int
    inverse: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        object.__setattr__(self, "inverse", inv)

    @property
    def n(self) -> int:
        return int(self.perm.size)

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    tau = depth

    def ranges(self, depth: int) -> np.ndarray:
        return self.levels[depth]

    @property
    def leaves(self) -> np.ndarray:
        return self.levels[-1]

    @property
    def leaf_sizes(self) -> np.ndarray:
        lv = self.leaves
        return lv[:, 1] - lv[:, 0]

    @property
    def max_leaf(self) -> int:
        return int(self.leaf_sizes.max())

    def children(self, depth: int, b: int) -> tuple[tuple[int, int], tuple[int, int]]:
        """Ranges of the two children of node ``b`` at ``depth``."""
        nxt = self.levels[depth + 1]
        return tuple(nxt[2 * b]), tuple(nxt[2 * b + 1])

    def to_reordered(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.perm]

    def to_original(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.inverse]

    def same_structure(self, other: "ClusterTree") -> bool:
        if self.depth != other.depth:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.levels, other.levels))

    @classmethod
    def balanced(cls, n: int, depth: int) -> "ClusterTree":
        """Tree over the identity ordering with ``depth`` levels of halving."""
        levels = _halving_levels(n, depth)
        sizes = levels[-1][:, 1] - levels[-1][:, 0]
        if sizes.min() < 1:
            raise ValueError(f"cannot split {n} points into {2**depth} leaves")
        return cls(np.arange(n), levels, int(sizes.min()), int(sizes.max()))


def _halving_levels(n: int, depth: int) -> list[np.ndarray]:
    levels = [np.array([[0, n]], dtype=np.int64)]
    for _ in range(depth):
        prev = levels[-1]
        lo, hi = prev[:, 0], prev[:, 1]
        mid = lo + (hi - lo + 1) // 2  # left child gets the ceiling
        nxt = np.empty((2 * prev.shape[0], 2), dtype=np.int64)
        nxt[0::2, 0], nxt[0::2, 1] = lo, mid
        nxt[1::2, 0], nxt[1::2, 1] = mid, hi
        levels.append(nxt)
    return levels


def choose_depth(n: int, leaf_min: int, leaf_max: int) -> int:
    """Deepest uniform depth whose smallest leaf still holds ``leaf_min`` points."""
    if leaf_min < 1 or leaf_min > leaf_max:
        raise ValueError(f"need 1 <= leaf_min <= leaf_max, got [{leaf_min}, {leaf_max}]")
    if n < 1:
        raise ValueError("need at least one point")
    depth = 0
    while True:
        sizes = _halving_levels(n, depth + 1)[-1]
        if (sizes[:, 1] - sizes[:, 0]).min() < leaf_min:
            break
        depth += 1
    biggest = (lambda lv: int((lv[:, 1] - lv[:, 0]).max()))(_halving_levels(n, depth)[-1])
    if n >= leaf_min and biggest > leaf_max:
        raise ValueError(
            f"leaf band [{leaf_min}, {leaf_max}] is too narrow for n={n}: "
            f"depth {depth} leaves hold up to {biggest} points"
        )
    return depth


def build_kd_ordering(points, leaf_min: int, leaf_max: int) -> tuple[np.ndarray, ClusterTree]:
    """Order points by recursive median bisection along the longest box edge.

    Returns ``(perm, tree)`` where ``perm`` is also ``tree.perm``.
    """
    if not isinstance(points, PointSet):
        points = PointSet(points)
    n = points.n
    depth = choose_depth(n, leaf_min, leaf_max)
    levels = _halving_levels(n, depth)
    coords = points.coords
    perm = np.arange(n)
    for d in range(depth):
        for lo, hi in levels[d]:
            idx = perm[lo:hi]
            pts = coords[idx]
            axis = int(np.argmax(np.ptp(pts, axis=0)))
            order = np.lexsort((idx, pts[:, axis]))
            perm[lo:hi] = idx[order]
    tree = ClusterTree(perm, levels, leaf_min, leaf_max)
    return tree.perm, tree


def read_points_csv(path) -> PointSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header not in (["x1"], ["x1", "x2"]):
            raise ValueError(f"expected header x1[,x2], got {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    return PointSet(np.array(rows))


def write_permutation_csv(path, perm: np.ndarray) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["perm"])
        for p in perm:
            w.writerow([int(p)])

"""Matrix-free covariance operators: ``K(theta) @ V`` and ``dK/dtheta_j @ V``."""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class CallCounts:
    apply_calls: int = 0
    apply_columns: int = 0
    deriv_calls: int = 0
    deriv_columns: int = 0
    seconds: float = 0.0  # wall time spent inside the operator

    def reset(self) -> None:
        self.apply_calls = self.apply_columns = self.deriv_calls = self.deriv_columns = 0
        self.seconds = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


class CovarianceOracle:
    """Symmetric covariance operator evaluated at a fixed parameter vector.

    Subclasses implement ``_apply`` and optionally ``_apply_derivative`` on
    2-D blocks, and ``at`` to rebind the parameters.  The public methods
    validate shapes and keep column counters.
    """

    param_names: tuple[str, ...] = ()

    def __init__(self, n: int, theta):
        self.n = int(n)
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float)).copy()
        self.counts = CallCounts()

    @property
    def p(self) -> int:
        return self.theta.size

    def _as_block(self, V):
        V = np.asarray(V, dtype=float)
        vec = V.ndim == 1
        if vec:
            V = V[:, None]
        if V.ndim != 2 or V.shape[0] != self.n:
            raise ValueError(f"operator has dimension {self.n}, got input of shape {V.shape}")
        return V, vec

    def apply(self, V):
        V, vec = self._as_block(V)
        self.counts.apply_calls += 1
        self.counts.apply_columns += V.shape[1]
        t0 = time.perf_counter()
        out = self._apply(V)
        self.counts.seconds += time.perf_counter() - t0
        return out[:, 0] if vec else out

    def apply_derivative(self, j: int, V):
        if not 0 <= j < self.p:
            raise IndexError(f"parameter index {j} out of range for p={self.p}")
        V, vec = self._as_block(V)
        self.counts.deriv_calls += 1
        self.counts.deriv_columns += V.shape[1]
        t0 = time.perf_counter()
        out = self._apply_derivative(j, V)
        self.counts.seconds += time.perf_counter() - t0
        return out[:, 0] if vec else out

    def _apply(self, V):
        raise NotImplementedError

    def _apply_derivative(self, j, V):
        raise NotImplementedError(f"{type(self).__name__} has no derivative action")

    def at(self, theta) -> "CovarianceOracle":
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        """Dense ``K`` assembled column by column (not counted)."""
        saved = CallCounts(**self.counts.as_dict())
        K = self.apply(np.eye(self.n))
        self.counts = saved
        return 0.5 * (K + K.T)

    def dense_derivative(self, j: int) -> np.ndarray:
        saved = CallCounts(**self.counts.as_dict())
        K = self.apply_derivative(j, np.eye(self.n))
        self.counts = saved
        return 0.5 * (K + K.T)


class DenseOracle(CovarianceOracle):
    """Oracle backed by explicit matrices ``matrix_fn(theta)``.

    ``deriv_fn(theta)`` returns the list of derivative matrices; without it
    derivative products are unavailable.
    """

    def __init__(self, matrix_fn, theta, deriv_fn=None, matrix=None):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        K = matrix_fn(theta) if matrix is None else matrix
        super().__init__(K.shape[0], theta)
        self.matrix_fn = matrix_fn
        self.deriv_fn = deriv_fn
        self.K = np.asarray(K, dtype=float)
        self._dK = None

    @classmethod
    def constant(cls, K: np.ndarray) -> "DenseOracle":
        """Theta-independent operator with a single dummy parameter."""
        K = np.asarray(K, dtype=float)
        return cls(lambda th: K, [0.0], lambda th: [np.zeros_like(K)], matrix=K)

    def _apply(self, V):
        return self.K @ V

    def _apply_derivative(self, j, V):
        if self.deriv_fn is None:
            return super()._apply_derivative(j, V)
        if self._dK is None:
            self._dK = [np.asarray(d, dtype=float) for d in self.deriv_fn(self.theta)]
        return self._dK[j] @ V

    def at(self, theta):
        return DenseOracle(self.matrix_fn, theta, self.deriv_fn)


class PermutedOracle(CovarianceOracle):
    """``P K P^T`` for the ordering ``perm`` (reordered position -> original index)."""

    def __init__(self, base: CovarianceOracle, perm):
        super().__init__(base.n, base.theta)
        self.base = base
        self.perm = np.asarray(perm)
        self.counts = base.counts  # share counters with the wrapped operator
        self.param_names = base.param_names

    def _scatter(self, V):
        W = np.empty_like(V)
        W[self.perm] = V
        return W

    def apply(self, V):
        V, vec = self._as_block(V)
        out = self.base.apply(self._scatter(V))[self.perm]
        return out[:, 0] if vec else out

    def apply_derivative(self, j, V):
        V, vec = self._as_block(V)
        out = self.base.apply_derivative(j, self._scatter(V))[self.perm]
        return out[:, 0] if vec else out

    def at(self, theta):
        return PermutedOracle(self.base.at(theta), self.perm)

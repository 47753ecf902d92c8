"""Gaussian log-likelihood, score and Fisher information with HODLR or dense algebra, and MLE fitting."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.stats import norm

from .hodlr import LEFT, DENSE_LIMIT, HodlrFactorization, HodlrMatrix, NotPositiveDefiniteError, factorize
from .oracle import CovarianceOracle, PermutedOracle
from .partition import ClusterTree, build_kd_ordering
from .sketch import SketchPlan, build_hodlr, build_hodlr_with_derivatives
from .trace import solve_multiply, trace_of_product, trace_product_rep

LOG2PI = np.log(2 * np.pi)
DENSE_ORACLE_LIMIT = 2**14


# ---------------------------------------------------------------------------
# HODLR-based quantities
# ---------------------------------------------------------------------------

def _resid(y, ybar):
    y = np.asarray(y, dtype=float)
    return y if ybar is None else y - np.asarray(ybar, dtype=float)


def log_likelihood(F: HodlrFactorization, y, ybar=None) -> float:
    r = _resid(y, ybar)
    n = r.size
    return float(-0.5 * n * LOG2PI - 0.5 * F.logdet() - 0.5 * r @ F.solve(r))


def score(F: HodlrFactorization, H_deriv, y, ybar=None, products=None) -> np.ndarray:
    """``-tr(K^{-1} K_j)/2 + a^T K_j a / 2`` with ``a = K^{-1}(y - ybar)``."""
    r = _resid(y, ybar)
    alpha = F.solve(r)
    products = [solve_multiply(F, Hj) for Hj in H_deriv] if products is None else products
    out = np.empty(len(H_deriv))
    for j, (Hj, P) in enumerate(zip(H_deriv, products)):
        out[j] = -0.5 * trace_product_rep(P) + 0.5 * alpha @ Hj.matvec(alpha)
    return out


def fisher_information(F: HodlrFactorization, H_deriv, products=None) -> np.ndarray:
    """``I_ij = tr(K^{-1} K_i K^{-1} K_j) / 2``, symmetrized."""
    products = [solve_multiply(F, Hj) for Hj in H_deriv] if products is None else products
    p = len(products)
    I = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            I[i, j] = 0.5 * trace_of_product(products[i], products[j])
            I[j, i] = 0.5 * trace_of_product(products[j], products[i]) if i != j else I[i, j]
    return 0.5 * (I + I.T)


def hutchinson_trace(F: HodlrFactorization, B: HodlrMatrix, N: int, seed: int = 0) -> tuple[float, float]:
    """Rademacher estimate of ``tr(A^{-1} B)`` with its standard error."""
    if N < 2:
        raise ValueError("need at least 2 probes")
    rng = np.random.default_rng(np.uint64(seed))
    Z = (2.0 * rng.integers(0, 2, size=(N, B.n)) - 1.0).T  # probe i is row i of the draw
    vals = np.sum(Z * F.solve(B.matvec(Z)), axis=0)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(N))


# ---------------------------------------------------------------------------
# dense reference quantities
# ---------------------------------------------------------------------------

def _check_dense(n: int, limit: int = DENSE_ORACLE_LIMIT):
    if n > limit:
        raise MemoryError(f"dense path refuses n={n} > {limit}")


def dense_log_likelihood(K: np.ndarray, y, ybar=None) -> float:
    r = _resid(y, ybar)
    c = sla.cho_factor(K, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    return float(-0.5 * r.size * LOG2PI - 0.5 * logdet - 0.5 * r @ sla.cho_solve(c, r))


def dense_score(K: np.ndarray, dK, y, ybar=None) -> np.ndarray:
    r = _resid(y, ybar)
    c = sla.cho_factor(K, lower=True)
    a = sla.cho_solve(c, r)
    return np.array([-0.5 * np.trace(sla.cho_solve(c, D)) + 0.5 * a @ D @ a for D in dK])


def dense_fisher(K: np.ndarray, dK) -> np.ndarray:
    c = sla.cho_factor(K, lower=True)
    W = [sla.cho_solve(c, D) for D in dK]
    p = len(W)
    I = np.empty((p, p))
    for i in range(p):
        for j in range(p):
            I[i, j] = 0.5 * np.sum(W[i] * W[j].T)
    return 0.5 * (I + I.T)


# ---------------------------------------------------------------------------
# intervals and metrics
# ---------------------------------------------------------------------------

@dataclass
class ConfidenceIntervals:
    estimate: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    half_width: np.ndarray
    valid: bool
    message: str = ""


def confidence_intervals(theta_hat, I, level: float = 0.95) -> ConfidenceIntervals:
    theta_hat = np.asarray(theta_hat, dtype=float)
    I = np.asarray(I, dtype=float)
    p = theta_hat.size
    nan = np.full(p, np.nan)
    if I.shape != (p, p) or not np.all(np.isfinite(I)):
        return ConfidenceIntervals(theta_hat, nan, nan, nan, False, "Fisher matrix malformed or non-finite")
    Is = 0.5 * (I + I.T)
    if np.linalg.eigvalsh(Is).min() <= 0:
        return ConfidenceIntervals(theta_hat, nan, nan, nan, False, "Fisher matrix is not positive definite")
    z = norm.ppf(0.5 + level / 2)
    half = z * np.sqrt(np.diag(np.linalg.inv(Is)))
    return ConfidenceIntervals(theta_hat, theta_hat - half, theta_hat + half, half, True)


def accuracy_metrics(exact: dict, approx: dict) -> dict:
    """Relative precisions of L, S, I and the scaling-free ``eta_g``, ``eta_I``.

    ``tr((I - It)(I^{-1} - It^{-1}))`` is never positive for SPD pairs, so
    ``eta_I`` is the square root of its magnitude.
    """
    L, Lt = exact["L"], approx["L"]
    S, St = np.asarray(exact["S"]), np.asarray(approx["S"])
    I, It = np.asarray(exact["I"]), np.asarray(approx["I"])
    out = {"eps_L": abs(L - Lt) / abs(L)}
    nS = np.linalg.norm(S)
    out["eps_S"] = np.linalg.norm(S - St) / nS if nS > 0 else np.nan
    out["eps_I"] = np.linalg.norm(I - It) / np.linalg.norm(I)
    Iinv = np.linalg.inv(I)
    d = S - St
    out["eta_g"] = float(np.sqrt(max(d @ Iinv @ d, 0.0)))
    out["eta_I"] = float(np.sqrt(abs(np.trace((I - It) @ (Iinv - np.linalg.inv(It))))))
    return {k: float(v) for k, v in out.items()}


# ---------------------------------------------------------------------------
# problems and evaluations
# ---------------------------------------------------------------------------

@dataclass
class HodlrConfig:
    rank: int = 128
    leaf_min: int = 256
    leaf_max: int = 512
    sketch_seed: int = 0


TRANSFORMS = {
    "identity": (lambda u: u, lambda t: t, lambda u: np.ones_like(u)),
    "exp": (np.exp, np.log, np.exp),
    "tanh": (np.tanh, np.arctanh, lambda u: 1.0 - np.tanh(u) ** 2),
}


@dataclass
class GpProblem:
    """Data, mean, covariance oracle and approximation settings.

    ``points`` (one row per entry of ``y``) drive the KD ordering.
    ``method`` is ``"hodlr"`` or ``"dense"``.
    """

    oracle: CovarianceOracle
    y: np.ndarray
    points: np.ndarray
    mean: np.ndarray | None = None
    hodlr: HodlrConfig = field(default_factory=HodlrConfig)
    transforms: tuple = ()
    method: str = "hodlr"
    tree: ClusterTree | None = None
    plan: SketchPlan | None = field(default=None, repr=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        n = self.oracle.n
        if self.y.shape != (n,):
            raise ValueError(f"data length {self.y.shape} does not match oracle dimension {n}")
        if self.mean is None:
            self.mean = np.zeros(n)
        self.mean = np.asarray(self.mean, dtype=float)
        if self.mean.shape != (n,):
            raise ValueError("mean length does not match oracle dimension")
        if self.oracle.p < 1:
            raise ValueError("need at least one parameter")
        if not self.transforms:
            self.transforms = ("identity",) * self.oracle.p
        if len(self.transforms) != self.oracle.p:
            raise ValueError("one transform per parameter")
        if self.method not in ("hodlr", "dense"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "hodlr" and self.tree is None:
            _, self.tree = build_kd_ordering(self.points, self.hodlr.leaf_min, self.hodlr.leaf_max)
        if self.method == "hodlr" and self.plan is None:
            self.plan = SketchPlan.create(self.tree, self.hodlr.rank, self.hodlr.sketch_seed)

    @property
    def n(self) -> int:
        return self.oracle.n

    @property
    def p(self) -> int:
        return self.oracle.p

    def to_natural(self, u):
        return np.array([TRANSFORMS[t][0](v) for t, v in zip(self.transforms, u)])

    def to_unconstrained(self, theta):
        return np.array([TRANSFORMS[t][1](v) for t, v in zip(self.transforms, theta)])

    def jacobian(self, u):
        return np.array([TRANSFORMS[t][2](v) for t, v in zip(self.transforms, u)])


@dataclass
class Evaluation:
    theta: np.ndarray
    loglik: float
    score: np.ndarray | None = None
    fisher: np.ndarray | None = None
    times: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    H: HodlrMatrix | None = field(default=None, repr=False)
    H_deriv: list | None = field(default=None, repr=False)
    F: HodlrFactorization | None = field(default=None, repr=False)
    products: list | None = field(default=None, repr=False)


def evaluate(problem: GpProblem, theta, want_score: bool = True, want_fisher: bool = False) -> Evaluation:
    """``L``, and optionally ``S`` and ``I``, at ``theta`` with the problem's method."""
    theta = np.asarray(theta, dtype=float)
    if problem.method == "dense":
        return _evaluate_dense(problem, theta, want_score, want_fisher)
    tree, k = problem.tree, problem.hodlr.rank
    base = problem.oracle.at(theta)
    orc = PermutedOracle(base, tree.perm)
    r = tree.to_reordered(problem.y - problem.mean)
    times = {}
    t0 = time.perf_counter()
    if want_score or want_fisher:
        H, Hd = build_hodlr_with_derivatives(orc, tree, k, problem.plan)
    else:
        H, Hd = build_hodlr(orc, tree, k, problem.plan), None
    times["build"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    F = factorize(H, LEFT)
    times["factorize"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    L = log_likelihood(F, r)
    times["loglik"] = time.perf_counter() - t0
    S = I = None
    products = None
    if want_score or want_fisher:
        t0 = time.perf_counter()
        products = [solve_multiply(F, Hj) for Hj in Hd]
        times["products"] = time.perf_counter() - t0
    if want_score:
        t0 = time.perf_counter()
        S = score(F, Hd, r, products=products)
        times["score"] = time.perf_counter() - t0
    if want_fisher:
        t0 = time.perf_counter()
        I = fisher_information(F, Hd, products=products)
        times["fisher"] = time.perf_counter() - t0
    return Evaluation(theta, L, S, I, times, orc.counts.as_dict(), H, Hd, F, products)


def _evaluate_dense(problem, theta, want_score, want_fisher) -> Evaluation:
    _check_dense(problem.n)
    orc = problem.oracle.at(theta)
    t0 = time.perf_counter()
    K = orc.dense()
    times = {"assemble": time.perf_counter() - t0}
    L = dense_log_likelihood(K, problem.y, problem.mean)
    S = I = None
    if want_score or want_fisher:
        dK = [orc.dense_derivative(j) for j in range(orc.p)]
        if want_score:
            S = dense_score(K, dK, problem.y, problem.mean)
        if want_fisher:
            I = dense_fisher(K, dK)
    times["total"] = time.perf_counter() - t0
    return Evaluation(theta, L, S, I, times, orc.counts.as_dict())


# ---------------------------------------------------------------------------
# BFGS
# ---------------------------------------------------------------------------

@dataclass
class FitOptions:
    max_iter: int = 100
    rel_tol: float = 1e-6
    max_halvings: int = 20
    max_step: float = 1.0


@dataclass
class FitReport:
    theta_hat: np.ndarray
    status: str
    iterations: int
    history: list
    fisher: np.ndarray | None
    ci: ConfidenceIntervals | None
    counts: dict
    times: dict
    message: str = ""
    param_names: tuple = ()

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_json(self) -> dict:
        ci = self.ci
        return {
            "status": self.status,
            "message": self.message,
            "iterations": self.iterations,
            "param_names": list(self.param_names),
            "theta_hat": _floats(self.theta_hat),
            "fisher": None if self.fisher is None else [_floats(r) for r in self.fisher],
            "ci": None if ci is None else {
                "valid": ci.valid, "message": ci.message,
                "lo": _floats(ci.lo), "hi": _floats(ci.hi), "half_width": _floats(ci.half_width),
            },
            "counts": self.counts,
            "times": self.times,
            "history": [{k: (_floats(v) if isinstance(v, np.ndarray) else v) for k, v in h.items()} for h in self.history],
        }


def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


_EVAL_ERRORS = (np.linalg.LinAlgError, NotPositiveDefiniteError, FloatingPointError, ValueError)


def fit_mle(problem: GpProblem, theta0, options: FitOptions | None = None) -> FitReport:
    """Quasi-Newton maximization of the log-likelihood in unconstrained coordinates.

    Failed evaluations (non-SPD approximations, out-of-domain parameters) and
    insufficient decrease both halve the step, up to ``max_halvings`` times.
    """
    opt = FitOptions() if options is None else options
    t_start = time.perf_counter()
    counts = {"evaluations": 0, "apply_columns": 0, "deriv_columns": 0}
    history = []

    def objective(u):
        theta = problem.to_natural(u)
        ev = evaluate(problem, theta, want_score=True)
        counts["evaluations"] += 1
        counts["apply_columns"] += ev.counts.get("apply_columns", 0)
        counts["deriv_columns"] += ev.counts.get("deriv_columns", 0)
        if not np.isfinite(ev.loglik) or not np.all(np.isfinite(ev.score)):
            raise FloatingPointError("non-finite likelihood or score")
        return -ev.loglik, -ev.score * problem.jacobian(u), ev

    u = problem.to_unconstrained(np.asarray(theta0, dtype=float))
    try:
        f, g, ev = objective(u)
    except _EVAL_ERRORS as exc:
        return FitReport(np.asarray(theta0, float), "failed", 0, history, None, None, counts,
                         {"total": time.perf_counter() - t_start}, f"initial evaluation failed: {exc}",
                         problem.oracle.param_names)
    history.append({"iter": 0, "loglik": -f, "score_norm": float(np.linalg.norm(ev.score)), "theta": ev.theta})
    Hinv = np.eye(u.size)
    status, message = "max_iter", ""
    small_df = False
    it = 0
    for it in range(1, opt.max_iter + 1):
        if np.max(np.abs(g)) <= opt.rel_tol:
            status, message, it = "converged", "gradient below tolerance", it - 1
            break
        d = -Hinv @ g
        if d @ g >= 0:  # not a descent direction: reset curvature
            Hinv = np.eye(u.size)
            d = -g
        scale = min(1.0, opt.max_step / max(np.max(np.abs(d)), 1e-300))
        step = scale
        accepted = False
        for _ in range(opt.max_halvings + 1):
            u_new = u + step * d
            try:
                f_new, g_new, ev_new = objective(u_new)
                if f_new <= f + 1e-4 * step * (g @ d):
                    accepted = True
                    break
            except _EVAL_ERRORS:
                pass
            step *= 0.5
        if not accepted:
            if small_df:
                status, message = "converged", "step halving stalled after a negligible objective change"
            else:
                status, message = "failed", "line search failed after step halving"
            it -= 1
            break
        s = u_new - u
        yv = g_new - g
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if it == 1:
                Hinv = (sy / (yv @ yv)) * np.eye(u.size)
            rho = 1.0 / sy
            V = np.eye(u.size) - rho * np.outer(s, yv)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        theta_old = problem.to_natural(u)
        df = abs(f - f_new)
        u, f, g, ev = u_new, f_new, g_new, ev_new
        history.append({"iter": it, "loglik": -f, "score_norm": float(np.linalg.norm(ev.score)), "theta": ev.theta})
        # predicted remaining change in natural parameters, relative
        pred = problem.to_natural(u - Hinv @ g) - ev.theta
        dtheta = np.max(np.abs(ev.theta - theta_old) / np.maximum(np.abs(ev.theta), 1e-12))
        dpred = np.max(np.abs(pred) / np.maximum(np.abs(ev.theta), 1e-12))
        was_small = small_df
        small_df = df < opt.rel_tol * max(1.0, abs(f))
        if np.max(np.abs(g)) <= opt.rel_tol:
            status, message = "converged", "gradient below tolerance"
            break
        if it >= 2 and max(dtheta, dpred) < opt.rel_tol:
            status, message = "converged", "relative change of parameters below tolerance"
            break
        # two consecutive negligible decreases, so one lucky step does not stop the search
        if small_df and was_small:
            status, message = "converged", "relative change of objective below tolerance"
            break
    theta_hat = problem.to_natural(u)
    times = {"optimize": time.perf_counter() - t_start}
    fisher = ci = None
    t0 = time.perf_counter()
    try:
        if ev.F is not None and ev.products is not None:
            fisher = fisher_information(ev.F, ev.H_deriv, ev.products)
        else:
            fisher = evaluate(problem, theta_hat, want_score=False, want_fisher=True).fisher
        ci = confidence_intervals(theta_hat, fisher)
    except _EVAL_ERRORS as exc:
        message = (message + "; " if message else "") + f"Fisher evaluation failed: {exc}"
    times["fisher"] = time.perf_counter() - t0
    times["total"] = time.perf_counter() - t_start
    return FitReport(theta_hat, status, it, history, fisher, ci, counts, times, message, problem.oracle.param_names)


def dense_limit_ok(n: int) -> bool:
    return n <= DENSE_LIMIT

"""HODLR approximations of covariance matrices and their parameter derivatives for Gaussian-process MLE."""

from .hodlr import (
    LEFT, RIGHT, HodlrFactorization, HodlrMatrix, LowRankBlock, NotPositiveDefiniteError, SingularBlockError,
    factorize, load_hodlr, logdet, random_hodlr, save_hodlr, solve,
)
from .mle import (
    FitOptions, FitReport, GpProblem, HodlrConfig, accuracy_metrics, confidence_intervals, evaluate, fisher_information,
    fit_mle, hutchinson_trace, log_likelihood, score,
)
from .oracle import CallCounts, CovarianceOracle, DenseOracle, PermutedOracle
from .partition import ClusterTree, PointSet, build_kd_ordering, choose_depth
from .sketch import SketchPlan, build_hodlr, build_hodlr_with_derivatives
from .trace import ProductRep, multiply, solve_multiply, trace_pair, trace_quad, trace_solve

__version__ = "0.1.0"

__all__ = [
    "LEFT", "RIGHT", "HodlrFactorization", "HodlrMatrix", "LowRankBlock", "NotPositiveDefiniteError",
    "SingularBlockError", "factorize", "load_hodlr", "logdet", "random_hodlr", "save_hodlr", "solve",
    "FitOptions", "FitReport", "GpProblem", "HodlrConfig", "accuracy_metrics", "confidence_intervals", "evaluate",
    "fisher_information", "fit_mle", "hutchinson_trace", "log_likelihood", "score",
    "CallCounts", "CovarianceOracle", "DenseOracle", "PermutedOracle",
    "ClusterTree", "PointSet", "build_kd_ordering", "choose_depth",
    "SketchPlan", "build_hodlr", "build_hodlr_with_derivatives",
    "ProductRep", "multiply", "solve_multiply", "trace_pair", "trace_quad", "trace_solve",
]

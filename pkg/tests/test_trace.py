import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hodlr_gp.hodlr import LEFT, RIGHT, HodlrMatrix, LowRankBlock, factorize, random_hodlr
from hodlr_gp.partition import ClusterTree, build_kd_ordering
from hodlr_gp.trace import (
    ProductRep, multiply, solve_multiply, trace_of_product, trace_pair, trace_product_rep, trace_quad,
    trace_solve,
)

from conftest import rel, spd_hodlr


def _zero_corrections(P: ProductRep):
    return all(not np.any(u @ v.T) for Ul, Vl in zip(P.U, P.V) for u, v in zip(Ul, Vl))


def test_multiply_by_identity(tree512):
    B = random_hodlr(tree512, 6, 1, spd=False)
    P = multiply(factorize(HodlrMatrix.identity(tree512), RIGHT), B)
    assert _zero_corrections(P)
    assert np.allclose(P.base.densify(), B.densify(), rtol=0, atol=1e-14)
    P = solve_multiply(factorize(HodlrMatrix.identity(tree512), LEFT), B)
    assert _zero_corrections(P)
    assert np.allclose(P.densify(), B.densify(), rtol=0, atol=1e-14)


def test_multiply_dense_oracle(tree512):
    A = random_hodlr(tree512, 8, 2, spd=True)
    B = random_hodlr(tree512, 8, 3, spd=False, symmetric=False)
    P = multiply(factorize(A, RIGHT), B)
    assert rel(P.densify(), A.densify() @ B.densify()) <= 1e-10
    assert max(P.correction_widths()) <= 2 * 8
    for i, lv in enumerate(P.U, start=1):
        assert [u.shape[0] for u in lv] == list(np.diff(tree512.ranges(i - 1), axis=1)[:, 0])
    v = np.random.default_rng(0).normal(size=512)
    assert np.allclose(P.matvec(v), P.densify() @ v, atol=1e-10)


def test_multiply_with_identity_operand(tree512):
    A = random_hodlr(tree512, 8, 4, spd=True)
    P = multiply(factorize(A, RIGHT), HodlrMatrix.identity(tree512))
    assert rel(P.densify(), A.densify()) <= 1e-10


def test_solve_multiply_dense_oracle(tree512):
    A = spd_hodlr(tree512, 8, 5)
    B = random_hodlr(tree512, 8, 6, spd=False)
    P = solve_multiply(factorize(A, LEFT), B)
    assert rel(P.densify(), np.linalg.solve(A.densify(), B.densify())) <= 1e-8
    P = solve_multiply(factorize(A, LEFT), A)
    assert np.abs(P.densify() - np.eye(512)).max() <= 1e-8


def test_orientation_checked(tree512):
    A = spd_hodlr(tree512, 4, 0)
    with pytest.raises(ValueError):
        multiply(factorize(A, LEFT), A)
    with pytest.raises(ValueError):
        solve_multiply(factorize(A, RIGHT), A)


def test_tree_mismatch_rejected(tree512):
    A = spd_hodlr(tree512, 4, 0)
    with pytest.raises(ValueError):
        trace_solve(A, HodlrMatrix.identity(ClusterTree.balanced(512, 2)))


def test_trace_product_rep_cases(tree512, rng):
    B = random_hodlr(tree512, 6, 7, spd=False)
    P = multiply(factorize(HodlrMatrix.identity(tree512), RIGHT), B)
    assert trace_product_rep(P) == pytest.approx(np.trace(B.densify()), rel=1e-12)
    assert trace_product_rep(ProductRep(HodlrMatrix.identity(tree512), [], [])) == 512
    # hand-assembled corrections
    U = [[rng.normal(size=(hi - lo, 3)) for lo, hi in tree512.ranges(i)] for i in range(3)]
    V = [[rng.normal(size=(hi - lo, 3)) for lo, hi in tree512.ranges(i)] for i in range(3)]
    P = ProductRep(B, U, V)
    assert trace_product_rep(P) == pytest.approx(np.trace(P.densify()), rel=1e-10)


def test_trace_solve_cases(tree512):
    A = spd_hodlr(tree512, 8, 8)
    assert trace_solve(A, A) == pytest.approx(512, rel=1e-8)
    assert trace_solve(A, A.scaled(3.5)) == pytest.approx(3.5 * 512, rel=1e-8)
    B = random_hodlr(tree512, 8, 9, spd=False)
    ref = np.trace(np.linalg.solve(A.densify(), B.densify()))
    assert abs(trace_solve(factorize(A, LEFT), B) - ref) <= 1e-10 * abs(ref) + 1e-10


def test_trace_quad_cases(tree512):
    I = HodlrMatrix.identity(tree512)
    B = random_hodlr(tree512, 8, 10, spd=False)
    D = random_hodlr(tree512, 8, 11, spd=False)
    ref = np.trace(B.densify() @ D.densify())
    assert trace_quad(I, B, I, D) == pytest.approx(ref, rel=1e-10)
    A = spd_hodlr(tree512, 8, 12)
    C = spd_hodlr(tree512, 8, 13)
    assert trace_quad(A, A, C, C) == pytest.approx(512, rel=1e-8)
    ref = np.trace(np.linalg.solve(A.densify(), B.densify()) @ np.linalg.solve(C.densify(), D.densify()))
    for how in ("pairing", "multiply"):
        val = trace_quad(A, B, C, D, first_term=how)
        assert abs(val - ref) <= 1e-8 * abs(ref)
    assert trace_quad(C, D, A, B) == pytest.approx(trace_quad(A, B, C, D), rel=1e-8)


def test_trace_pair_matches_dense(tree512):
    X = random_hodlr(tree512, 5, 14, spd=False, symmetric=False)
    Y = random_hodlr(tree512, 3, 15, spd=False, symmetric=False)
    assert trace_pair(X, Y) == pytest.approx(np.trace(X.densify() @ Y.densify()), rel=1e-11)


def test_width_two_k_derivative_operands(tree512, rng):
    # off-diagonal blocks stored as sums of two rank-k pairs
    A = spd_hodlr(tree512, 4, 16)
    B = random_hodlr(tree512, 4, 17, spd=False)
    upper = [[LowRankBlock(np.hstack([blk.left, rng.normal(size=blk.left.shape)]),
                           np.hstack([blk.right, rng.normal(size=blk.right.shape)])) for blk in lv] for lv in B.upper]
    B2 = HodlrMatrix(tree512, B.leaves, upper)
    ref = np.trace(np.linalg.solve(A.densify(), B2.densify()) @ np.linalg.solve(A.densify(), B.densify()))
    assert trace_quad(A, B2, A, B) == pytest.approx(ref, rel=1e-8)


def test_ragged_tree_exactness():
    x = np.random.default_rng(3).uniform(size=(700, 2))
    _, tree = build_kd_ordering(x, 64, 128)
    A = spd_hodlr(tree, 6, 18)
    B = random_hodlr(tree, 6, 19, spd=False)
    Ad = A.densify()
    S = np.linalg.solve(Ad, B.densify())
    assert trace_solve(A, B) == pytest.approx(np.trace(S), rel=1e-8)
    assert trace_quad(A, B, A, B) == pytest.approx(np.trace(S @ S), rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), depth=st.integers(1, 4), k=st.integers(1, 8))
def test_traces_exact_property(seed, depth, k):
    tree = ClusterTree.balanced(32 * 2**depth, depth)
    A = spd_hodlr(tree, k, seed)
    C = spd_hodlr(tree, k, seed + 1)
    B = random_hodlr(tree, k, seed + 2, spd=False)
    D = random_hodlr(tree, k, seed + 3, spd=False)
    SA = np.linalg.solve(A.densify(), B.densify())
    SC = np.linalg.solve(C.densify(), D.densify())
    ref1, ref2 = np.trace(SA), np.trace(SA @ SC)
    assert abs(trace_solve(A, B) - ref1) <= 1e-8 * max(abs(ref1), 1.0)
    assert abs(trace_quad(A, B, C, D) - ref2) <= 1e-8 * max(abs(ref2), 1.0)


def test_trace_of_product_reuses_reps(tree512):
    A = spd_hodlr(tree512, 6, 20)
    F = factorize(A, LEFT)
    Bs = [random_hodlr(tree512, 6, s, spd=False) for s in (21, 22)]
    P = [solve_multiply(F, B) for B in Bs]
    assert trace_of_product(P[0], P[1]) == pytest.approx(trace_quad(A, Bs[0], A, Bs[1]), rel=1e-12)

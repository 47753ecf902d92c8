import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hodlr_gp.hodlr import HodlrMatrix, random_hodlr
from hodlr_gp.models import MaternObsOracle
from hodlr_gp.oracle import DenseOracle, PermutedOracle
from hodlr_gp.partition import ClusterTree, build_kd_ordering
from hodlr_gp.sketch import (
    IllConditionedWarning, SketchPlan, build_hodlr, build_hodlr_with_derivatives, diff_qr, pivoted_qr,
    randomized_range,
)

from conftest import rel


def _qr_pos(B):
    Q, R = np.linalg.qr(B)
    s = np.sign(np.diag(R))
    return Q * s, s[:, None] * R


# -- range finder ------------------------------------------------------------

def test_orthonormal_input_returned_up_to_sign_and_order(rng):
    Y, _ = np.linalg.qr(rng.normal(size=(40, 5)))
    Q = randomized_range(Y)
    assert np.allclose(Q.T @ Q, np.eye(5), atol=1e-12)
    M = np.abs(Y.T @ Q)
    assert np.allclose(np.sort(M, axis=1)[:, -1], 1.0, atol=1e-12)


def test_exact_rank_range_captured(rng):
    B = rng.normal(size=(60, 6)) @ rng.normal(size=(6, 50))
    Q = randomized_range(B @ rng.normal(size=(50, 6)))
    assert np.linalg.norm(B - Q @ (Q.T @ B)) / np.linalg.norm(B) <= 1e-12


def test_zero_sample_gives_canonical_columns():
    Q = randomized_range(np.zeros((7, 3)))
    assert np.array_equal(Q, np.eye(7)[:, :3])


def test_rank_deficient_sample_is_completed(rng):
    Y = rng.normal(size=(30, 2)) @ rng.normal(size=(2, 5))
    Q, _, _, r, fill = pivoted_qr(Y)
    assert r == 2 and fill.size == 3
    assert np.allclose(Q.T @ Q, np.eye(5), atol=1e-12)


def test_pivoted_qr_positive_diagonal(rng):
    Y = rng.normal(size=(20, 4))
    Q, R, piv, r, _ = pivoted_qr(Y)
    assert r == 4 and np.all(np.diag(R) > 0)
    assert np.allclose(Q @ R, Y[:, piv], atol=1e-13)


# -- differentiated QR -------------------------------------------------------

def test_diff_qr_zero_direction(rng):
    B = rng.normal(size=(10, 3))
    Q, R = _qr_pos(B)
    dQ, dR = diff_qr(B, np.zeros_like(B), Q, R)
    assert not dQ.any() and not dR.any()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_diff_qr_matches_fd_and_is_skew(seed):
    g = np.random.default_rng(seed)
    B, dB = g.normal(size=(2, 10, 3))
    Q, R = _qr_pos(B)
    if np.linalg.cond(R) > 1e6:
        return
    dQ, dR = diff_qr(B, dB, Q, R)
    h = 1e-6
    Qp, Rp = _qr_pos(B + h * dB)
    Qm, Rm = _qr_pos(B - h * dB)
    assert rel(dQ, (Qp - Qm) / (2 * h)) <= 1e-5
    assert rel(dR, (Rp - Rm) / (2 * h)) <= 1e-5
    assert np.abs(Q.T @ dQ + dQ.T @ Q).max() <= 1e-10
    assert np.allclose(np.tril(dR, -1), 0.0)


def test_diff_qr_warns_when_ill_conditioned(rng):
    B = rng.normal(size=(10, 3))
    B[:, 2] = B[:, 1] + 1e-14 * rng.normal(size=10)
    Q, R = _qr_pos(B)
    with pytest.warns(IllConditionedWarning):
        diff_qr(B, rng.normal(size=B.shape), Q, R)


def test_completed_basis_derivative_matches_fd(rng):
    # rank-deficient sample: the canonical completion must be differentiated too
    from hodlr_gp.sketch import _diff_range
    A, dA = rng.normal(size=(2, 30, 3))
    C = rng.normal(size=(3, 5))
    Y, dY = A @ C, dA @ C
    qr = pivoted_qr(Y)
    assert qr[3] == 3
    dQ = _diff_range(Y, dY, *qr)
    h = 1e-6

    def fixed(Yh):
        Q, R, piv, r, fill = pivoted_qr(Yh)
        assert r == 3 and np.array_equal(fill, qr[4]) and np.array_equal(piv[:r], qr[2][:r])
        return Q

    fd = (fixed(Y + h * dY) - fixed(Y - h * dY)) / (2 * h)
    assert rel(dQ, fd) <= 1e-6


# -- peeling ------------------------------------------------------------------

def _exact_oracle(n, depth, k, seed):
    tree = ClusterTree.balanced(n, depth)
    K = random_hodlr(tree, k, np.random.default_rng(seed)).densify()
    return tree, K, DenseOracle.constant(K)


def test_exact_hodlr_recovered():
    tree, K, orc = _exact_oracle(1024, 3, 8, 1)
    H = build_hodlr(orc, tree, 8, SketchPlan.create(tree, 8, 42))
    assert rel(H.densify(), K) <= 1e-10


def test_oracle_column_count_n1024_k32():
    tree, K, orc = _exact_oracle(1024, 2, 32, 2)
    build_hodlr(orc, tree, 32, SketchPlan.create(tree, 32))
    assert orc.counts.apply_columns == 2 * 32 * 2 + 256 == 384


def test_derivative_column_budget():
    tree = ClusterTree.balanced(256, 2)
    K0 = random_hodlr(tree, 4, np.random.default_rng(0)).densify()
    orc = DenseOracle(lambda th: th[0] * K0 + th[1] ** 2 * np.eye(256), [2.0, 0.5],
                      lambda th: [K0, 2 * th[1] * np.eye(256)])
    k, tau, nl, p = 4, 2, 64, 2
    build_hodlr_with_derivatives(orc, tree, k, SketchPlan.create(tree, k))
    c = orc.counts
    assert c.apply_columns == 2 * k * tau + nl + p * k * tau
    assert c.deriv_columns == p * (2 * k * tau + nl)


def test_block_diagonal_oracle(rng):
    tree = ClusterTree.balanced(256, 2)
    K = np.zeros((256, 256))
    for lo, hi in tree.leaves:
        g = rng.normal(size=(hi - lo, hi - lo))
        K[lo:hi, lo:hi] = g @ g.T
    H = build_hodlr(DenseOracle.constant(K), tree, 4)
    for lv in H.upper:
        for blk in lv:
            assert np.linalg.norm(blk.dense()) <= 1e-10
    for (lo, hi), a in zip(tree.leaves, H.leaves):
        assert np.allclose(a, K[lo:hi, lo:hi], rtol=0, atol=1e-12)


def test_rank_exceeding_block_names_level():
    tree = ClusterTree.balanced(64, 3)
    with pytest.raises(ValueError, match="level 3"):
        build_hodlr(DenseOracle.constant(np.eye(64)), tree, 10)


def test_plan_mismatch_rejected():
    tree = ClusterTree.balanced(64, 2)
    with pytest.raises(ValueError):
        build_hodlr(DenseOracle.constant(np.eye(64)), tree, 4, SketchPlan.create(tree, 5))
    with pytest.raises(ValueError):
        build_hodlr(DenseOracle.constant(np.eye(64)), tree, 4, SketchPlan.create(ClusterTree.balanced(64, 1), 4))


def test_build_is_deterministic():
    tree, K, _ = _exact_oracle(512, 3, 6, 9)
    K = K + 0.01 * np.random.default_rng(1).normal(size=K.shape)
    K = K + K.T
    a = build_hodlr(DenseOracle.constant(K), tree, 6, SketchPlan.create(tree, 6, 123))
    b = build_hodlr(DenseOracle.constant(K), tree, 6, SketchPlan.create(tree, 6, 123))
    assert np.array_equal(a.densify(), b.densify())


def test_theta_independent_derivatives_vanish():
    tree, K, orc = _exact_oracle(256, 2, 4, 3)
    H, Hd = build_hodlr_with_derivatives(orc, tree, 4)
    assert len(Hd) == 1 and np.linalg.norm(Hd[0].densify()) <= 1e-10
    assert np.array_equal(H.densify(), build_hodlr(DenseOracle.constant(K), tree, 4).densify())


def test_linear_model_derivative_exact():
    tree = ClusterTree.balanced(512, 3)
    K0 = random_hodlr(tree, 5, np.random.default_rng(4)).densify()
    orc = DenseOracle(lambda th: th[0] * K0, [1.7], lambda th: [K0])
    H, Hd = build_hodlr_with_derivatives(orc, tree, 5)
    assert rel(H.densify(), 1.7 * K0) <= 1e-10
    assert rel(Hd[0].densify(), K0) <= 1e-10
    assert max(blk.rank for lv in Hd[0].upper for blk in lv) == 10


@pytest.fixture(scope="module")
def matern512():
    pts = np.random.default_rng(0).uniform(-5, 5, (512, 2))
    perm, tree = build_kd_ordering(pts, 64, 128)

    def make(theta):
        return PermutedOracle(MaternObsOracle.on_points(pts, theta, mesh_n=64, nugget=0.1), perm)

    return tree, make


def test_matern_derivatives_against_fd(matern512):
    tree, make = matern512
    theta, h, k = np.array([1.0, 1.0]), 1e-5, 64
    H, Hd = build_hodlr_with_derivatives(make(theta), tree, k, SketchPlan.create(tree, k))
    D = H.densify()
    assert np.linalg.norm(D - D.T) <= 1e-8 * np.linalg.norm(D)
    for j in range(2):
        e = h * np.eye(2)[j]
        fd = (make(theta + e).dense() - make(theta - e).dense()) / (2 * h)
        Dj = Hd[j].densify()
        assert rel(Dj, fd) <= 1e-4
        assert np.linalg.norm(Dj - Dj.T) <= 1e-8 * np.linalg.norm(Dj)


def test_matern_accuracy_improves_with_rank():
    pts = np.random.default_rng(5).uniform(-5, 5, (1024, 2))
    perm, tree = build_kd_ordering(pts, 128, 256)
    orc = PermutedOracle(MaternObsOracle.on_points(pts, [1.0, 1.0], mesh_n=64, nugget=0.1), perm)
    K = orc.dense()
    errs = {k: np.median([rel(build_hodlr(orc, tree, k, SketchPlan.create(tree, k, s)).densify(), K)
                          for s in range(10)]) for k in (32, 64, 128)}
    assert errs[64] <= errs[32] and errs[128] <= errs[64]


def test_full_rank_derivatives_are_exact():
    # rank equal to the block size: the projector is the identity, so derivative blocks are exact
    x = np.linspace(0, 1, 128)
    D2 = np.subtract.outer(x, x) ** 2
    orc = DenseOracle(lambda th: np.exp(-D2 / th[0]) + 0.1 * np.eye(128), [0.3],
                      lambda th: [D2 / th[0] ** 2 * np.exp(-D2 / th[0])])
    tree = ClusterTree.balanced(128, 1)
    H, Hd = build_hodlr_with_derivatives(orc, tree, 64)
    assert rel(H.densify(), orc.K) <= 1e-10
    assert rel(Hd[0].densify(), orc.deriv_fn([0.3])[0]) <= 1e-10

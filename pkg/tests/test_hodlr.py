import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hodlr_gp.hodlr import (
    LEFT, RIGHT, HodlrMatrix, LowRankBlock, NotPositiveDefiniteError, SingularBlockError, factorize, flops,
    load_hodlr, random_hodlr, save_hodlr,
)
from hodlr_gp.partition import ClusterTree

from conftest import rel, spd_hodlr


def test_identity_matvec_solve_logdet(rng):
    tree = ClusterTree.balanced(64, 2)
    I = HodlrMatrix.identity(tree)
    v = rng.normal(size=64)
    assert np.array_equal(I.matvec(v), v)
    F = factorize(I)
    assert np.allclose(F.solve(v), v, rtol=0, atol=1e-15)
    assert F.logdet() == 0.0


def test_identity_densify_small():
    tree = ClusterTree.balanced(4, 1)
    assert np.array_equal(HodlrMatrix.identity(tree).densify(), np.eye(4))


def test_full_rank_roundtrip_is_lossless(rng):
    K = rng.normal(size=(8, 8))
    tree = ClusterTree.balanced(8, 2)
    H = HodlrMatrix.from_dense(K, tree, symmetric=False)
    assert np.allclose(H.densify(), K, rtol=0, atol=1e-14)


def test_matvec_matches_dense_and_is_linear(tree512, rng):
    H = random_hodlr(tree512, 8, rng, spd=False)
    D = H.densify()
    u, v = rng.normal(size=(2, 512))
    assert np.linalg.norm(H.matvec(v) - D @ v) / np.linalg.norm(v) <= 1e-12
    a, b = 1.7, -0.3
    lhs = H.matvec(a * u + b * v)
    assert np.linalg.norm(lhs - (a * H.matvec(u) + b * H.matvec(v))) <= 1e-12 * np.linalg.norm(lhs)
    V = rng.normal(size=(512, 3))
    assert np.allclose(H.matvec(V)[:, 1], H.matvec(V[:, 1]), rtol=0, atol=1e-13)


def test_nonsymmetric_matvec_and_transpose(tree512, rng):
    H = random_hodlr(tree512, 4, rng, spd=False, symmetric=False)
    D = H.densify()
    v = rng.normal(size=512)
    assert np.allclose(H.matvec(v), D @ v, rtol=0, atol=1e-12)
    assert np.allclose(H.rmatvec(v), D.T @ v, rtol=0, atol=1e-12)
    assert np.allclose(H.transpose().densify(), D.T, rtol=0, atol=1e-14)


def test_matvec_dimension_error(tree512):
    with pytest.raises(ValueError):
        HodlrMatrix.identity(tree512).matvec(np.ones(3))


def test_block_diagonal_factorization_has_identity_levels(rng):
    tree = ClusterTree.balanced(128, 2)
    leaves = []
    for m in tree.leaf_sizes:
        g = rng.normal(size=(m, m))
        leaves.append(g @ g.T + m * np.eye(m))
    H = HodlrMatrix(tree, leaves, HodlrMatrix.identity(tree).upper)
    for orient in (RIGHT, LEFT):
        F = factorize(H, orient)
        for lv in F.levels:
            for blk in lv:
                assert np.abs(blk.X @ blk.Y.T).max() == 0.0
        assert rel(F.densify(), H.densify()) <= 1e-14


@pytest.mark.parametrize("orient", [RIGHT, LEFT])
def test_factor_product_reconstructs(tree512, orient):
    H = spd_hodlr(tree512, 8, 11)
    F = factorize(H, orient)
    assert rel(F.densify(), H.densify()) <= 1e-10
    # level i has 2**(i-1) blocks over depth i-1 node ranges
    for i, lv in enumerate(F.levels, start=1):
        assert [(b.lo, b.hi) for b in lv] == [tuple(r) for r in tree512.ranges(i - 1)]


def test_right_and_left_agree(tree512):
    H = spd_hodlr(tree512, 8, 3)
    assert rel(factorize(H, LEFT).densify(), factorize(H, RIGHT).densify()) <= 1e-10


def test_solve_roundtrip_and_dense_oracle(tree512, rng):
    H = spd_hodlr(tree512, 8, 5)
    F = factorize(H)
    x = rng.normal(size=512)
    assert rel(F.solve(H.matvec(x)), x) <= 1e-8
    B = rng.normal(size=(512, 4))
    ref = np.linalg.solve(H.densify(), B)
    assert rel(F.solve(B), ref) <= 1e-8
    assert rel(factorize(H, LEFT).solve(B), ref) <= 1e-8


def test_logdet_two_level_n1024():
    tree = ClusterTree.balanced(1024, 2)
    H = spd_hodlr(tree, 8, 7)
    L = np.linalg.cholesky(H.densify())
    ref = 2 * np.log(np.diag(L)).sum()
    for orient in (RIGHT, LEFT):
        assert abs(factorize(H, orient).logdet() - ref) / abs(ref) <= 1e-10


def test_logdet_diagonal_scaled_identity():
    tree = ClusterTree.balanced(256, 3)
    c = 2.5
    H = HodlrMatrix.identity(tree).scaled(c)
    assert factorize(H).logdet() == pytest.approx(256 * np.log(c), rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), depth=st.integers(1, 4), k=st.integers(1, 12))
def test_logdet_and_solve_property(seed, depth, k):
    tree = ClusterTree.balanced(32 * 2**depth, depth)
    H = spd_hodlr(tree, k, seed)
    D = H.densify()
    F = factorize(H, LEFT if seed % 2 else RIGHT)
    ref = np.linalg.slogdet(D)[1]
    assert abs(F.logdet() - ref) <= 1e-8 * abs(ref)
    x = np.random.default_rng(seed).normal(size=tree.n)
    assert rel(F.solve(D @ x), x) <= 1e-8


def test_singular_leaf_reports_index(rng):
    tree = ClusterTree.balanced(64, 2)
    H = spd_hodlr(tree, 2, 1)
    leaves = list(H.leaves)
    leaves[2] = np.zeros_like(leaves[2])
    bad = HodlrMatrix(tree, leaves, H.upper)
    with pytest.warns(Warning), pytest.raises(SingularBlockError, match="2"):
        factorize(bad)


def test_indefinite_logdet_signals_loss_of_pd():
    tree = ClusterTree.balanced(64, 1)
    H = HodlrMatrix.identity(tree)
    leaves = [a.copy() for a in H.leaves]
    leaves[0][0, 0] = -1.0
    F = factorize(HodlrMatrix(tree, leaves, H.upper))
    sign, _ = F.slogdet()
    assert sign < 0
    with pytest.raises(NotPositiveDefiniteError):
        F.logdet()


def test_densify_guard():
    tree = ClusterTree.balanced(64, 1)
    with pytest.raises(MemoryError):
        HodlrMatrix.identity(tree).densify(limit=32)


def test_shape_mismatch_rejected(rng):
    tree = ClusterTree.balanced(64, 1)
    up = [[LowRankBlock(rng.normal(size=(31, 2)), rng.normal(size=(32, 2)))]]
    with pytest.raises(ValueError):
        HodlrMatrix(tree, [np.eye(32), np.eye(32)], up)


def test_save_load_roundtrip(tmp_path, rng):
    tree = ClusterTree.balanced(128, 2)
    for sym in (True, False):
        H = random_hodlr(tree, 3, rng, spd=sym, symmetric=sym)
        save_hodlr(H, tmp_path / str(sym))
        G = load_hodlr(tmp_path / str(sym))
        assert G.symmetric == H.symmetric
        assert np.array_equal(G.densify(), H.densify())
    raw = np.fromfile(tmp_path / "True" / "leaf_0.bin", dtype="<f8")
    assert raw.size == 32 * 32


def test_matvec_flops_scale_linearly():
    k, counts = 8, []
    for r in range(9, 14):
        n = 2**r
        tree = ClusterTree.balanced(n, r - 6)
        H = random_hodlr(tree, k, np.random.default_rng(r), spd=False)
        flops.reset()
        flops.enabled = True
        try:
            H.matvec(np.ones(n))
        finally:
            flops.enabled = False
        counts.append(flops.count / (n * k * tree.depth))
    assert max(counts) <= 4 * 64 / k + 4

import warnings

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from hodlr_gp.models import (
    AdrModel, MaternObsOracle, MaternSpde, MaternSpdeParams, WindModel, assemble_fem, assemble_fem_1d,
    matern_exact_cov, matern_spde_matvec, nonstationary_1d_cov, nonstationary_oracle, regular_grid,
    simulate_data, subsample_grid,
)
from hodlr_gp.models.wind import WindModelParams

from conftest import rel

K1_AT_1 = 0.6019072301972346  # mpmath besselk(1, 1)


def _fd_check(orc, theta, rng, h=1e-5, tol=1e-5, dirs=3):
    for j in range(len(theta)):
        V = rng.normal(size=(orc.n, dirs))
        e = h * np.eye(len(theta))[j]
        fd = (orc.at(theta + e).apply(V) - orc.at(theta - e).apply(V)) / (2 * h)
        assert rel(orc.apply_derivative(j, V), fd) <= tol, j


def _oracle_invariants(orc, rng):
    u, v = rng.normal(size=(2, orc.n))
    a, b = orc.apply(u), orc.apply(v)
    assert abs(u @ b - v @ a) <= 1e-10 * abs(u @ b)
    lin = orc.apply(2.0 * u - 3.0 * v)
    assert np.linalg.norm(lin - (2 * a - 3 * b)) <= 1e-12 * np.linalg.norm(lin)


# -- FEM --------------------------------------------------------------------------

def test_single_square_stiffness_null_vector():
    fem = assemble_fem((0.0, 1.0, 0.0, 1.0), 2)
    assert np.allclose(fem.S @ np.ones(4), 0.0, atol=1e-14)


def test_mass_sums_to_area_and_structure():
    fem = assemble_fem((-5.5, 5.5, -5.5, 5.5), 23)
    assert fem.C.sum() == pytest.approx(121.0, abs=1e-10)
    assert abs(fem.C - fem.C.T).max() < 1e-15 and abs(fem.S - fem.S.T).max() < 1e-15
    assert np.all(fem.C_lumped > 0)
    assert np.linalg.eigvalsh(fem.S.toarray()).min() > -1e-10


def test_1d_neumann_spectrum():
    L = 11.0
    C, S = assemble_fem_1d(L, 128)
    ev = np.sort(sla.eigh(S.toarray(), C.toarray(), eigvals_only=True))
    assert abs(ev[0]) < 1e-10
    assert ev[1] == pytest.approx((np.pi / L) ** 2, rel=0.02)


def test_interpolation_partition_of_unity(rng):
    pts = rng.uniform(-5, 5, (200, 2))
    fem = assemble_fem((-5.5, 5.5, -5.5, 5.5), 17, pts)
    assert np.allclose(np.asarray(fem.Phi.sum(axis=1)).ravel(), 1.0)
    # linear functions are reproduced exactly
    nodes = fem.grid.nodes()
    assert np.allclose(fem.Phi @ (2 * nodes[:, 0] - nodes[:, 1]), 2 * pts[:, 0] - pts[:, 1])


def test_point_outside_domain_rejected():
    with pytest.raises(ValueError):
        assemble_fem((-5.5, 5.5, -5.5, 5.5), 9, np.array([[6.0, 0.0]]))


# -- Matern -------------------------------------------------------------------------

def test_matern_exact_cov_values():
    assert matern_exact_cov(0.0) == 1.0
    assert matern_exact_cov(2.0, l=2.0) == pytest.approx(K1_AT_1, rel=1e-14)
    r = np.linspace(0, 5, 100)
    assert np.all(np.diff(matern_exact_cov(r, l=0.7)) < 0)
    with pytest.raises(ValueError):
        matern_exact_cov(-1.0)


def test_gamma_and_params():
    p = MaternSpdeParams(2.0, 3.0)
    assert p.gamma == pytest.approx(3.0 / (2.0 * np.sqrt(4 * np.pi)))
    with pytest.raises(ValueError):
        MaternSpdeParams(-1.0, 1.0)


@pytest.fixture(scope="module")
def fine_matern():
    # h = l / 8 with l = 1 on the extended domain
    pts = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [0.0, 1.5], [-1.0, -1.0], [2.0, 1.0], [0.25, 0.25]])
    fem = assemble_fem((-5.5, 5.5, -5.5, 5.5), 89, pts)
    return pts, fem, MaternSpde(fem)


def test_spde_matches_whittle_kernel(fine_matern):
    pts, fem, spde = fine_matern
    sigma, l = 1.3, 1.0
    K = fem.Phi @ spde.apply(fem.Phi.T.toarray(), sigma, l)
    d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    exact = sigma**2 * matern_exact_cov(d, l=l)
    near = d <= 1.5
    assert np.all(np.abs(K - exact)[near] <= 0.05 * exact[near])
    assert np.all(np.abs(np.diag(K) - sigma**2) <= 0.05 * sigma**2)


def test_spde_symmetry_and_dense_formula(rng):
    fem = assemble_fem((-5.5, 5.5, -5.5, 5.5), 15)
    spde = MaternSpde(fem)
    u, v = rng.normal(size=(2, fem.n_basis))
    Kv = matern_spde_matvec(fem, MaternSpdeParams(1.0, 1.0), v, spde)
    Ku = matern_spde_matvec(fem, MaternSpdeParams(1.0, 1.0), u, spde)
    assert abs(u @ Kv - v @ Ku) <= 1e-10 * abs(u @ Kv)
    for l in (1.0, 2.0):
        dense = spde.dense(0.8, l)
        V = rng.normal(size=(fem.n_basis, 3))
        assert rel(spde.apply(V, 0.8, l), dense @ V) <= 1e-10


def test_spde_cache_is_bounded():
    spde = MaternSpde(assemble_fem((0, 1, 0, 1), 5), cache_size=4)
    for l in (0.5, 1.0, 1.5, 2.0, 2.5, 3.0):
        spde.factor(l)
    assert len(spde._lu) == 4 and 0.5 not in spde._lu


def test_matern_oracle(rng):
    orc = MaternObsOracle.on_points(rng.uniform(-5, 5, (60, 2)), [1.2, 0.9], mesh_n=31, nugget=0.05)
    _oracle_invariants(orc, rng)
    _fd_check(orc, np.array([1.2, 0.9]), rng)
    with pytest.raises(ValueError):
        orc.apply(np.ones(59))
    with pytest.raises(IndexError):
        orc.apply_derivative(2, np.ones(60))


# -- wind -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def wind16():
    return WindModel(regular_grid(16), 23)


def test_wind_params():
    assert np.count_nonzero(WindModelParams(0.0, 1.0, 0.3, 0.5).cross_cov() - np.diag([1.0, 0.09])) == 0
    with pytest.raises(ValueError):
        WindModelParams(1.0, 1.0, 1.0, 1.0)


def test_wind_dense_reference_and_spd(wind16, rng):
    orc = wind16.oracle((0.7, 1.0, 0.3, 0.5), 0.01)
    K = orc.dense()
    assert rel(K, orc.dense_reference()) <= 1e-10
    assert np.linalg.eigvalsh(K).min() > 0
    _oracle_invariants(orc, rng)


def test_wind_derivatives_fd(wind16, rng):
    theta = np.array([0.5, 0.5, 0.5, 0.5])
    _fd_check(wind16.oracle(theta, 0.01), theta, rng)


# -- ADR --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def adr16():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return AdrModel(regular_grid(16), 21, 31)


def test_adr_dense_reference_and_positivity(adr16, rng):
    orc = adr16.oracle((1.0, 1.0), 0.5)
    assert rel(orc.dense(), orc.dense_reference()) <= 1e-10
    V = rng.normal(size=(orc.n, 100))
    assert np.all(np.einsum("ij,ij->j", V, orc.apply(V)) > 0)
    _oracle_invariants(orc, rng)


def test_adr_derivatives_fd(adr16, rng):
    _fd_check(adr16.oracle((1.5, 1.5), 0.5), np.array([1.5, 1.5]), rng)


def test_adr_peclet_warning():
    with pytest.warns(RuntimeWarning, match="Peclet"):
        AdrModel(regular_grid(8), 11, 11)


# -- nonstationary kernel ------------------------------------------------------------

def test_nonstationary_values():
    assert nonstationary_1d_cov(0.1, 0.6, 2.0, 3.0, 3.0) == 2.0
    assert nonstationary_1d_cov(0.1, 0.6, 1.0, 0.0, 10.0) == pytest.approx(2.5240133478371946e-36, rel=1e-12)
    with pytest.raises(ValueError):
        nonstationary_1d_cov(-1.0, 0.1, 1.0, 0.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(0, 10), y=st.floats(0, 10), a=st.floats(0.05, 2), b=st.floats(0, 2))
def test_nonstationary_symmetry(x, y, a, b):
    assert nonstationary_1d_cov(a, b, 1.0, x, y) == nonstationary_1d_cov(a, b, 1.0, y, x)


def test_nonstationary_derivatives(rng):
    orc = nonstationary_oracle(np.arange(0, 10.01, 0.25), [0.3, 0.4], nugget=0.1)
    _fd_check(orc, np.array([0.3, 0.4]), rng, tol=1e-6)


# -- simulation ------------------------------------------------------------------

def test_simulate_zero_covariance_and_determinism():
    mean = np.arange(5.0)
    assert np.array_equal(simulate_data(np.zeros((5, 5)), mean, seed=3), mean)
    K = np.eye(5) + 0.5
    assert np.array_equal(simulate_data(K, seed=9), simulate_data(K, seed=9))
    with pytest.raises(MemoryError):
        simulate_data(np.eye(8), limit=4)


def test_simulate_sample_covariance():
    x = np.linspace(0, 3, 32)
    K = np.exp(-np.subtract.outer(x, x) ** 2)
    Y = np.array([simulate_data(K, seed=s) for s in range(2000)])
    Kh = Y.T @ Y / 2000
    assert np.abs(Kh - K).max() <= 5 * np.sqrt(2 / 2000)


def test_subsample_grid_subset():
    parent = regular_grid(32)
    pts, idx = subsample_grid(32, coarsen=2)
    assert pts.shape == (256, 2)
    assert np.array_equal(parent[idx], pts)
    pts, idx = subsample_grid(32, thin=0.5, rng=1)
    assert pts.shape == (512, 2) and np.unique(idx).size == 512

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import dense_cov, dense_l, forward_solve

from nngp_chol import (
    CovarianceSpec,
    NonPositiveConditionalVariance,
    SparseCholesky,
    apply_factor,
    backsolve_factor,
    build_factor,
    build_neighbor_graph,
    log_det,
    order_locations,
    quad_form,
    simulate,
)
from nngp_chol.factor import dense_covariance_matrix


def setup(n, m, family="exponential", tau2=0.0, seed=0, phi=3.0):
    locs = order_locations(np.random.default_rng(seed).uniform(size=(n, 2)))
    graph = build_neighbor_graph(locs, m)
    return locs, graph, CovarianceSpec(family, 1.0, phi, tau2)


def test_single_location(backend):
    locs, g, s = setup(1, 3, tau2=0.25)
    lat = build_factor(locs, g, s, "latent")
    resp = build_factor(locs, g, s, "response")
    assert lat.counts.tolist() == [0]
    assert lat.f.tolist() == [1.0] and resp.f.tolist() == [1.25]
    assert apply_factor(resp, [2.5])[0] == pytest.approx(2.5 / math.sqrt(1.25))
    assert backsolve_factor(resp, [2.0])[0] == pytest.approx(2.0 * math.sqrt(1.25))
    assert log_det(lat) == 0.0


def test_two_points_closed_form(backend):
    d, phi = 0.3, 2.0
    locs = order_locations([(0, 0), (d, 0)], "identity")
    ch = build_factor(locs, build_neighbor_graph(locs, 1), CovarianceSpec("exponential", 1, phi))
    assert ch.b[1, 0] == pytest.approx(math.exp(-phi * d), rel=1e-14)
    assert ch.f[1] == pytest.approx(1 - math.exp(-2 * phi * d), rel=1e-13)
    assert ch.f[0] == 1.0


@pytest.mark.parametrize("family", ["exponential", "matern32", "gaussian"])
@pytest.mark.parametrize("target", ["latent", "response"])
def test_exact_when_full_history(backend, family, target):
    n = 100
    # the squared-exponential kernel needs a short range to stay well conditioned
    phi = 6.0 if family == "gaussian" else 3.0
    locs, g, s = setup(n, n - 1, family, tau2=0.1, phi=phi)
    ch = build_factor(locs, g, s, target)
    dense = dense_cov(locs.ordered_coords, family, 1.0, phi, s.tau2 if target == "response" else 0)
    assert np.max(np.abs(ch.dense_covariance() - dense)) < 1e-8
    assert np.allclose(dense, dense_covariance_matrix(locs, s, target), atol=1e-14)


def test_apply_and_backsolve_match_dense(backend):
    locs, g, s = setup(50, 5)
    ch = build_factor(locs, g, s)
    lmat = dense_l(ch.sparse_b().toarray(), ch.f)
    assert np.allclose(ch.dense(), lmat)
    rng = np.random.default_rng(1)
    v, z = rng.normal(size=50), rng.normal(size=50)
    assert np.allclose(apply_factor(ch, v), lmat @ v, rtol=1e-12, atol=1e-12)
    assert np.allclose(backsolve_factor(ch, z), forward_solve(lmat, z), rtol=1e-10, atol=1e-10)
    assert np.array_equal(apply_factor(ch, np.zeros(50)), np.zeros(50))


def test_block_columns(backend):
    locs, g, s = setup(40, 4)
    ch = build_factor(locs, g, s)
    v = np.random.default_rng(2).normal(size=(40, 3))
    block = apply_factor(ch, v)
    for j in range(3):
        assert np.allclose(block[:, j], apply_factor(ch, v[:, j]))
    assert np.allclose(backsolve_factor(ch, block), v, atol=1e-12)


def test_length_mismatch():
    locs, g, s = setup(10, 3)
    ch = build_factor(locs, g, s)
    with pytest.raises(ValueError):
        apply_factor(ch, np.ones(9))
    with pytest.raises(ValueError):
        backsolve_factor(ch, np.ones(11))
    with pytest.raises(ValueError):
        quad_form(ch, np.ones(10), np.ones(3))
    with pytest.raises(ValueError):
        build_factor(locs, g, s, "both")


def test_log_det_and_quad_form_exact(backend):
    n = 50
    locs, g, s = setup(n, n - 1, "matern32", tau2=0.05)
    ch = build_factor(locs, g, s, "response")
    c = dense_cov(locs.ordered_coords, "matern32", 1.0, 3.0, 0.05)
    assert log_det(ch) == pytest.approx(np.linalg.slogdet(c)[1], rel=1e-10)
    rng = np.random.default_rng(3)
    u, v = rng.normal(size=n), rng.normal(size=n)
    assert quad_form(ch, u, v) == pytest.approx(u @ np.linalg.solve(c, v), rel=1e-8)
    assert quad_form(ch, u, v) == pytest.approx(quad_form(ch, v, u), rel=1e-14)
    assert quad_form(ch, np.zeros(n), np.zeros(n)) == 0.0


def test_log_det_constant_f():
    ch = SparseCholesky.identity(7)
    ch = SparseCholesky(ch.nbr, ch.counts, ch.b, np.full(7, 2.5))
    assert log_det(ch) == pytest.approx(7 * math.log(2.5))


def test_simulate_identity_reproduces_normals():
    ch = SparseCholesky.identity(30)
    z = np.random.default_rng(42).standard_normal((4, 30))
    assert np.array_equal(simulate(ch, 42, 4), z)


def test_simulate_deterministic(backend):
    locs, g, s = setup(60, 5)
    ch = build_factor(locs, g, s)
    assert np.array_equal(simulate(ch, 9, 3), simulate(ch, 9, 3))
    assert simulate(ch, 9, 3).shape == (3, 60)
    with pytest.raises(ValueError):
        simulate(ch, 9, 0)


def test_simulate_moments_full_history(backend):
    n, R = 50, 10000
    locs, g, s = setup(n, n - 1)
    ch = build_factor(locs, g, s)
    draws = simulate(ch, 5, R)
    c = dense_cov(locs.ordered_coords, "exponential", 1.0, 3.0)
    se = np.sqrt((np.outer(np.diag(c), np.diag(c)) + c**2) / R)
    assert np.max(np.abs(np.cov(draws.T) - c) / se) < 5


def test_sigma2_scaling(backend):
    locs, g, s = setup(80, 6, "matern32")
    a = build_factor(locs, g, s)
    b = build_factor(locs, g, s.with_params(sigma2=3.5))
    assert np.allclose(b.b, a.b, rtol=1e-9, atol=1e-10)
    assert np.allclose(b.f, 3.5 * a.f, rtol=1e-12)


def test_factor_invariants(backend):
    locs, g, s = setup(70, 7)
    ch = build_factor(locs, g, s)
    assert ch.f[0] == pytest.approx(s.sigma2)
    assert np.all(ch.f > 0)
    lmat = ch.dense()
    off = np.tril(lmat, -1)
    assert np.all((off != 0).sum(axis=1) <= ch.counts)
    assert np.allclose(np.diag(lmat), ch.f ** -0.5)
    assert np.allclose(lmat.T @ lmat, np.linalg.inv(ch.dense_covariance()), atol=1e-6)


def test_ill_conditioned_rows_rejected(backend):
    # nearly coincident points under a smooth kernel make f_i collapse
    pts = np.array([[0.0, 0.0], [1e-9, 0.0], [0.5, 0.5]])
    locs = order_locations(pts, "identity")
    with pytest.raises(NonPositiveConditionalVariance) as err:
        build_factor(locs, build_neighbor_graph(locs, 2), CovarianceSpec("gaussian", 1, 1))
    assert err.value.row == 1


def test_from_rows_sorts_neighbors():
    ch = SparseCholesky.from_rows([[], [0], [1, 0]], [[], [0.5], [0.2, 0.3]], [1, 1, 1])
    idx, coef = ch.row(2)
    assert idx.tolist() == [0, 1] and coef.tolist() == [0.3, 0.2]


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 100), st.sampled_from([1, 5, 10]), st.integers(0, 2**31))
def test_inverse_pair(n, m, seed):
    locs, g, s = setup(n, m, seed=seed)
    ch = build_factor(locs, g, s, "response")
    z = np.random.default_rng(seed).normal(size=n)
    assert np.max(np.abs(backsolve_factor(ch, apply_factor(ch, z)) - z)) < 1e-12 * max(1, np.max(np.abs(z)))
    assert np.max(np.abs(apply_factor(ch, backsolve_factor(ch, z)) - z)) < 1e-12 * max(1, np.max(np.abs(z)))

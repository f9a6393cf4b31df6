import numpy as np
import pytest
from oracles import mvn_logpdf

from nngp_chol import NotPositiveDefinite, log_det, quad_form
from nngp_chol.dagar import (
    ArealGraph,
    DagarSpec,
    build_dagar_factor,
    car_diagnostics,
    car_precision,
    dagar_covariance,
    dagar_loglik,
    dagar_precision,
    grid_graph,
    grid_groups,
    path_graph,
    region_order,
    star_graph,
)

GRAPHS = {
    "path": path_graph(6),
    "star": star_graph(5),
    "grid3": grid_graph(3, 3),
    "grid45": grid_graph(4, 5),
}


def test_graph_validation():
    with pytest.raises(ValueError):
        ArealGraph.from_edges(3, [(0, 3)])
    with pytest.raises(ValueError):
        ArealGraph.from_edges(3, [(1, 1)])
    with pytest.raises(ValueError):
        ArealGraph.from_edges(3, [(0, 1), (1, 0)])
    with pytest.raises(ValueError):
        ArealGraph.from_edges(3, [(0, 1)], order=[0, 0, 2])
    with pytest.raises(ValueError):
        DagarSpec(1.0)
    with pytest.raises(ValueError):
        DagarSpec(0.5, 0.0)


def test_adjacency_symmetric():
    a = GRAPHS["grid3"].adjacency()
    assert np.array_equal(a, a.T) and np.all(np.diag(a) == 0)
    assert a.sum() == 2 * 12


def test_rho_zero_is_independence():
    g = GRAPHS["grid3"]
    ch = build_dagar_factor(g, DagarSpec(0.0, 2.0))
    assert np.all(ch.b == 0) and np.allclose(ch.f, 2.0)
    assert np.allclose(dagar_precision(g, DagarSpec(0.0, 2.0)), np.eye(9) / 2)


def test_path_is_ar1():
    rho, s2 = 0.6, 1.5
    cov = dagar_covariance(path_graph(3), DagarSpec(rho, s2))
    lag = np.abs(np.subtract.outer(np.arange(3), np.arange(3)))
    assert np.allclose(cov, s2 * rho**lag, atol=1e-12)


@pytest.mark.parametrize("name", list(GRAPHS))
@pytest.mark.parametrize("rho", [0.1, 0.5, 0.9])
def test_homoskedastic_with_exact_neighbor_correlation(name, rho):
    g = GRAPHS[name]
    cov = dagar_covariance(g, DagarSpec(rho, 1.7))
    assert np.max(np.abs(np.diag(cov) - 1.7)) < 1e-10
    corr = cov / 1.7
    for i, j in g.edges:
        assert abs(corr[i, j] - rho) < 1e-10


@pytest.mark.parametrize("name", list(GRAPHS))
def test_precision_positive_definite(name):
    for rho in (0.0, 0.3, 0.7, 0.99):
        q = dagar_precision(GRAPHS[name], DagarSpec(rho))
        assert np.allclose(q, q.T)
        assert np.linalg.eigvalsh(q)[0] > 0


def test_rho_to_one_limit_averages_predecessors():
    g = GRAPHS["grid3"]
    ch = build_dagar_factor(g, DagarSpec(1 - 1e-9))
    for i in range(9):
        _, coef = ch.row(i)
        if len(coef):
            assert np.allclose(coef, 1.0 / len(coef), rtol=1e-6)


def test_homoskedasticity_depends_on_ordering():
    # the closed-form rows assume each region's predecessors already carry the
    # star-tree correlations, which arbitrary orderings do not guarantee
    g = GRAPHS["grid3"]
    assert region_order(g, "degree")[0] == 4
    # center, edge midpoints, corners: every predecessor pair meets at an earlier region
    cov = dagar_covariance(g.with_order(region_order(g, "degree")), DagarSpec(0.4))
    assert np.allclose(np.diag(cov), 1.0, atol=1e-12)
    q = dagar_precision(g.with_order(region_order(g, "random", seed=1)), DagarSpec(0.4))
    assert np.linalg.eigvalsh(q)[0] > 0
    assert np.ptp(np.diag(np.linalg.inv(q))) > 1e-3
    p = path_graph(3).with_order([0, 2, 1])
    assert np.ptp(np.diag(dagar_covariance(p, DagarSpec(0.6)))) > 1e-3
    with pytest.raises(ValueError):
        region_order(g, "alphabetical")


def test_loglik_dense_and_independent():
    g = GRAPHS["grid3"]
    w = np.random.default_rng(0).normal(size=9)
    spec = DagarSpec(0.5, 1.3)
    ref = mvn_logpdf(w, np.zeros(9), dagar_covariance(g, spec))
    assert dagar_loglik(g, spec, w) == pytest.approx(ref, abs=1e-10)
    indep = mvn_logpdf(w, np.zeros(9), 1.3 * np.eye(9))
    assert dagar_loglik(g, DagarSpec(0.0, 1.3), w) == pytest.approx(indep, abs=1e-10)
    with pytest.raises(ValueError):
        dagar_loglik(g, spec, w[:5])


def test_loglik_path_reflection():
    # reversing a path and its ordering maps the DAG onto itself
    n = 5
    fwd = path_graph(n)
    rev = ArealGraph.from_edges(n, fwd.edges, order=np.arange(n)[::-1])
    w = np.array([0.3, -1.0, 0.4, -1.0, 0.3])
    spec = DagarSpec(0.7)
    assert dagar_loglik(fwd, spec, w) == pytest.approx(dagar_loglik(rev, spec, w[::-1]))


def test_factor_reuses_sparse_primitives():
    g = GRAPHS["grid45"]
    spec = DagarSpec(0.4, 2.0)
    ch = build_dagar_factor(g, spec)
    cov = ch.dense_covariance()
    assert log_det(ch) == pytest.approx(np.linalg.slogdet(cov)[1])
    u = np.random.default_rng(1).normal(size=20)
    assert quad_form(ch, u, u) == pytest.approx(u @ np.linalg.solve(cov, u))


def test_car_precision():
    g = GRAPHS["grid3"]
    assert np.allclose(car_precision(g, 0.0, 2.0), np.diag(g.degrees()) / 2)
    for name in GRAPHS:
        with pytest.raises(NotPositiveDefinite) as err:
            car_precision(GRAPHS[name], 1.0)
        assert abs(err.value.eigenvalue) < 1e-10
    cov = np.linalg.inv(car_precision(g, 0.9))
    assert cov[0, 0] > cov[4, 4]


def test_grid_groups():
    v, e = grid_groups(3, 3)
    assert sorted(set(v.values())) == ["v00", "v01", "v11"]
    assert v[0] == v[2] == v[6] == v[8] == "v00" and v[4] == "v11"
    assert sorted(set(e.values())) == ["v00-v01", "v01-v11"]
    v, e = grid_groups(2, 3)
    assert v[0] != v[1] and len(set(e.values())) == 3


def test_car_diagnostics_rho_zero():
    g = GRAPHS["grid3"]
    v, e = grid_groups(3, 3)
    rows = car_diagnostics(g, [0.0], v, e, sigma2=2.0)
    var = {r["group"]: r["mean"] for r in rows if r["kind"] == "variance"}
    assert var == pytest.approx({"v00": 1.0, "v01": 2 / 3, "v11": 0.5})
    assert all(r["mean"] == 0 for r in rows if r["kind"] == "correlation")


def test_car_heteroskedastic_dagar_not():
    g = GRAPHS["grid3"]
    v, e = grid_groups(3, 3)
    grid = [0.2, 0.5, 0.8, 1.0]
    car = car_diagnostics(g, grid, v, e)
    dag = car_diagnostics(g, grid, v, e, model="dagar")
    for rho in grid[:-1]:
        var = {r["group"]: r["mean"] for r in car if r["rho"] == rho and r["kind"] == "variance"}
        assert var["v00"] > var["v01"] > var["v11"]
        dv = [r for r in dag if r["rho"] == rho and r["kind"] == "variance"]
        assert all(abs(r["max"] - 1) < 1e-10 and abs(r["min"] - 1) < 1e-10 for r in dv)
    assert all(r["singular"] for r in car if r["rho"] == 1.0)
    assert all(r["singular"] for r in dag if r["rho"] == 1.0)
    with pytest.raises(ValueError):
        car_diagnostics(g, [0.5], v, e, model="sar")

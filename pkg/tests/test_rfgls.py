import math

import numpy as np
import pytest
from oracles import cart, gls_objective, same_tree

from nngp_chol import CovarianceSpec, build_factor, build_neighbor_graph, order_locations
from nngp_chol.factor import SparseCholesky, apply_factor
from nngp_chol.inference import FitResult, RegressionData
from nngp_chol.rfgls import (
    ForestHyper,
    build_tree,
    fit_forest,
    gls_split_cost,
    predict_forest,
    resample_weights,
)


def spatial(n, seed=0, m=5, spec=None):
    locs = order_locations(np.random.default_rng(seed).uniform(size=(n, 2)))
    spec = spec or CovarianceSpec("exponential", 1.0, 4.0, 0.2)
    return locs, build_factor(locs, build_neighbor_graph(locs, m), spec, "response")


def test_identity_cost_is_sse():
    rng = np.random.default_rng(0)
    y = rng.normal(size=30)
    z = (rng.uniform(size=30) > 0.4).astype(int)
    sse = sum(((y[z == k] - y[z == k].mean()) ** 2).sum() for k in (0, 1))
    assert gls_split_cost(z, y, SparseCholesky.identity(30)) == pytest.approx(sse)


def test_cost_matches_dense_gls():
    _, ch = spatial(30, 1)
    rng = np.random.default_rng(1)
    y = rng.normal(size=30)
    z = np.eye(3)[rng.integers(0, 3, 30)]
    assert gls_split_cost(z, y, ch) == pytest.approx(gls_objective(z, y, ch.dense_covariance()),
                                                     rel=1e-8)


def test_cost_with_weights_and_rank_deficiency():
    _, ch = spatial(25, 2)
    rng = np.random.default_rng(2)
    y, w = rng.normal(size=25), resample_weights(25, 3)
    z = rng.integers(0, 2, 25)
    ly, lz = apply_factor(ch, y), apply_factor(ch, np.eye(2)[z])
    coef = np.linalg.solve(lz.T @ (w[:, None] * lz), lz.T @ (w * ly))
    r = ly - lz @ coef
    assert gls_split_cost(z, y, ch, w) == pytest.approx(float(r @ (w * r)), rel=1e-9)
    both = np.column_stack([np.ones(25), np.ones(25)])
    assert gls_split_cost(both, y, ch) == math.inf


def test_constant_node_has_no_gain():
    _, ch = spatial(30, 3)
    y = np.full(30, 4.2)
    z = np.arange(30) % 2
    assert gls_split_cost(z, y, ch) == pytest.approx(0.0, abs=1e-18)
    assert gls_split_cost(np.zeros(30, int), y, ch) == pytest.approx(0.0, abs=1e-18)


def _cart_for(X, y, hyper):
    return cart(X, y, np.arange(len(y)), hyper.min_node_size, 1e-12 * float(y @ y))


@pytest.mark.parametrize("seed", range(4))
def test_identity_tree_is_cart(backend, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(50, 3))
    y = np.sin(4 * X[:, 0]) + X[:, 1] + 0.3 * rng.normal(size=50)
    hyper = ForestHyper(n_trees=1, min_node_size=3, mtry=3)
    tree = build_tree(X, y, SparseCholesky.identity(50), None, hyper, np.random.default_rng(0))
    assert same_tree(tree, _cart_for(X, y, hyper))


def test_single_value_feature_gives_root(backend):
    _, ch = spatial(40, 4)
    y = np.random.default_rng(4).normal(size=40)
    X = np.ones((40, 2))
    tree = build_tree(X, y, ch, None, ForestHyper(mtry=2), np.random.default_rng(0))
    assert tree.is_leaf
    q = np.linalg.inv(ch.dense_covariance())
    one = np.ones(40)
    assert tree.beta == pytest.approx((one @ q @ y) / (one @ q @ one), rel=1e-9)


def test_step_function_first_split(backend):
    rng = np.random.default_rng(5)
    X = rng.uniform(size=(60, 2))
    y = np.where(X[:, 0] > 0.6, 3.0, -1.0)
    tree = build_tree(X, y, SparseCholesky.identity(60), None, ForestHyper(mtry=2),
                      np.random.default_rng(0))
    below = X[X[:, 0] <= 0.6, 0].max()
    above = X[X[:, 0] > 0.6, 0].min()
    assert tree.feature == 0 and tree.threshold == pytest.approx(0.5 * (below + above))


def _brute_root_split(X, y, ch, w, min_node):
    base = gls_split_cost(np.zeros(len(y), int), y, ch, w)
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        for k in range(min_node, len(y) - min_node + 1):
            if xs[k - 1] == xs[k]:
                continue
            z = np.zeros(len(y), int)
            z[order[k:]] = 1
            gain = base - gls_split_cost(z, y, ch, w)
            if best is None or gain > best[0] + 1e-9 * base:
                best = (gain, f, 0.5 * (xs[k - 1] + xs[k]))
    return best


@pytest.mark.parametrize("seed", range(3))
def test_scan_matches_brute_force_enumeration(backend, seed):
    n = 40
    _, ch = spatial(n, seed + 10)
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 2))
    y = X[:, 0] + rng.normal(size=n)
    w = resample_weights(n, seed)
    hyper = ForestHyper(min_node_size=4, mtry=2, max_leaves=2)
    tree = build_tree(X, y, ch, w, hyper, np.random.default_rng(0))
    gain, f, thr = _brute_root_split(X, y, ch, w, 4)
    assert (tree.feature, tree.threshold) == (f, thr)
    z = (X[:, tree.feature] > tree.threshold).astype(int)
    ref = gls_split_cost(np.zeros(n, int), y, ch, w) - gls_split_cost(z, y, ch, w)
    assert gain == pytest.approx(ref, rel=1e-9)


def test_leaf_betas_solve_normal_equations(backend):
    n = 80
    _, ch = spatial(n, 6)
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(n, 3))
    y = 2 * (X[:, 1] > 0.5) + rng.normal(size=n)
    w = resample_weights(n, 6)
    tree = build_tree(X, y, ch, w, ForestHyper(min_node_size=5), np.random.default_rng(1))
    z = np.eye(tree.n_leaves())[tree.apply(X)]
    lz = apply_factor(ch, z)
    r = apply_factor(ch, y) - apply_factor(ch, tree.predict(X))
    assert np.max(np.abs(lz.T @ (w * r))) < 1e-8


def test_cost_never_increases_with_splits(backend):
    n = 60
    _, ch = spatial(n, 7)
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(n, 2))
    y = X[:, 0] * 3 + rng.normal(size=n)
    prev = gls_split_cost(np.zeros(n, int), y, ch)
    for leaves in range(2, 8):
        tree = build_tree(X, y, ch, None, ForestHyper(min_node_size=3, mtry=2, max_leaves=leaves),
                          np.random.default_rng(0))
        cost = gls_split_cost(tree.apply(X), y, ch)
        assert cost <= prev + 1e-10
        prev = cost


def test_backends_grow_identical_trees():
    from nngp_chol import _backend

    if "cython" not in _backend.available():
        pytest.skip("compiled extension not built")
    n = 150
    _, ch = spatial(n, 8)
    rng = np.random.default_rng(8)
    X = rng.uniform(size=(n, 4))
    y = X[:, 0] + np.sin(5 * X[:, 2]) + rng.normal(size=n) * 0.3
    w = resample_weights(n, 1)
    trees = []
    for name in ("cython", "python"):
        with _backend.use_backend(name):
            trees.append(build_tree(X, y, ch, w, ForestHyper(), np.random.default_rng(3)))
    a, b = trees
    assert np.allclose(a.predict(X), b.predict(X), rtol=1e-10, atol=1e-12)
    assert np.array_equal(a.apply(X), b.apply(X))


def forest_data(n=100, seed=0, constant=None):
    locs, ch = spatial(n, seed)
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 2))
    y = np.full(n, constant) if constant is not None else X[:, 0] + rng.normal(size=n)
    return RegressionData(y, X, locs), ch


def test_single_tree_forest_equals_tree():
    data, ch = forest_data()
    hyper = ForestHyper(n_trees=1)
    model = fit_forest(data, ch, hyper, seed=3, resample=False)
    y, X = data.ordered()
    tree = build_tree(X, y, ch, None, hyper, np.random.default_rng(model.resample_seeds[0]))
    Xn = np.random.default_rng(1).uniform(size=(20, 2))
    assert np.array_equal(predict_forest(model, Xn), tree.predict(Xn))


def test_forest_determinism_and_parallel_invariance():
    data, ch = forest_data()
    hyper = ForestHyper(n_trees=6)
    a = fit_forest(data, ch, hyper, seed=1)
    b = fit_forest(data, ch, hyper, seed=1, n_jobs=2)
    Xn = np.random.default_rng(2).uniform(size=(30, 2))
    assert len(a.trees) == 6
    assert np.array_equal(a.predict_trees(Xn), b.predict_trees(Xn))
    c = fit_forest(data, ch, hyper, seed=2)
    assert not np.array_equal(a.predict_trees(Xn), c.predict_trees(Xn))
    with pytest.raises(ValueError):
        fit_forest(data, ch, ForestHyper(n_trees=0))


def test_mean_prediction_is_tree_average():
    data, ch = forest_data()
    model = fit_forest(data, ch, ForestHyper(n_trees=5), seed=4)
    Xn = np.random.default_rng(3).uniform(size=(15, 2))
    manual = np.mean([t.predict(Xn) for t in model.trees], axis=0)
    assert np.allclose(predict_forest(model, Xn), manual)


def test_constant_response_predicts_constant():
    data, ch = forest_data(constant=2.5)
    model = fit_forest(data, ch, ForestHyper(n_trees=4), seed=0)
    Xn = np.random.default_rng(4).uniform(size=(10, 2))
    assert np.allclose(predict_forest(model, Xn), 2.5)


def test_kriging_mode_interpolates_training_points():
    data, ch = forest_data()
    model = fit_forest(data, ch, ForestHyper(n_trees=3), seed=0)
    spec = CovarianceSpec("exponential", 1.0, 4.0, 0.0)
    idx = [3, 17, 42]
    pred = predict_forest(model, data.X[idx], "kriging", data=data,
                          coords_new=data.locs.coords[idx], spec=spec, m=8)
    assert np.allclose(pred, data.y[idx], atol=1e-8)
    model.fit = FitResult(np.zeros(1), spec, 0.0, True, 0)
    again = predict_forest(model, data.X[idx], "kriging", data=data,
                           coords_new=data.locs.coords[idx], m=8)
    assert np.allclose(again, pred)


def test_prediction_errors():
    data, ch = forest_data()
    model = fit_forest(data, ch, ForestHyper(n_trees=2, mtry=2), seed=0)
    with pytest.raises(ValueError):
        predict_forest(model, np.ones((3, 1)))
    with pytest.raises(ValueError):
        predict_forest(model, data.X, "median")
    with pytest.raises(ValueError):
        predict_forest(model, data.X, "kriging")


def test_resolve_mtry():
    assert ForestHyper().resolve_mtry(10) == 4
    assert ForestHyper().resolve_mtry(1) == 1
    assert ForestHyper(mtry=7).resolve_mtry(3) == 3


def test_resample_weights():
    w = resample_weights(50, 3)
    assert w.sum() == 50 and np.all(w >= 0)
    assert np.array_equal(w, resample_weights(50, 3))

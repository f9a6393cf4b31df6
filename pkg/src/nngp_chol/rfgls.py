"""Random forests with a generalized-least-squares split criterion.

Each tree is grown greedily in the decorrelated system ``W^{1/2} L``, where
``L`` is a sparse precision factor and ``W`` holds the resampling counts of
the decorrelated coordinates.  Splitting a leaf adds one column to the leaf
design ``Z``; the best split maximizes the drop in the GLS loss

    min_beta (y - Z beta)' L' W L (y - Z beta)

with all leaf values refitted jointly.  With ``L = I`` and ``W = I`` this is
ordinary CART.
"""
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .factor import SparseCholesky, apply_factor, build_factor
from .inference import FitResult, RegressionData, default_init, fit_mle, predict

# candidate splits whose new design column is (numerically) inside the span
# of the existing leaf columns are rejected
_SPAN_TOL = 1e-10
# a split must lower the loss by more than this fraction of y' L' W L y
_GAIN_TOL = 1e-12


@dataclass(eq=False)
class TreeNode:
    feature: int = -1
    threshold: float = math.nan
    left: "TreeNode" = None
    right: "TreeNode" = None
    beta: float = math.nan
    size: int = 0
    leaf_id: int = -1

    @property
    def is_leaf(self):
        return self.left is None

    def predict(self, X):
        return self._route(X, "beta", float)

    def apply(self, X):
        """Leaf id reached by each row of ``X``."""
        return self._route(X, "leaf_id", np.intp)

    def _route(self, X, attr, dtype):
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0], dtype=dtype)
        stack = [(self, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if node.is_leaf:
                out[rows] = getattr(node, attr)
                continue
            go_left = X[rows, node.feature] <= node.threshold
            stack.append((node.left, rows[go_left]))
            stack.append((node.right, rows[~go_left]))
        return out

    def leaves(self):
        if self.is_leaf:
            return [self]
        return self.left.leaves() + self.right.leaves()

    def n_leaves(self):
        return len(self.leaves())


@dataclass(frozen=True)
class ForestHyper:
    n_trees: int = 100
    min_node_size: int = 5
    max_leaves: int = None
    mtry: int = None

    def resolve_mtry(self, p):
        return min(p, self.mtry or math.ceil(p / 3))


@dataclass(eq=False)
class ForestModel:
    trees: list
    chol: SparseCholesky
    resample_seeds: list
    hyper: ForestHyper
    resample: bool = True
    fit: FitResult = field(default=None, repr=False)

    def predict_trees(self, X):
        return np.vstack([t.predict(X) for t in self.trees])


def gls_split_cost(membership, y, chol, weights=None):
    """Minimized GLS loss for a leaf design.

    ``membership`` gives the leaf label of every ordered position (or an
    ``(n, K)`` indicator matrix).  The loss is computed as ordinary least
    squares on ``(W^{1/2} L y, W^{1/2} L Z)``; ``weights`` are the resampling
    counts (``None`` means no resampling).  Returns ``inf`` when the
    transformed design is rank deficient.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    z = np.asarray(membership)
    if z.ndim == 1:
        labels, z = np.unique(z, return_inverse=True)
        z = np.eye(len(labels))[z]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)[:, None]
    lz = sw * apply_factor(chol, z.astype(float))
    ly = sw[:, 0] * apply_factor(chol, y)
    coef, _, rank, _ = np.linalg.lstsq(lz, ly, rcond=None)
    if rank < lz.shape[1]:
        return math.inf
    r = ly - lz @ coef
    return float(r @ r)


def _l_columns(chol):
    lmat = chol.sparse_l()
    lmat.sort_indices()
    return (
        np.ascontiguousarray(lmat.indptr, dtype=np.intp),
        np.ascontiguousarray(lmat.indices, dtype=np.intp),
        np.ascontiguousarray(lmat.data, dtype=float),
        lmat,
    )


def build_tree(X, y, chol, weights, hyper, rng):
    """Grow one GLS tree on ordered-position data.

    ``X`` (n, p) and ``y`` are in the factor's ordered positions.  Leaves are
    split breadth-first; at each leaf ``mtry`` features are drawn and every
    midpoint between consecutive distinct member values is a candidate.
    Equal gains keep the lowest feature index, then the smallest threshold.
    A leaf is split only if it has at least ``2 * min_node_size`` members,
    and both children must keep ``min_node_size``.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=float)
    mtry = hyper.resolve_mtry(p)
    kern = _backend.kernels()
    col_ptr, col_row, col_val, lmat = _l_columns(chol)

    ly = apply_factor(chol, y)
    ywy = float(ly @ (w * ly))
    cap = hyper.max_leaves or n
    lz = np.zeros((n, min(cap, n) + 1))
    lz[:, 0] = lmat @ np.ones(n)
    members = [np.arange(n)]
    root = TreeNode(size=n, leaf_id=0)
    nodes = [root]
    queue = deque([0])

    def gram(k):
        cols = lz[:, :k]
        return cols.T @ (w[:, None] * cols)

    while queue and len(members) < cap:
        t = queue.popleft()
        mem = members[t]
        if len(mem) < 2 * hyper.min_node_size:
            continue
        k_leaves = len(members)
        cols = np.ascontiguousarray(lz[:, :k_leaves])
        ginv = np.linalg.pinv(gram(k_leaves), hermitian=True)
        beta = ginv @ (cols.T @ (w * ly))
        r0 = ly - cols @ beta
        best = None
        for feat in np.sort(rng.choice(p, size=mtry, replace=False)):
            srt = np.argsort(X[mem, feat], kind="stable")
            order = np.ascontiguousarray(mem[srt], dtype=np.intp)
            xs = np.ascontiguousarray(X[order, feat])
            gain, k = kern.scan_feature(order, xs, col_ptr, col_row, col_val, cols, w,
                                        r0, ginv, hyper.min_node_size, _SPAN_TOL)
            if k >= 0 and (best is None or gain > best[0]):
                best = (gain, int(feat), order, xs, k)
        if best is None or best[0] <= _GAIN_TOL * ywy:
            continue
        gain, feat, order, xs, k = best
        left, right = np.sort(order[:k]), np.sort(order[k:])
        new = len(members)
        members[t] = left
        members.append(right)
        zl = np.zeros(n)
        zl[left] = 1.0
        zr = np.zeros(n)
        zr[right] = 1.0
        lz[:, t] = lmat @ zl
        lz[:, new] = lmat @ zr
        node = nodes[t]
        node.feature, node.threshold = feat, 0.5 * (xs[k - 1] + xs[k])
        node.left = TreeNode(size=len(left), leaf_id=t)
        node.right = TreeNode(size=len(right), leaf_id=new)
        node.leaf_id = -1
        nodes[t] = node.left
        nodes.append(node.right)
        queue.append(t)
        queue.append(new)

    k_leaves = len(members)
    cols = lz[:, :k_leaves]
    beta = np.linalg.pinv(gram(k_leaves), hermitian=True) @ (cols.T @ (w * ly))
    for leaf in nodes:
        leaf.beta = float(beta[leaf.leaf_id])
    return root


def resample_weights(n, seed):
    """Counts from drawing ``n`` decorrelated coordinates with replacement."""
    rng = np.random.default_rng(seed)
    return np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)


def tree_seed(seed, t):
    return int(np.random.SeedSequence([int(seed), int(t)]).generate_state(1)[0])


def _grow(args):
    X, y, chol, hyper, s, resample = args
    rng = np.random.default_rng(s)
    w = resample_weights(len(y), rng.integers(2**63)) if resample else None
    return build_tree(X, y, chol, w, hyper, rng)


def fit_forest(data, chol, hyper=ForestHyper(), seed=0, resample=True, n_jobs=1):
    """Grow ``hyper.n_trees`` independent GLS trees.

    ``data.X`` holds the features (no intercept column needed).  Tree ``t``
    uses its own seed for both the resampling counts and the feature draws,
    so the forest does not depend on ``n_jobs``.
    """
    if hyper.n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    y, X = data.ordered()
    seeds = [tree_seed(seed, t) for t in range(hyper.n_trees)]
    jobs = [(X, y, chol, hyper, s, resample) for s in seeds]
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(_grow, jobs))
    else:
        trees = [_grow(job) for job in jobs]
    return ForestModel(trees=trees, chol=chol, resample_seeds=seeds, hyper=hyper,
                       resample=resample)


def predict_forest(model, X_new, mode="mean", data=None, coords_new=None, spec=None,
                   m=10):
    """Forest estimate of ``h`` at ``X_new``, optionally plus kriged residuals.

    ``mode="kriging"`` needs the training ``data`` (features in ``data.X``),
    the new locations ``coords_new`` and a covariance ``spec`` (defaults to
    the model's working fit); training residuals ``y - h_hat(X)`` are kriged
    with ``m`` nearest neighbors.
    """
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    p = _n_features(model)
    if p is not None and X_new.shape[1] < p:
        raise ValueError(f"X_new has {X_new.shape[1]} features, trees use {p}")
    mean = model.predict_trees(X_new).mean(axis=0)
    if mode == "mean":
        return mean
    if mode != "kriging":
        raise ValueError(f"unknown prediction mode {mode!r}")
    if data is None or coords_new is None:
        raise ValueError("kriging mode needs training data and new coordinates")
    spec = spec or (model.fit.spec if model.fit is not None else None)
    if spec is None:
        raise ValueError("kriging mode needs a covariance spec")
    resid = data.y - model.predict_trees(data.X).mean(axis=0)
    rdata = RegressionData(resid, np.ones((data.n, 1)), data.locs)
    zero = FitResult(beta=np.zeros(1), spec=spec, loglik=math.nan, converged=True,
                     iterations=0)
    krig, _ = predict(rdata, zero, coords_new, m)
    return mean + krig


def _n_features(model):
    used = [-1]
    for tree in model.trees:
        stack = [tree]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                used.append(node.feature)
                stack.extend((node.left, node.right))
    return max(used) + 1 if max(used) >= 0 else None


def fit_rfgls(data, graph, hyper=ForestHyper(), seed=0, family="exponential",
              init=None, resample=True, n_jobs=1):
    """Plug-in RF-GLS: fit a linear spatial model, then grow the forest.

    The working covariance comes from maximum likelihood on the design
    ``[1, X]``; its response-level factor decorrelates the forest.
    """
    X1 = np.column_stack([np.ones(data.n), data.X])
    lin = RegressionData(data.y, X1, data.locs)
    if init is None:
        init = default_init(lin, family)
    fit = fit_mle(lin, graph, init, family=family)
    chol = build_factor(data.locs, graph, fit.spec, "response")
    model = fit_forest(data, chol, hyper, seed, resample, n_jobs)
    model.fit = fit
    return model

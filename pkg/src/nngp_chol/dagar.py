"""Areal models on region adjacency graphs.

DAGAR builds a sparse Cholesky factor directly from the graph: each region
regresses on its adjacent predecessors in the chosen ordering, with the
coefficients and conditional variance of an autoregressive covariance on
the star tree joining the region to those predecessors.  Proper CAR is kept
as a dense baseline.
"""
from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite
from .factor import SparseCholesky, apply_factor, log_det

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class ArealGraph:
    n_regions: int
    edges: np.ndarray  # (e, 2), each undirected edge once
    order: np.ndarray

    def __post_init__(self):
        n = int(self.n_regions)
        edges = np.asarray(self.edges, dtype=np.intp).reshape(-1, 2)
        if np.any(edges < 0) or np.any(edges >= n):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        key = np.sort(edges, axis=1)
        if len(np.unique(key, axis=0)) != len(key):
            raise ValueError("duplicate edge")
        order = np.asarray(self.order, dtype=np.intp)
        if not np.array_equal(np.sort(order), np.arange(n)):
            raise ValueError("order must be a permutation of the regions")
        object.__setattr__(self, "n_regions", n)
        object.__setattr__(self, "edges", key)
        object.__setattr__(self, "order", order)

    @classmethod
    def from_edges(cls, n_regions, edges, order=None):
        if order is None:
            order = np.arange(n_regions)
        return cls(n_regions, edges, order)

    def with_order(self, order):
        return ArealGraph(self.n_regions, self.edges, order)

    def adjacency(self):
        a = np.zeros((self.n_regions, self.n_regions))
        a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def degrees(self):
        return self.adjacency().sum(axis=1)

    def rank(self):
        """Position of each region in the ordering."""
        r = np.empty(self.n_regions, dtype=np.intp)
        r[self.order] = np.arange(self.n_regions)
        return r


@dataclass(frozen=True)
class DagarSpec:
    rho: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")


def region_order(graph, strategy="input", seed=None):
    """Ordering of regions: ``input``, ``degree`` (descending, ties by label) or ``random``."""
    n = graph.n_regions
    if strategy == "input":
        return np.arange(n)
    if strategy == "degree":
        return np.lexsort((np.arange(n), -graph.degrees()))
    if strategy == "random":
        return np.random.default_rng(seed).permutation(n)
    raise ValueError(f"unknown region ordering {strategy!r}")


def path_graph(n):
    return ArealGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(leaves):
    """Center is region 0 and comes first in the ordering."""
    return ArealGraph.from_edges(leaves + 1, [(0, j) for j in range(1, leaves + 1)])


def grid_graph(rows, cols):
    """Rook adjacency on a grid, regions numbered row-major."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return ArealGraph.from_edges(rows * cols, edges)


def grid_groups(rows, cols):
    """Vertex and edge symmetry classes of a rectangular grid.

    Vertices are grouped by their distances to the nearest horizontal and
    vertical borders (unordered when the grid is square); an edge's class is
    the unordered pair of its endpoint classes together with its direction
    on non-square grids.
    """
    square = rows == cols
    vertex = {}
    for r in range(rows):
        for c in range(cols):
            a, b = min(r, rows - 1 - r), min(c, cols - 1 - c)
            vertex[r * cols + c] = tuple(sorted((a, b))) if square else (a, b)
    names = {key: "v" + "".join(map(str, key)) for key in set(vertex.values())}
    vgroups = {v: names[k] for v, k in vertex.items()}
    g = grid_graph(rows, cols)
    egroups = {}
    for i, j in g.edges:
        direction = "" if square else ("h" if j - i == 1 else "v")
        key = tuple(sorted((vgroups[i], vgroups[j]))) + (direction,)
        egroups[(int(i), int(j))] = "-".join(k for k in key if k)
    return vgroups, egroups


def build_dagar_factor(graph, spec):
    """Sparse factor of the DAGAR precision ``(I - B)' F^{-1} (I - B)``.

    Row ``i`` (in ordered positions) regresses on its ``k`` adjacent
    predecessors with coefficient ``rho / (1 + (k - 1) rho^2)`` each and
    conditional variance ``sigma2 (1 - rho^2) / (1 + (k - 1) rho^2)``.
    """
    rank = graph.rank()
    rho, s2 = float(spec.rho), float(spec.sigma2)
    preds = [[] for _ in range(graph.n_regions)]
    for a, b in graph.edges:
        ra, rb = rank[a], rank[b]
        if ra < rb:
            preds[rb].append(ra)
        else:
            preds[ra].append(rb)
    coefs, f = [], np.empty(graph.n_regions)
    for i, p in enumerate(preds):
        denom = 1.0 + (len(p) - 1) * rho * rho
        coefs.append(np.full(len(p), rho / denom))
        f[i] = s2 * (1.0 - rho * rho) / denom
    return SparseCholesky.from_rows(preds, coefs, f)


def dagar_precision(graph, spec):
    """Dense DAGAR precision in region labels (small graphs)."""
    chol = build_dagar_factor(graph, spec)
    lmat = chol.dense()
    q_ord = lmat.T @ lmat
    rank = graph.rank()
    return q_ord[np.ix_(rank, rank)]


def dagar_covariance(graph, spec):
    """Dense DAGAR covariance in region labels (small graphs)."""
    chol = build_dagar_factor(graph, spec)
    rank = graph.rank()
    return chol.dense_covariance()[np.ix_(rank, rank)]


def dagar_loglik(graph, spec, w):
    """Gaussian log-density of ``w`` (region labels) under DAGAR; O(n + e)."""
    w = np.asarray(w, dtype=float)
    if w.shape != (graph.n_regions,):
        raise ValueError(f"w must have length {graph.n_regions}")
    chol = build_dagar_factor(graph, spec)
    u = apply_factor(chol, w[graph.order])
    return float(-0.5 * (chol.n * LOG_2PI + log_det(chol) + u @ u))


def car_precision(graph, rho, sigma2=1.0, tol=1e-10):
    """Dense proper-CAR precision ``(D - rho A) / sigma2``."""
    a = graph.adjacency()
    q = (np.diag(a.sum(axis=1)) - rho * a) / sigma2
    lam = np.linalg.eigvalsh(q)[0]
    if lam <= tol * max(1.0, 1.0 / sigma2):
        raise NotPositiveDefinite(lam)
    return q


def _groupwise(values, groups):
    out = {}
    for key, g in groups.items():
        out.setdefault(g, []).append(values[key])
    return {g: np.asarray(v) for g, v in out.items()}


def car_diagnostics(graph, rho_grid, vertex_groups, edge_groups, sigma2=1.0,
                    model="car"):
    """Per-group variances and neighbor correlations over a grid of ``rho``.

    Returns a list of dict rows with keys ``rho``, ``kind`` ("variance" or
    "correlation"), ``group``, ``mean``, ``min``, ``max`` and ``singular``.
    ``model`` picks the CAR baseline or DAGAR.  Values of ``rho`` that make
    the CAR precision singular are reported with ``singular=True`` and NaNs.
    """
    rows = []
    vnames = sorted(set(vertex_groups.values()))
    enames = sorted(set(edge_groups.values()))
    for rho in rho_grid:
        try:
            if model == "car":
                cov = np.linalg.inv(car_precision(graph, rho, sigma2))
            elif model == "dagar":
                cov = dagar_covariance(graph, DagarSpec(rho, sigma2))
            else:
                raise ValueError(f"unknown model {model!r}")
        except (NotPositiveDefinite, ValueError) as exc:
            if isinstance(exc, ValueError) and model != "dagar":
                raise
            for kind, names in (("variance", vnames), ("correlation", enames)):
                for g in names:
                    rows.append(dict(rho=rho, kind=kind, group=g, mean=np.nan,
                                     min=np.nan, max=np.nan, singular=True))
            continue
        sd = np.sqrt(np.diag(cov))
        corr = cov / np.outer(sd, sd)
        var = _groupwise({v: cov[v, v] for v in vertex_groups}, vertex_groups)
        cor = _groupwise({e: corr[e[0], e[1]] for e in edge_groups}, edge_groups)
        for kind, table in (("variance", var), ("correlation", cor)):
            for g in sorted(table):
                vals = table[g]
                rows.append(dict(rho=rho, kind=kind, group=g, mean=float(vals.mean()),
                                 min=float(vals.min()), max=float(vals.max()),
                                 singular=False))
    return rows

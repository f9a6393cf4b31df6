"""Location ordering and directed nearest-neighbor sets.

All downstream factors work in *ordered* positions: position ``i`` refers
to the input point ``locs.order[i]``.  ``LocationSet.to_ordered`` and
``LocationSet.from_ordered`` move vectors between the two index spaces.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DuplicateLocation

# rows below this position are searched by brute force; beyond it a k-d tree
# query with a doubling candidate count takes over
_BRUTE_LIMIT = 256


@dataclass(frozen=True, eq=False)
class LocationSet:
    coords: np.ndarray
    order: np.ndarray

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=float)
        order = np.asarray(self.order, dtype=np.intp)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError("coords must have shape (n, 2)")
        if coords.shape[0] < 1:
            raise ValueError("need at least one location")
        if order.shape != (coords.shape[0],) or not np.array_equal(
            np.sort(order), np.arange(coords.shape[0])
        ):
            raise ValueError("order must be a permutation of 0..n-1")
        _check_distinct(coords)
        coords.setflags(write=False)
        order.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "order", order)

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def ordered_coords(self):
        return self.coords[self.order]

    def to_ordered(self, v):
        return np.asarray(v)[self.order]

    def from_ordered(self, v):
        v = np.asarray(v)
        out = np.empty_like(v)
        out[self.order] = v
        return out


def _check_distinct(coords):
    _, first, counts = np.unique(coords, axis=0, return_index=True, return_counts=True)
    if np.any(counts > 1):
        dup = coords[first[np.argmax(counts > 1)]]
        raise DuplicateLocation(f"location {tuple(dup)} appears more than once")


def order_locations(points, strategy="coordinate", seed=None):
    """Build a :class:`LocationSet` under a Vecchia ordering.

    ``strategy`` is ``"coordinate"`` (sort by first coordinate, ties by the
    second, then by input index) or ``"random"`` (uniform permutation drawn
    from ``numpy.random.default_rng(seed)``).
    """
    coords = np.atleast_2d(np.asarray(points, dtype=float))
    n = coords.shape[0]
    if n < 1:
        raise ValueError("need at least one location")
    _check_distinct(coords)
    if strategy in ("coordinate", "coordinate-sort"):
        order = np.lexsort((np.arange(n), coords[:, 1], coords[:, 0]))
    elif strategy == "random":
        order = np.random.default_rng(seed).permutation(n)
    elif strategy == "identity":
        order = np.arange(n)
    else:
        raise ValueError(f"unknown ordering strategy {strategy!r}")
    return LocationSet(coords, order)


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Directed neighbor sets over ordered positions.

    ``nbr`` is an ``(n, m)`` array whose row ``i`` starts with the sorted
    neighbor positions of ``i`` followed by -1 padding; ``counts[i]`` is the
    number of real entries, ``min(i, m)``.
    """

    nbr: np.ndarray
    counts: np.ndarray
    m: int
    coords: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.nbr.shape[0]

    @property
    def neighbors(self):
        return [self.nbr[i, : self.counts[i]].tolist() for i in range(self.n)]

    def __getitem__(self, i):
        return self.nbr[i, : self.counts[i]]


def _row_distances(coords, i, cand):
    d = coords[cand] - coords[i]
    return np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)


def _select(cand, dist, m):
    """Take the ``m`` smallest (distance, index) pairs per row, then sort by index."""
    by_idx = np.argsort(cand, axis=1, kind="stable")
    cand = np.take_along_axis(cand, by_idx, axis=1)
    dist = np.take_along_axis(dist, by_idx, axis=1)
    by_dist = np.argsort(dist, axis=1, kind="stable")[:, :m]
    chosen = np.take_along_axis(cand, by_dist, axis=1)
    return np.sort(chosen, axis=1)


def build_neighbor_graph(locs, m):
    """Exact ``m``-nearest earlier neighbors for every ordered position.

    Distance ties go to the smaller ordered index.  The k-d tree is only an
    accelerator: each row's candidate set is grown until it provably holds
    every point within the ``m``-th neighbor distance, and the final choice
    is made on recomputed Euclidean distances.
    """
    m = int(m)
    if m < 1:
        raise ValueError("m must be at least 1")
    coords = np.ascontiguousarray(locs.ordered_coords)
    n = coords.shape[0]
    width = max(min(m, n - 1), 0)
    nbr = np.full((n, max(width, 1)), -1, dtype=np.intp)
    counts = np.minimum(np.arange(n), m).astype(np.intp)

    brute_end = min(n, max(_BRUTE_LIMIT, 4 * m))
    for i in range(1, brute_end):
        if i <= m:
            nbr[i, :i] = np.arange(i)
            continue
        cand = np.arange(i)[None, :]
        dist = _row_distances(coords, i, cand[0])[None, :]
        nbr[i, :m] = _select(cand, dist, m)[0]

    pending = np.arange(brute_end, n)
    if len(pending):
        tree = cKDTree(coords)
        k = min(n, 4 * m + 1)
        while len(pending):
            tdist, cand = tree.query(coords[pending], k=k)
            tdist = tdist.reshape(len(pending), k)
            cand = cand.reshape(len(pending), k).astype(np.intp)
            valid = cand < pending[:, None]
            enough = valid.sum(axis=1) >= m
            dist = np.where(valid, _row_distances(coords, pending[:, None], cand), np.inf)
            dm = np.sort(dist, axis=1)[:, m - 1] if k >= m else np.full(len(pending), np.inf)
            # all points at distance <= dm must be among the candidates
            covered = (tdist[:, -1] > dm * (1 + 1e-9) + 1e-300) | (k == n)
            done = enough & covered
            if np.any(done):
                rows = pending[done]
                c = np.where(valid[done], cand[done], n + rows[:, None])
                nbr[rows, :m] = _select(c, dist[done], m)
            pending = pending[~done]
            k = min(n, 2 * k)
    nbr.setflags(write=False)
    counts.setflags(write=False)
    coords.setflags(write=False)
    return NeighborGraph(nbr=nbr, counts=counts, m=m, coords=coords)


def brute_force_neighbors(locs, m):
    """Quadratic-time reference search with the same tie rule."""
    coords = locs.ordered_coords
    out = []
    for i in range(coords.shape[0]):
        d = np.sqrt(np.sum((coords[:i] - coords[i]) ** 2, axis=1))
        pick = sorted(range(i), key=lambda j: (d[j], j))[:m]
        out.append(sorted(pick))
    return out


def nearest_observed(coords, new_points, m):
    """Indices of the ``m`` nearest observed points for each new point.

    Unlike the directed search there is no ordering restriction.
    """
    coords = np.asarray(coords, dtype=float)
    new_points = np.atleast_2d(np.asarray(new_points, dtype=float))
    m = min(int(m), coords.shape[0])
    tree = cKDTree(coords)
    _, idx = tree.query(new_points, k=m)
    return np.asarray(idx, dtype=np.intp).reshape(len(new_points), m)

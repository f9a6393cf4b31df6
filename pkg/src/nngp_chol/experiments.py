"""Desk-scale experiment drivers used by the CLI and the acceptance suite.

Each driver returns plain arrays and dicts; writing files is left to
:mod:`nngp_chol.cli`.
"""
import time

import numpy as np

from .covariance import CovarianceSpec, matched_range_phi
from .errors import NNGPError
from .factor import (
    apply_factor,
    build_factor,
    dense_covariance_matrix,
    simulate,
)
from .geometry import build_neighbor_graph, order_locations

# largest n for which a dense covariance is ever formed (~0.5 GB of doubles)
DENSE_MAX_N = 8000
MIN_REPLICATES = 100


class DenseTooLarge(NNGPError, MemoryError):
    def __init__(self, n, limit):
        super().__init__(
            f"n={n} exceeds the dense-covariance limit of {limit}; a dense n x n "
            "covariance and its Cholesky factor would not fit in memory"
        )


def random_locations(n, seed):
    """``n`` uniform points on the unit square."""
    return np.random.default_rng(seed).uniform(size=(n, 2))


def experiment_spec(family, sigma2=1.0, phi=3.0, tau2=0.0):
    """Covariance for a kernel comparison; ``phi`` is given on the exponential scale.

    Non-exponential families get the decay rate with the same 0.05
    effective range.
    """
    return CovarianceSpec(family, sigma2, matched_range_phi(phi, family), tau2)


def _dense_chol(locs, spec, dense_max_n):
    if locs.n > dense_max_n:
        raise DenseTooLarge(locs.n, dense_max_n)
    return np.linalg.cholesky(dense_covariance_matrix(locs, spec, "response"))


def decorrelation_experiment(n=200, m=10, replicates=2000, family="exponential",
                             sigma2=1.0, phi=3.0, tau2=0.0, ordering="coordinate",
                             seed=0, dense_max_n=2500):
    """Decorrelate full-GP replicates with the nearest-neighbor response factor.

    Returns the sample covariance of the decorrelated vectors (ordered
    positions) with summaries of its diagonal and off-diagonal entries.
    """
    if replicates < MIN_REPLICATES:
        raise ValueError(
            f"need at least {MIN_REPLICATES} replicates for a usable sample covariance, "
            f"got {replicates}"
        )
    ss = np.random.SeedSequence(seed)
    loc_seed, order_seed, draw_seed = ss.spawn(3)
    spec = experiment_spec(family, sigma2, phi, tau2)
    locs = order_locations(random_locations(n, loc_seed), ordering, seed=order_seed)
    chol_dense = _dense_chol(locs, spec, dense_max_n)
    z = np.random.default_rng(draw_seed).standard_normal((n, replicates))
    data = chol_dense @ z  # full-GP replicates, columns
    graph = build_neighbor_graph(locs, m)
    factor = build_factor(locs, graph, spec, "response")
    dec = apply_factor(factor, data)
    cov = np.cov(dec)
    raw_cov = np.cov(data)
    off = cov[~np.eye(n, dtype=bool)]
    return {
        "spec": spec,
        "locs": locs,
        "sample_cov": cov,
        "raw_sample_cov": raw_cov,
        "diag": np.diag(cov).copy(),
        "offdiag": off,
        "mean_diag": float(np.mean(np.diag(cov))),
        "mean_abs_offdiag": float(np.mean(np.abs(off))),
    }


def sim_compare(n=100, m=5, replicates=10000, family="exponential", sigma2=1.0,
                phi=3.0, tau2=0.0, ordering="coordinate", seed=0, dense_max_n=2500):
    """Sample covariances of full-GP and nearest-neighbor draws.

    Dense and nearest-neighbor draws use independent normal streams.  The
    standard error of each NNGP sample-covariance entry is the Gaussian
    value ``sqrt((Ct_ii Ct_jj + Ct_ij^2) / R)`` with ``Ct`` the exact
    nearest-neighbor covariance.
    """
    if replicates < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} replicates, got {replicates}")
    ss = np.random.SeedSequence(seed)
    loc_seed, order_seed, dense_seed, nngp_seed = ss.spawn(4)
    spec = experiment_spec(family, sigma2, phi, tau2)
    locs = order_locations(random_locations(n, loc_seed), ordering, seed=order_seed)
    chol_dense = _dense_chol(locs, spec, dense_max_n)
    dense = chol_dense @ np.random.default_rng(dense_seed).standard_normal((n, replicates))
    graph = build_neighbor_graph(locs, m)
    factor = build_factor(locs, graph, spec, "response")
    nngp = simulate(factor, nngp_seed, replicates).T
    s_dense = np.cov(dense)
    s_nngp = np.cov(nngp)
    c_exact = dense_covariance_matrix(locs, spec, "response")
    c_tilde = factor.dense_covariance()
    d = np.diag(c_tilde)
    stderr = np.sqrt((np.outer(d, d) + c_tilde**2) / replicates)
    return {
        "spec": spec,
        "locs": locs,
        "cov_dense": s_dense,
        "cov_nngp": s_nngp,
        "cov_exact": c_exact,
        "cov_tilde": c_tilde,
        "difference": s_nngp - s_dense,
        "z_scores": (s_nngp - c_tilde) / stderr,
        "mean_difference": float(np.mean(s_nngp - s_dense)),
        "mean_difference_vs_exact": float(np.mean(s_nngp - c_exact)),
    }


def time_nngp_simulation(n, draws=100, m=10, family="exponential", sigma2=1.0,
                         phi=3.0, tau2=0.0, seed=0):
    """Wall time of ordering, neighbor search, factor build and ``draws`` draws."""
    pts = random_locations(n, seed)
    t0 = time.perf_counter()
    locs = order_locations(pts, "coordinate")
    graph = build_neighbor_graph(locs, m)
    factor = build_factor(locs, graph, experiment_spec(family, sigma2, phi, tau2), "response")
    simulate(factor, seed, draws)
    return time.perf_counter() - t0


def time_dense_simulation(n, draws=100, family="exponential", sigma2=1.0, phi=3.0,
                          tau2=0.0, seed=0, dense_max_n=DENSE_MAX_N):
    """Wall time of covariance assembly, dense Cholesky and ``draws`` draws."""
    if n > dense_max_n:
        raise DenseTooLarge(n, dense_max_n)
    pts = random_locations(n, seed)
    t0 = time.perf_counter()
    locs = order_locations(pts, "identity")
    chol = _dense_chol(locs, experiment_spec(family, sigma2, phi, tau2), dense_max_n)
    chol @ np.random.default_rng(seed).standard_normal((n, draws))
    return time.perf_counter() - t0


def bench(n_grid=(1000, 2500, 5000), draws=100, reps=5, m=10, family="exponential",
          sigma2=1.0, phi=3.0, tau2=0.0, seed=0, dense=True, dense_max_n=DENSE_MAX_N):
    """Mean and standard deviation of simulation times over ``reps`` runs.

    Rows have keys ``method``, ``n``, ``mean``, ``sd``, ``reps``; the dense
    method reports ``None`` timings above ``dense_max_n``.
    """
    rows = []
    kw = dict(family=family, sigma2=sigma2, phi=phi, tau2=tau2)
    for n in n_grid:
        times = [time_nngp_simulation(n, draws, m, seed=seed + r, **kw) for r in range(reps)]
        rows.append(dict(method="nngp", n=n, mean=float(np.mean(times)),
                         sd=float(np.std(times, ddof=1)) if reps > 1 else 0.0, reps=reps))
        if not dense:
            continue
        if n > dense_max_n:
            rows.append(dict(method="dense", n=n, mean=None, sd=None, reps=0))
            continue
        times = [time_dense_simulation(n, draws, seed=seed + r, dense_max_n=dense_max_n, **kw)
                 for r in range(reps)]
        rows.append(dict(method="dense", n=n, mean=float(np.mean(times)),
                         sd=float(np.std(times, ddof=1)) if reps > 1 else 0.0, reps=reps))
    return rows


def nngp_variances(locs, m, spec, dense_limit=3000, sims=20000, seed=0):
    """Marginal variances of the latent nearest-neighbor process by order index.

    Exact (dense reconstruction) up to ``dense_limit`` locations, otherwise a
    Monte Carlo estimate from ``sims`` draws.
    """
    graph = build_neighbor_graph(locs, m)
    factor = build_factor(locs, graph, spec, "latent")
    if locs.n <= dense_limit:
        return np.diag(factor.dense_covariance()).copy()
    draws = simulate(factor, seed, sims)
    return np.mean(draws * draws, axis=0)


def homoskedasticity(n=200, m=5, family="exponential", sigma2=1.0, phi=1.0, seed=0,
                     orderings=("coordinate", "random")):
    """Latent NNGP variances against order index for several orderings."""
    ss = np.random.SeedSequence(seed)
    loc_seed, order_seed = ss.spawn(2)
    pts = random_locations(n, loc_seed)
    spec = CovarianceSpec(family, sigma2, phi, 0.0)
    out = {}
    for ordering in orderings:
        locs = order_locations(pts, ordering, seed=order_seed)
        out[ordering] = nngp_variances(locs, m, spec)
    return out

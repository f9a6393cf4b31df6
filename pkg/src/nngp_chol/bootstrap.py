"""Parametric spatial bootstrap through the sparse response factor.

Residuals are decorrelated with ``L_y``, resampled iid with replacement,
and mapped back to the data scale with the sparse forward substitution, so
every replicate costs linear time and memory.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NNGPError
from .factor import apply_factor, backsolve_factor, build_factor
from .inference import RegressionData, fit_mle


@dataclass(frozen=True)
class BootstrapResult:
    estimates: np.ndarray  # (B_ok, p + 3): beta..., sigma2, phi, tau2
    intervals: np.ndarray  # (p + 3, 2)
    B: int
    seed: int
    level: float
    failures: int = 0
    names: tuple = field(default=())

    def interval(self, level):
        return percentile_intervals(self.estimates, level)


def replicate_seed(seed, b):
    """Seed for replicate ``b``, independent of execution order."""
    return int(np.random.SeedSequence([int(seed), int(b)]).generate_state(1)[0])


def decorrelate(data, fit, graph):
    """``L_y (y - X beta_hat)`` in ordered positions."""
    chol = build_factor(data.locs, graph, fit.spec, "response")
    y, X = data.ordered()
    return apply_factor(chol, y - X @ fit.beta)


def make_bootstrap_dataset(data, fit, r, resample_seed, chol=None, graph=None):
    """One bootstrap response vector in the data's row order."""
    if chol is None:
        if graph is None:
            raise ValueError("need either the response factor or the neighbor graph")
        chol = build_factor(data.locs, graph, fit.spec, "response")
    r = np.asarray(r, dtype=float)
    rng = np.random.default_rng(resample_seed)
    rb = r[rng.integers(0, r.shape[0], size=r.shape[0])]
    return data.X @ fit.beta + data.locs.from_ordered(backsolve_factor(chol, rb))


def percentile_intervals(estimates, level):
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    alpha = (1.0 - level) / 2.0
    lo = np.quantile(estimates, alpha, axis=0, method="linear")
    hi = np.quantile(estimates, 1.0 - alpha, axis=0, method="linear")
    return np.column_stack([lo, hi])


def _refit(args):
    data, graph, fit, y_b, estimate_nugget = args
    boot = RegressionData(y_b, data.X, data.locs)
    try:
        res = fit_mle(boot, graph, fit.spec, estimate_nugget=estimate_nugget)
    except (NNGPError, np.linalg.LinAlgError):
        return None
    return res.params() if res.converged else None


def run_bootstrap(data, graph, fit, B=250, level=0.95, seed=0, n_jobs=1,
                  estimate_nugget=True):
    """Refit the model on ``B`` bootstrap datasets and form percentile intervals.

    Replicates whose fit fails or does not converge are dropped and counted
    in ``failures``.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    chol = build_factor(data.locs, graph, fit.spec, "response")
    y, X = data.ordered()
    r = apply_factor(chol, y - X @ fit.beta)
    datasets = [
        make_bootstrap_dataset(data, fit, r, replicate_seed(seed, b), chol=chol)
        for b in range(B)
    ]
    jobs = [(data, graph, fit, y_b, estimate_nugget) for y_b in datasets]
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_refit, jobs, chunksize=max(1, B // (4 * n_jobs))))
    else:
        results = [_refit(job) for job in jobs]
    ok = [row for row in results if row is not None]
    if len(ok) < 2:
        raise NNGPError(f"only {len(ok)} of {B} bootstrap refits succeeded")
    estimates = np.vstack(ok)
    names = tuple(f"beta{j}" for j in range(data.p)) + ("sigma2", "phi", "tau2")
    return BootstrapResult(
        estimates=estimates,
        intervals=percentile_intervals(estimates, level),
        B=B,
        seed=seed,
        level=level,
        failures=B - len(ok),
        names=names,
    )

"""Nearest-neighbor likelihood, maximum likelihood fitting and kriging."""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .covariance import CovarianceSpec, kernel_from_code
from .errors import NonFiniteLikelihood, NNGPError, SingularDesign
from .factor import apply_factor, build_factor, log_det
from .geometry import nearest_observed

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class RegressionData:
    """Responses ``y`` and design ``X`` with rows aligned to ``locs.coords``."""

    y: np.ndarray
    X: np.ndarray
    locs: object

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.shape[0] or y.shape[0] != self.locs.n:
            raise ValueError(
                f"dimension mismatch: y has {y.shape[0]} rows, X {X.shape[0]}, "
                f"locations {self.locs.n}"
            )
        if X.shape[1] > X.shape[0]:
            raise SingularDesign("more columns than rows in X")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def ordered(self):
        return self.locs.to_ordered(self.y), self.locs.to_ordered(self.X)


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    spec: CovarianceSpec
    loglik: float
    converged: bool
    iterations: int

    def params(self):
        """Flat parameter vector ``(beta..., sigma2, phi, tau2)``."""
        return np.concatenate([self.beta, [self.spec.sigma2, self.spec.phi, self.spec.tau2]])


def _loglik_from_factor(chol, r_ordered):
    u = apply_factor(chol, r_ordered)
    return -0.5 * (chol.n * LOG_2PI + log_det(chol) + u @ u)


def vecchia_loglik(data, graph, spec, beta):
    """Nearest-neighbor Gaussian log-likelihood of ``y`` given ``beta``."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != data.p:
        raise ValueError(f"beta has length {beta.shape[0]}, design has {data.p} columns")
    chol = build_factor(data.locs, graph, spec, "response")
    y, X = data.ordered()
    return float(_loglik_from_factor(chol, y - X @ beta))


def profile_beta(data, chol):
    """GLS estimate of ``beta`` under the factor's covariance."""
    y, X = data.ordered()
    lx = apply_factor(chol, X)
    ly = apply_factor(chol, y)
    return _gls(lx, ly)


def _gls(lx, ly):
    q, r = np.linalg.qr(lx)
    d = np.abs(np.diag(r))
    if d.size == 0 or d.min() <= 1e-10 * max(d.max(), 1e-300):
        raise SingularDesign("design matrix is rank deficient after decorrelation")
    return np.linalg.solve(r, q.T @ ly)


def profiled_loglik(data, graph, spec):
    """Log-likelihood with ``beta`` replaced by its GLS estimate; returns (ll, beta)."""
    chol = build_factor(data.locs, graph, spec, "response")
    y, X = data.ordered()
    lx = apply_factor(chol, X)
    ly = apply_factor(chol, y)
    beta = _gls(lx, ly)
    u = ly - lx @ beta
    ll = -0.5 * (chol.n * LOG_2PI + log_det(chol) + u @ u)
    return float(ll), beta


def default_init(data, family="exponential"):
    """Starting values from the data alone.

    The OLS residual variance is split evenly between ``sigma2`` and
    ``tau2``, and ``phi`` puts the exponential effective range at half the
    diagonal of the bounding box.
    """
    coef, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    v = float(np.var(data.y - data.X @ coef))
    if not v > 0:
        v = 1.0
    span = np.ptp(data.locs.coords, axis=0)
    diag = float(np.hypot(*span)) or 1.0
    return CovarianceSpec(family, 0.5 * v, 6.0 / diag, 0.5 * v)


def fit_mle(data, graph, init, family=None, estimate_nugget=True, maxiter=500,
            xatol=1e-6, simplex_step=0.25):
    """Maximize the profiled nearest-neighbor likelihood.

    Nelder-Mead runs over ``(log sigma2, log phi[, log tau2])`` and stops once
    every simplex vertex lies within ``xatol`` of the best one or after
    ``maxiter`` iterations.  A zero starting nugget is moved to
    ``1e-3 * sigma2`` when the nugget is estimated.
    """
    family = family or init.family
    tau2_0 = init.tau2
    if estimate_nugget and tau2_0 <= 0:
        tau2_0 = 1e-3 * init.sigma2
    x0 = [np.log(init.sigma2), np.log(init.phi)]
    if estimate_nugget:
        x0.append(np.log(tau2_0))
    x0 = np.array(x0)

    def unpack(x):
        tau2 = np.exp(x[2]) if estimate_nugget else init.tau2
        return CovarianceSpec(family, float(np.exp(x[0])), float(np.exp(x[1])), float(tau2))

    def objective(x):
        if np.any(np.abs(x) > 50):
            return np.inf
        try:
            ll, _ = profiled_loglik(data, graph, unpack(x))
        except (NNGPError, np.linalg.LinAlgError, ValueError):
            return np.inf
        return -ll if np.isfinite(ll) else np.inf

    f0 = objective(x0)
    if not np.isfinite(f0):
        raise NonFiniteLikelihood(f"log-likelihood is not finite at the starting values {init}")
    simplex = np.vstack([x0, x0 + simplex_step * np.eye(len(x0))])
    res = minimize(
        objective, x0, method="Nelder-Mead",
        options={"xatol": xatol, "fatol": np.inf, "maxiter": maxiter,
                 "initial_simplex": simplex},
    )
    x = res.x if res.fun <= f0 else x0
    spec = unpack(x)
    ll, beta = profiled_loglik(data, graph, spec)
    converged = bool(res.success) and np.isfinite(ll)
    return FitResult(beta=beta, spec=spec, loglik=ll, converged=converged,
                     iterations=int(res.nit))


def predict(data, fit, new_locs, m, X_new=None):
    """Nearest-neighbor kriging, each new location conditioned independently.

    Returns ``(mean, variance)`` arrays for the response process (the nugget
    is part of both the conditioning covariance and the target variance).
    ``m`` larger than the sample size is clipped.
    """
    new_locs = np.atleast_2d(np.asarray(new_locs, dtype=float))
    k = new_locs.shape[0]
    if X_new is None:
        if data.p != 1 or not np.allclose(data.X, 1.0):
            raise ValueError("X_new is required unless the design is intercept-only")
        X_new = np.ones((k, 1))
    X_new = np.asarray(X_new, dtype=float).reshape(k, data.p)
    spec = fit.spec
    idx = nearest_observed(data.locs.coords, new_locs, m)
    pts = data.locs.coords[idx]  # (k, m, 2)
    kk = idx.shape[1]
    dnn = np.sqrt(np.sum((pts[:, :, None, :] - pts[:, None, :, :]) ** 2, axis=-1))
    cnn = kernel_from_code(spec.code, spec.sigma2, spec.phi, dnn)
    cnn[:, np.arange(kk), np.arange(kk)] += spec.tau2
    same = np.all(pts == new_locs[:, None, :], axis=-1)
    d0 = np.sqrt(np.sum((pts - new_locs[:, None, :]) ** 2, axis=-1))
    c0 = kernel_from_code(spec.code, spec.sigma2, spec.phi, d0) + spec.tau2 * same
    w = np.linalg.solve(cnn, c0[..., None])[..., 0]
    resid = data.y - data.X @ fit.beta
    means = X_new @ fit.beta + np.sum(w * resid[idx], axis=1)
    var = spec.sigma2 + spec.tau2 - np.sum(c0 * w, axis=1)
    return means, np.maximum(var, 0.0)


def latent_joint_loglik(data, chol_latent, beta, w, tau2):
    """``log N(y | X beta + w, tau2 I) + log N(w | 0, Ctilde)``.

    ``w`` is in the data's row order; ``chol_latent`` is a latent-target
    factor over the same locations.
    """
    w = np.asarray(w, dtype=float)
    r = data.y - data.X @ np.asarray(beta, dtype=float) - w
    n = data.n
    ll_y = -0.5 * (n * LOG_2PI + n * np.log(tau2) + r @ r / tau2)
    return float(ll_y + _loglik_from_factor(chol_latent, data.locs.to_ordered(w)))

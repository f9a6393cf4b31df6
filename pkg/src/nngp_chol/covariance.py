"""Stationary isotropic covariance kernels.

Three families are supported, all parameterized by a marginal variance
``sigma2``, a decay rate ``phi`` (inverse distance units) and a nugget
``tau2``::

    exponential   sigma2 * exp(-phi d)
    matern32      sigma2 * (1 + phi d) * exp(-phi d)
    gaussian      sigma2 * exp(-(phi d)^2)

The nugget is white noise: it is added only where two points coincide.
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

FAMILIES = ("exponential", "matern32", "gaussian")
_CODES = {name: code for code, name in enumerate(FAMILIES)}


def family_code(family):
    try:
        return _CODES[family]
    except KeyError:
        raise ValueError(
            f"unknown kernel family {family!r}; expected one of {FAMILIES}"
        ) from None


def kernel_from_code(code, sigma2, phi, d):
    t = phi * np.asarray(d, dtype=float)
    if code == 0:
        return sigma2 * np.exp(-t)
    if code == 1:
        return sigma2 * (1.0 + t) * np.exp(-t)
    return sigma2 * np.exp(-t * t)


@dataclass(frozen=True)
class CovarianceSpec:
    family: str = "exponential"
    sigma2: float = 1.0
    phi: float = 1.0
    tau2: float = 0.0

    def __post_init__(self):
        family_code(self.family)
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.phi > 0:
            raise ValueError(f"phi must be positive, got {self.phi}")
        if not self.tau2 >= 0:
            raise ValueError(f"tau2 must be nonnegative, got {self.tau2}")

    @property
    def code(self):
        return _CODES[self.family]

    def with_params(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return {"family": self.family, "sigma2": self.sigma2, "phi": self.phi,
                "tau2": self.tau2}


def kernel_value(spec, d, include_nugget=False):
    """Covariance at distance(s) ``d``; works elementwise on arrays."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    out = kernel_from_code(spec.code, spec.sigma2, spec.phi, d)
    if include_nugget and spec.tau2 > 0:
        out = out + np.where(d == 0, spec.tau2, 0.0)
    return out[()] if out.ndim == 0 else out


def pairwise_distances(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def cross_covariance(spec, a, b, include_nugget=False):
    """Matrix of covariances between point lists ``a`` and ``b``.

    With ``include_nugget`` the nugget lands on pairs of identical points,
    which on ``cross_covariance(spec, A, A)`` is exactly the diagonal when
    the points are distinct.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point lists must be nonempty")
    d = pairwise_distances(a, b)
    out = kernel_from_code(spec.code, spec.sigma2, spec.phi, d)
    if include_nugget and spec.tau2 > 0:
        same = np.all(a[:, None, :] == b[None, :, :], axis=-1)
        out = out + spec.tau2 * same
    return out


def matched_range_phi(phi_exponential, family, level=0.05):
    """Decay rate giving ``family`` the same effective range as an exponential.

    The effective range is the distance at which correlation falls to
    ``level``.  Used by the experiment drivers to compare kernels at a
    common spatial scale.
    """
    if family == "exponential":
        return phi_exponential
    target = -np.log(level)
    code = family_code(family)
    t = brentq(lambda t: kernel_from_code(code, 1.0, 1.0, t) - level, 1e-9, 50.0)
    return phi_exponential * t / target

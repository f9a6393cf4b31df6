"""Row-sparse Cholesky factors of nearest-neighbor precision matrices.

A factor stores, for every ordered position ``i``, regression coefficients
``b_i`` on its directed neighbors and a conditional variance ``f_i``.  The
implied lower-triangular matrix ``L = F^{-1/2}(I - B)`` satisfies
``L' L = Ctilde^{-1}``; it is never materialized except by
:meth:`SparseCholesky.dense` for small-n checks.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _backend
from .covariance import kernel_from_code
from .errors import NonPositiveConditionalVariance

# relative floor on conditional variances, in units of the marginal variance
F_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class SparseCholesky:
    nbr: np.ndarray
    counts: np.ndarray
    b: np.ndarray
    f: np.ndarray
    graph: object = field(default=None, repr=False)

    @property
    def n(self):
        return self.f.shape[0]

    @classmethod
    def identity(cls, n):
        return cls(
            nbr=np.full((n, 1), -1, dtype=np.intp),
            counts=np.zeros(n, dtype=np.intp),
            b=np.zeros((n, 1)),
            f=np.ones(n),
        )

    @classmethod
    def from_rows(cls, neighbors, coefs, f, graph=None):
        """Assemble from ragged per-row neighbor lists and coefficients."""
        n = len(f)
        width = max([len(r) for r in neighbors] + [1])
        nbr = np.full((n, width), -1, dtype=np.intp)
        b = np.zeros((n, width))
        counts = np.zeros(n, dtype=np.intp)
        for i, (row, coef) in enumerate(zip(neighbors, coefs)):
            row = np.asarray(row, dtype=np.intp)
            srt = np.argsort(row)
            nbr[i, : len(row)] = row[srt]
            b[i, : len(row)] = np.asarray(coef, dtype=float)[srt]
            counts[i] = len(row)
        return cls(nbr=nbr, counts=counts, b=b, f=np.asarray(f, dtype=float), graph=graph)

    def row(self, i):
        k = self.counts[i]
        return self.nbr[i, :k], self.b[i, :k]

    def sparse_b(self):
        rows = np.repeat(np.arange(self.n), self.counts)
        mask = np.arange(self.nbr.shape[1])[None, :] < self.counts[:, None]
        return sp.csr_matrix((self.b[mask], (rows, self.nbr[mask])), shape=(self.n, self.n))

    def sparse_l(self):
        """``L`` as a scipy CSC matrix."""
        scale = sp.diags(1.0 / np.sqrt(self.f))
        return (scale @ (sp.identity(self.n, format="csr") - self.sparse_b())).tocsc()

    def dense(self):
        """Dense ``L``; only for checks at small n."""
        return self.sparse_l().toarray()

    def dense_covariance(self):
        """Dense ``Ctilde = (I - B)^{-1} F (I - B)^{-T}``; small n only."""
        ib = np.eye(self.n) - self.sparse_b().toarray()
        inv = np.linalg.solve(ib, np.eye(self.n))
        return (inv * self.f) @ inv.T


def build_factor(locs, graph, spec, target="latent"):
    """Nearest-neighbor factor of ``C`` (latent) or ``C + tau2 I`` (response).

    Each row solves an ``m x m`` symmetric positive-definite system, so the
    work is ``O(n m^3)`` and no ``n x n`` object is allocated.
    """
    if target not in ("latent", "response"):
        raise ValueError(f"target must be 'latent' or 'response', got {target!r}")
    if graph.n != locs.n:
        raise ValueError("neighbor graph and location set disagree on n")
    tau2 = spec.tau2 if target == "response" else 0.0
    b, f = _backend.kernels().factor_rows(
        graph.coords, graph.nbr, graph.counts, spec.code, float(spec.sigma2),
        float(spec.phi), float(tau2),
    )
    _check_f(f, spec.sigma2)
    return SparseCholesky(nbr=graph.nbr, counts=graph.counts, b=b, f=f, graph=graph)


def _check_f(f, sigma2):
    bad = ~(f > F_FLOOR * sigma2)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NonPositiveConditionalVariance(i, float(f[i]))


def _as_block(v, n):
    v = np.asarray(v, dtype=float)
    if v.shape[0] != n or v.ndim > 2:
        raise ValueError(f"expected leading dimension {n}, got shape {v.shape}")
    return np.ascontiguousarray(v.reshape(n, -1)), v.ndim == 1


def apply_factor(chol, v):
    """``L v``; accepts a vector or an ``(n, k)`` block of columns."""
    block, flat = _as_block(v, chol.n)
    u = _backend.kernels().apply_rows(chol.nbr, chol.counts, chol.b, chol.f, block)
    return u[:, 0] if flat else u


def backsolve_factor(chol, z):
    """Solve ``L y = z`` by sparse forward substitution."""
    block, flat = _as_block(z, chol.n)
    y = _backend.kernels().backsolve_rows(chol.nbr, chol.counts, chol.b, chol.f, block)
    return y[:, 0] if flat else y


def log_det(chol):
    """``log det Ctilde``."""
    return float(np.sum(np.log(chol.f)))


def quad_form(chol, u, v):
    """``u' Ctilde^{-1} v``."""
    if len(u) != chol.n or len(v) != chol.n:
        raise ValueError("vector length does not match factor")
    return float(apply_factor(chol, u) @ apply_factor(chol, v))


def simulate(chol, seed, draws=1):
    """Draws from ``N(0, Ctilde)``, one per row of the returned array.

    Normals come from ``numpy.random.default_rng(seed).standard_normal``
    (PCG64 bit generator, ziggurat transform) as a ``(draws, n)`` block.
    """
    if draws < 1:
        raise ValueError("draws must be at least 1")
    z = np.random.default_rng(seed).standard_normal((draws, chol.n))
    return backsolve_factor(chol, z.T).T


def dense_covariance_matrix(locs, spec, target="latent"):
    """Full covariance over ordered positions; the dense reference path."""
    coords = locs.ordered_coords
    d = np.sqrt(np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=-1))
    c = kernel_from_code(spec.code, spec.sigma2, spec.phi, d)
    if target == "response":
        c[np.diag_indices_from(c)] += spec.tau2
    return c

"""Pure NumPy implementations of the hot kernels.

Every function here has a twin with the same signature in the compiled
``_core`` extension.  Neighbor arrays are padded: ``nbr[i, :counts[i]]``
holds the neighbor positions of row ``i`` and the remaining slots hold -1
(with zero coefficients in ``b``).
"""
import numpy as np
import scipy.sparse as sp

from .covariance import kernel_from_code


def factor_rows(coords, nbr, counts, family, sigma2, phi, tau2):
    """Per-row conditional regression coefficients and variances.

    Returns ``(b, f)``.  Rows whose neighbor covariance is not numerically
    positive definite get ``f = nan`` so the caller can report them.
    """
    n, m = nbr.shape
    b = np.zeros((n, m))
    f = np.empty(n)
    k0 = sigma2 + tau2
    f[counts == 0] = k0
    for k in np.unique(counts):
        if k == 0:
            continue
        rows = np.flatnonzero(counts == k)
        nb = nbr[rows, :k]
        pts = coords[nb]
        diff = pts[:, :, None, :] - pts[:, None, :, :]
        dnn = np.sqrt(np.sum(diff * diff, axis=-1))
        cnn = kernel_from_code(family, sigma2, phi, dnn)
        cnn[:, np.arange(k), np.arange(k)] += tau2
        dself = np.sqrt(np.sum((pts - coords[rows][:, None, :]) ** 2, axis=-1))
        c = kernel_from_code(family, sigma2, phi, dself)
        try:
            chol = np.linalg.cholesky(cnn)
        except np.linalg.LinAlgError:
            chol = None
        if chol is None:
            for r, row in enumerate(rows):
                try:
                    lr = np.linalg.cholesky(cnn[r])
                except np.linalg.LinAlgError:
                    f[row] = np.nan
                    continue
                y = np.linalg.solve(lr, c[r])
                b[row, :k] = np.linalg.solve(lr.T, y)
                f[row] = k0 - y @ y
            continue
        y = np.linalg.solve(chol, c[..., None])
        b[rows, :k] = np.linalg.solve(np.swapaxes(chol, 1, 2), y)[..., 0]
        f[rows] = k0 - np.sum(y[..., 0] ** 2, axis=1)
    return b, f


def apply_rows(nbr, counts, b, f, v):
    """``u = F^{-1/2}(I - B) v`` for a 2-D block of column vectors."""
    idx = np.where(nbr < 0, 0, nbr)
    u = v - np.einsum("ij,ijk->ik", b, v[idx])
    return u / np.sqrt(f)[:, None]


def backsolve_rows(nbr, counts, b, f, z):
    """Solve ``L y = z`` by forward substitution, one row at a time."""
    n = z.shape[0]
    y = np.empty_like(z, dtype=float)
    sf = np.sqrt(f)
    for i in range(n):
        k = counts[i]
        if k:
            y[i] = z[i] * sf[i] + b[i, :k] @ y[nbr[i, :k]]
        else:
            y[i] = z[i] * sf[i]
    return y


def scan_feature(order, xs, col_ptr, col_row, col_val, lz, w, r0, ginv,
                 min_child, rel_tol):
    """Best GLS split of one node along one feature.

    ``order`` lists the node members (ordered positions) sorted by feature
    value ``xs``.  The left child after position ``k`` is ``order[:k]``.  The
    columns of ``lz`` span the current leaf design in the decorrelated
    system, ``r0`` is the weighted GLS residual against them and ``ginv`` the
    inverse weighted Gram matrix.  Returns ``(best_reduction, best_k)`` with
    ``best_k = -1`` when no candidate is valid.
    """
    n = lz.shape[0]
    s = len(order)
    lmat = sp.csc_matrix((col_val, col_row, col_ptr), shape=(n, n))
    u = np.cumsum(lmat[:, order].toarray(), axis=1)
    wu = w[:, None] * u
    s1 = r0 @ wu
    uwu = np.sum(u * wu, axis=0)
    v = lz.T @ wu
    ewe = uwu - np.einsum("ks,kl,ls->s", v, ginv, v)
    best, best_k = 0.0, -1
    for k in range(min_child, s - min_child + 1):
        if xs[k - 1] >= xs[k]:
            continue
        e = ewe[k - 1]
        if e <= rel_tol * uwu[k - 1]:
            continue
        red = s1[k - 1] ** 2 / e
        if best_k < 0 or red > best:
            best, best_k = red, k
    return best, best_k

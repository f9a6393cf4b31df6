# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels.  Signatures mirror ``_pycore`` exactly."""
import numpy as np

from libc.math cimport exp, sqrt, NAN
from libc.stdlib cimport malloc, free


cdef inline double _kern(int family, double sigma2, double phi, double d) noexcept nogil:
    cdef double t = phi * d
    if family == 0:
        return sigma2 * exp(-t)
    elif family == 1:
        return sigma2 * (1.0 + t) * exp(-t)
    return sigma2 * exp(-t * t)


cdef inline double _dist(const double[:, ::1] xy, Py_ssize_t a, Py_ssize_t c) noexcept nogil:
    cdef double dx = xy[a, 0] - xy[c, 0]
    cdef double dy = xy[a, 1] - xy[c, 1]
    return sqrt(dx * dx + dy * dy)


def factor_rows(const double[:, ::1] coords, const Py_ssize_t[:, ::1] nbr,
                const Py_ssize_t[::1] counts, int family, double sigma2,
                double phi, double tau2):
    cdef Py_ssize_t n = nbr.shape[0], m = nbr.shape[1]
    b_arr = np.zeros((n, m))
    f_arr = np.empty(n)
    cdef double[:, ::1] b = b_arr
    cdef double[::1] f = f_arr
    cdef double *a = <double *> malloc(max(m * m, 1) * sizeof(double))
    cdef double *y = <double *> malloc(max(m, 1) * sizeof(double))
    cdef Py_ssize_t i, k, p, q, r
    cdef double s, k0 = sigma2 + tau2
    cdef bint ok
    if a == NULL or y == NULL:
        free(a)
        free(y)
        raise MemoryError()
    with nogil:
        for i in range(n):
            k = counts[i]
            # lower triangle of the neighbor covariance, right-hand side in y
            for p in range(k):
                for q in range(p + 1):
                    a[p * m + q] = _kern(family, sigma2, phi, _dist(coords, nbr[i, p], nbr[i, q]))
                a[p * m + p] += tau2
                y[p] = _kern(family, sigma2, phi, _dist(coords, nbr[i, p], i))
            ok = True
            # in-place Cholesky, lower triangle
            for p in range(k):
                s = a[p * m + p]
                for r in range(p):
                    s -= a[p * m + r] * a[p * m + r]
                if s <= 0.0:
                    ok = False
                    break
                a[p * m + p] = sqrt(s)
                for q in range(p + 1, k):
                    s = a[q * m + p]
                    for r in range(p):
                        s -= a[q * m + r] * a[p * m + r]
                    a[q * m + p] = s / a[p * m + p]
            if not ok:
                f[i] = NAN
                continue
            # forward solve: y <- chol^{-1} c
            s = k0
            for p in range(k):
                for r in range(p):
                    y[p] -= a[p * m + r] * y[r]
                y[p] /= a[p * m + p]
                s -= y[p] * y[p]
            f[i] = s
            # back solve: b <- chol^{-T} y
            for p in range(k - 1, -1, -1):
                for r in range(p + 1, k):
                    y[p] -= a[r * m + p] * y[r]
                y[p] /= a[p * m + p]
                b[i, p] = y[p]
    free(a)
    free(y)
    return b_arr, f_arr


def apply_rows(const Py_ssize_t[:, ::1] nbr, const Py_ssize_t[::1] counts,
               const double[:, ::1] b, const double[::1] f, const double[:, ::1] v):
    cdef Py_ssize_t n = v.shape[0], nc = v.shape[1], i, j, c
    out = np.empty((n, nc))
    cdef double[:, ::1] u = out
    cdef double sf
    with nogil:
        for i in range(n):
            sf = 1.0 / sqrt(f[i])
            for c in range(nc):
                u[i, c] = v[i, c]
            for j in range(counts[i]):
                for c in range(nc):
                    u[i, c] -= b[i, j] * v[nbr[i, j], c]
            for c in range(nc):
                u[i, c] *= sf
    return out


def backsolve_rows(const Py_ssize_t[:, ::1] nbr, const Py_ssize_t[::1] counts,
                   const double[:, ::1] b, const double[::1] f, const double[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0], nc = z.shape[1], i, j, c
    out = np.empty((n, nc))
    cdef double[:, ::1] y = out
    cdef double sf
    with nogil:
        for i in range(n):
            sf = sqrt(f[i])
            for c in range(nc):
                y[i, c] = z[i, c] * sf
            for j in range(counts[i]):
                for c in range(nc):
                    y[i, c] += b[i, j] * y[nbr[i, j], c]
    return out


def scan_feature(const Py_ssize_t[::1] order, const double[::1] xs,
                 const Py_ssize_t[::1] col_ptr, const Py_ssize_t[::1] col_row,
                 const double[::1] col_val, const double[:, ::1] lz,
                 const double[::1] w, const double[::1] r0,
                 const double[:, ::1] ginv, Py_ssize_t min_child, double rel_tol):
    cdef Py_ssize_t n = lz.shape[0], nk = lz.shape[1], s = order.shape[0]
    cdef Py_ssize_t k, q, t, r, a, c
    cdef double s1 = 0.0, uwu = 0.0, val, old, wr, quad, e, red
    cdef double best = 0.0
    cdef Py_ssize_t best_k = -1
    u_arr = np.zeros(n)
    v_arr = np.zeros(nk)
    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    with nogil:
        for k in range(1, s - min_child + 1):
            q = order[k - 1]
            for t in range(col_ptr[q], col_ptr[q + 1]):
                r = col_row[t]
                val = col_val[t]
                wr = w[r]
                if wr == 0.0:
                    u[r] += val
                    continue
                old = u[r]
                u[r] = old + val
                uwu += wr * (u[r] * u[r] - old * old)
                s1 += wr * r0[r] * val
                for a in range(nk):
                    v[a] += wr * val * lz[r, a]
            if k < min_child or xs[k - 1] >= xs[k]:
                continue
            quad = 0.0
            for a in range(nk):
                if v[a] == 0.0:
                    continue
                val = 0.0
                for c in range(nk):
                    val += ginv[a, c] * v[c]
                quad += v[a] * val
            e = uwu - quad
            if e <= rel_tol * uwu:
                continue
            red = s1 * s1 / e
            if best_k < 0 or red > best:
                best = red
                best_k = k
    return best, best_k

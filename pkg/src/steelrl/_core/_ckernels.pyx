# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pairwise-kernel primitives (Gaussian kernel, KDE, cross sums).

These are the innermost loops of the library: Gram construction, MMD terms
and density evaluation all reduce to pairwise squared distances pushed
through exp().  The numpy fallback in ``_pykernels`` mirrors the semantics.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, pi, pow

cnp.import_array()

BACKEND_NAME = "compiled"


def gaussian_gram(double[:, ::1] x not None, double[:, ::1] y not None, double sigma):
    """Pairwise Gaussian kernel matrix exp(-||x_i - y_j||^2 / (2 sigma^2))."""
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], d = x.shape[1]
    cdef double inv = 1.0 / (2.0 * sigma * sigma)
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, k
    cdef double s, t
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = x[i, k] - y[j, k]
                s += t * t
            o[i, j] = exp(-s * inv)
    return out


def gaussian_kde(double[:, ::1] queries not None, double[:, ::1] points not None,
                 double[::1] weights not None, double sigma):
    """Weighted Gaussian product-kernel density estimate at the query points."""
    cdef Py_ssize_t nq = queries.shape[0], n = points.shape[0], d = queries.shape[1]
    cdef double inv = 1.0 / (2.0 * sigma * sigma)
    cdef double norm = pow(2.0 * pi * sigma * sigma, -0.5 * d)
    cdef cnp.ndarray[double, ndim=1] out = np.empty(nq, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i, j, k
    cdef double acc, s, t
    for i in range(nq):
        acc = 0.0
        for j in range(n):
            s = 0.0
            for k in range(d):
                t = queries[i, k] - points[j, k]
                s += t * t
            acc += weights[j] * exp(-s * inv)
        o[i] = acc * norm
    return out


def weighted_cross_sum(double[:, ::1] x not None, double[::1] wx not None,
                       double[:, ::1] y not None, double[::1] wy not None,
                       double sigma):
    """sum_ij wx_i wy_j k(x_i, y_j)."""
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], d = x.shape[1]
    cdef double inv = 1.0 / (2.0 * sigma * sigma)
    cdef Py_ssize_t i, j, k
    cdef double total = 0.0, row, s, t
    for i in range(n):
        row = 0.0
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = x[i, k] - y[j, k]
                s += t * t
            row += wy[j] * exp(-s * inv)
        total += wx[i] * row
    return total

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled elementwise and pairwise kernels (see ``diffscm.kernels``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def silu_forward(const double[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    sig = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[:, ::1] s = sig
    cdef double v, e
    for i in range(n):
        for j in range(m):
            v = z[i, j]
            if v >= 0:
                e = 1.0 / (1.0 + exp(-v))
            else:
                e = exp(v)
                e = e / (1.0 + e)
            s[i, j] = e
            o[i, j] = v * e
    return out, sig


def silu_backward(const double[:, ::1] grad, const double[:, ::1] z, const double[:, ::1] sig):
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double s
    for i in range(n):
        for j in range(m):
            s = sig[i, j]
            o[i, j] = grad[i, j] * s * (1.0 + z[i, j] * (1.0 - s))
    return out


def adam_update(double[::1] param, const double[::1] grad, double[::1] m, double[::1] v,
                double step_size, double beta1, double beta2, double eps, double inv_bc2):
    cdef Py_ssize_t n = param.shape[0], i
    cdef double g, mi, vi
    for i in range(n):
        g = grad[i]
        mi = beta1 * m[i] + (1.0 - beta1) * g
        vi = beta2 * v[i] + (1.0 - beta2) * g * g
        m[i] = mi
        v[i] = vi
        param[i] -= step_size * mi / (sqrt(vi * inv_bc2) + eps)


def rbf_sum(const double[:, ::1] x, const double[:, ::1] y, double gamma, bint exclude_diag):
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], d = x.shape[1], i, j, k
    cdef double total = 0.0, dist, diff
    for i in range(n):
        for j in range(m):
            if exclude_diag and i == j:
                continue
            dist = 0.0
            for k in range(d):
                diff = x[i, k] - y[j, k]
                dist += diff * diff
            total += exp(-gamma * dist)
    return total

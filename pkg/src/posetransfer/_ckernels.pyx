# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled local-quintic evaluation.

Must stay operation-for-operation identical to ``_kernels_py.quintic_eval``;
the test suite compares the two backends.
"""
import numpy as np

from libc.math cimport floor


def quintic_eval(const double[::1] values, const double[::1] query, int order):
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t m = query.shape[0]
    cdef Py_ssize_t i, j, k, start
    cdef double c[6]
    cdef double u, x, p, d1, d2, fk

    out = np.empty(m, dtype=np.float64)
    cdef double[::1] res = out

    for i in range(m):
        u = query[i]
        start = <Py_ssize_t>floor(u - 2.0)
        if start < 0:
            start = 0
        elif start > n - 6:
            start = n - 6
        for j in range(6):
            c[j] = values[start + j]
        for k in range(1, 6):
            fk = <double>k
            for j in range(5, k - 1, -1):
                c[j] = (c[j] - c[j - 1]) / fk
        x = u - <double>start
        p = c[5]
        d1 = 0.0
        d2 = 0.0
        for k in range(4, -1, -1):
            fk = <double>k
            d2 = d2 * (x - fk) + 2.0 * d1
            d1 = d1 * (x - fk) + p
            p = p * (x - fk) + c[k]
        if order == 0:
            res[i] = p
        elif order == 1:
            res[i] = d1
        else:
            res[i] = d2
    return out

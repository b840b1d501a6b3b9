# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled univariate B-spline evaluation kernel.

Mirror of `hsplines._kernels_py.local_bspline_values`; see that module for
the contract.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

IS_COMPILED = True

DEF MAX_DEGREE = 32


def local_bspline_values(int p, int nu, t):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tt = np.ascontiguousarray(t, dtype=np.float64)
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    if p < 0 or p >= MAX_DEGREE:
        raise ValueError("degree out of range")
    cdef Py_ssize_t n = tt.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, p + 1), dtype=np.float64)
    if nu > p:
        return out
    cdef double buf[MAX_DEGREE + 1]
    cdef double ti
    cdef int q, j, s, w
    cdef Py_ssize_t i
    for i in range(n):
        ti = tt[i]
        buf[0] = 1.0
        for j in range(1, p + 1):
            buf[j] = 0.0
        for q in range(1, p - nu + 1):
            for j in range(q, 0, -1):
                buf[j] = ((ti + j) * buf[j] + (q + 1 - ti - j) * buf[j - 1]) / q
            buf[0] *= ti / q
        for s in range(nu):
            w = p - nu + s + 1
            for j in range(w, 0, -1):
                buf[j] -= buf[j - 1]
        for j in range(p + 1):
            out[i, j] = buf[j]
    return out

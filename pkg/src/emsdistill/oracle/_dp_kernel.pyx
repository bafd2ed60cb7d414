# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled backward value iteration over the SoE grid.

Must stay bit-identical to ``_dp_py.dp_backward``: same operand order, no
fast-math, no FMA contraction (see the build flags in setup.py).
"""

import numpy as np
from libc.math cimport fabs


cdef inline double _stage(double pros, double dsoe, double price, double feed_in) noexcept nogil:
    cdef double g = pros + dsoe
    if g >= 0:
        return g * price
    return g * feed_in


def dp_backward(pros, price, double feed_in, grid, double bound):
    cdef const double[::1] p_ = np.ascontiguousarray(pros, dtype=np.float64)
    cdef const double[::1] c_ = np.ascontiguousarray(price, dtype=np.float64)
    cdef const double[::1] g_ = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t T = p_.shape[0]
    cdef Py_ssize_t G = g_.shape[0]
    V = np.zeros((T + 1, G), dtype=np.float64)
    choice = np.zeros((T, G), dtype=np.int64)
    cdef double[:, ::1] Vv = V
    cdef long long[:, ::1] Cv = choice
    cdef Py_ssize_t t, i, j, k
    cdef double best, val, d, pt, prt
    cdef long long bk
    cdef bint any_ok
    with nogil:
        for t in range(T - 1, -1, -1):
            pt = p_[t]
            prt = c_[t]
            for i in range(G):
                d = g_[i] - g_[i]
                best = _stage(pt, d, prt, feed_in) + Vv[t + 1, i]
                bk = 0
                k = 1
                while True:
                    any_ok = False
                    j = i - k
                    if j >= 0:
                        d = g_[j] - g_[i]
                        if fabs(d) <= bound:
                            any_ok = True
                            val = _stage(pt, d, prt, feed_in) + Vv[t + 1, j]
                            if val < best:
                                best = val
                                bk = -k
                    j = i + k
                    if j < G:
                        d = g_[j] - g_[i]
                        if fabs(d) <= bound:
                            any_ok = True
                            val = _stage(pt, d, prt, feed_in) + Vv[t + 1, j]
                            if val < best:
                                best = val
                                bk = k
                    if not any_ok:
                        break
                    k += 1
                Vv[t, i] = best
                Cv[t, i] = bk
    return V, choice

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled binomial-tree kernels; see ``_fallback`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY, isfinite

cnp.import_array()


cdef inline void _step_affine(double[::1] y, Py_ssize_t k, double c0, double c1,
                              double c2, double c3, double sqrt_dt, double dt,
                              double[:, ::1] Z, bint keep_z) noexcept nogil:
    cdef Py_ssize_t j
    cdef double yu, yd, z
    for j in range(k + 1):
        yd = y[j]
        yu = y[j + 1]
        z = (yu - yd) / (2.0 * sqrt_dt)
        y[j] = 0.5 * (yu + yd) + (c0 + c1 * z + c2 * z * z + c3 * fabs(z)) * dt
        if keep_z:
            Z[k, j] = z


def sweep_affine(Py_ssize_t top, Py_ssize_t stop, Py_ssize_t claim_level, claim_vals,
                 coef, double sqrt_dt, double dt):
    cdef const double[:, ::1] c = np.ascontiguousarray(coef, dtype=np.float64)
    cdef const double[::1] x = np.ascontiguousarray(claim_vals, dtype=np.float64)
    Y_arr = np.full((top + 1, top + 1), np.nan)
    Z_arr = np.full((max(top, 1), top + 1), np.nan)
    cdef double[:, ::1] Y = Y_arr
    cdef double[:, ::1] Z = Z_arr
    cdef double[::1] y = np.zeros(top + 1)
    cdef Py_ssize_t k, j
    with nogil:
        if claim_level == top:
            for j in range(top + 1):
                y[j] = y[j] - x[j]
        for j in range(top + 1):
            Y[top, j] = y[j]
        for k in range(top - 1, stop - 1, -1):
            _step_affine(y, k, c[k, 0], c[k, 1], c[k, 2], c[k, 3], sqrt_dt, dt, Z, True)
            if k == claim_level:
                for j in range(k + 1):
                    y[j] = y[j] - x[j]
            for j in range(k + 1):
                Y[k, j] = y[j]
    return Y_arr, Z_arr


def volterra_diagonal(Py_ssize_t top, Py_ssize_t lo, Py_ssize_t hi, Py_ssize_t claim_level,
                      claim_vals, coef3, double sqrt_dt, double dt):
    cdef const double[:, :, ::1] c = np.ascontiguousarray(coef3, dtype=np.float64)
    cdef const double[::1] x = np.ascontiguousarray(claim_vals, dtype=np.float64)
    Y_arr = np.full((top + 1, top + 1), np.nan)
    Z_arr = np.full((max(top, 1), top + 1), np.nan)
    cdef double[:, ::1] Y = Y_arr
    cdef double[:, ::1] Z = Z_arr
    cdef double[:, ::1] Zs = np.full((max(top, 1), top + 1), np.nan)
    cdef double[::1] y = np.zeros(top + 1)
    cdef Py_ssize_t i, k, j, r
    with nogil:
        for i in range(lo, hi + 1):
            r = i - lo
            for j in range(top + 1):
                y[j] = 0.0
            if claim_level == top:
                for j in range(top + 1):
                    y[j] = y[j] - x[j]
            for k in range(top - 1, i - 1, -1):
                _step_affine(y, k, c[r, k, 0], c[r, k, 1], c[r, k, 2], c[r, k, 3],
                             sqrt_dt, dt, Zs, k == i)
                if k == claim_level:
                    for j in range(k + 1):
                        y[j] = y[j] - x[j]
            for j in range(i + 1):
                Y[i, j] = y[j]
            if i < top:
                for j in range(i + 1):
                    Z[i, j] = Zs[i, j]
    return Y_arr, Z_arr


def dual_sweep(Py_ssize_t top, Py_ssize_t stop, Py_ssize_t claim_level, claim_vals,
               q_grid, conj, double sqrt_dt, double dt):
    cdef const double[::1] x = np.ascontiguousarray(claim_vals, dtype=np.float64)
    cdef const double[::1] q = np.ascontiguousarray(q_grid, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(conj, dtype=np.float64)
    cdef Py_ssize_t nq = q.shape[0]
    V_arr = np.full((top + 1, top + 1), np.nan)
    A_arr = np.full((max(top, 1), top + 1), -1, dtype=np.int64)
    cdef double[:, ::1] V = V_arr
    cdef cnp.int64_t[:, ::1] A = A_arr
    cdef double[::1] v = np.zeros(top + 1)
    cdef double[::1] p = np.empty(nq)
    cdef Py_ssize_t k, j, m, best
    cdef double val, bval
    with nogil:
        for m in range(nq):
            p[m] = 0.5 * (1.0 + q[m] * sqrt_dt)
        if claim_level == top:
            for j in range(top + 1):
                v[j] = v[j] - x[j]
        for j in range(top + 1):
            V[top, j] = v[j]
        for k in range(top - 1, stop - 1, -1):
            for j in range(k + 1):
                best = -1
                bval = -INFINITY
                for m in range(nq):
                    if not isfinite(g[k, m]):
                        continue
                    val = p[m] * v[j + 1] + (1.0 - p[m]) * v[j] - g[k, m] * dt
                    if best < 0 or val > bval:
                        best = m
                        bval = val
                if best < 0:
                    best = 0
                v[j] = bval
                A[k, j] = best
            if k == claim_level:
                for j in range(k + 1):
                    v[j] = v[j] - x[j]
            for j in range(k + 1):
                V[k, j] = v[j]
    return V_arr, A_arr


def measure_sweep(Py_ssize_t top, Py_ssize_t stop, terminal, q_tri, cost_tri, double sqrt_dt):
    cdef const double[:, ::1] q = np.ascontiguousarray(q_tri, dtype=np.float64)
    cdef const double[:, ::1] cost = np.ascontiguousarray(cost_tri, dtype=np.float64)
    V_arr = np.full((top + 1, top + 1), np.nan)
    cdef double[:, ::1] V = V_arr
    cdef double[::1] v = np.array(terminal, dtype=np.float64)
    cdef Py_ssize_t k, j
    cdef double pk
    with nogil:
        for j in range(top + 1):
            V[top, j] = v[j]
        for k in range(top - 1, stop - 1, -1):
            for j in range(k + 1):
                pk = 0.5 * (1.0 + q[k, j] * sqrt_dt)
                v[j] = pk * v[j + 1] + (1.0 - pk) * v[j] + cost[k, j]
            for j in range(k + 1):
                V[k, j] = v[j]
    return V_arr

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step kernels: fused small-matrix loops that dominate training
and Monte Carlo inference.

Numerically these match the pure-numpy fallback up to floating-point
reduction order; lower-triangular factor arguments are exploited as such.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp

cnp.import_array()


def eta_matrix(double[:, ::1] means, double[:, :, ::1] chols, double[:, ::1] phi):
    cdef Py_ssize_t b = phi.shape[0]
    cdef Py_ssize_t d = phi.shape[1]
    cdef Py_ssize_t c = means.shape[0]
    out_arr = np.empty((b, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n, k, i, j
    cdef double lin, quad, t
    for n in range(b):
        for k in range(c):
            lin = 0.0
            for i in range(d):
                lin += means[k, i] * phi[n, i]
            quad = 0.0
            for i in range(d):
                t = 0.0
                for j in range(i, d):
                    t += chols[k, j, i] * phi[n, j]
                quad += t * t
            out[n, k] = lin + 0.5 * quad
    return out_arr


def weighted_outer_accum(double[:, ::1] phi, double[:, ::1] w):
    cdef Py_ssize_t b = phi.shape[0]
    cdef Py_ssize_t d = phi.shape[1]
    cdef Py_ssize_t c = w.shape[1]
    out_arr = np.zeros((c, d, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t n, k, i, j
    cdef double wk, vi
    for n in range(b):
        for k in range(c):
            wk = w[n, k]
            if wk == 0.0:
                continue
            for i in range(d):
                vi = wk * phi[n, i]
                for j in range(d):
                    out[k, i, j] += vi * phi[n, j]
    return out_arr


def weighted_scov_vec(double[:, :, ::1] chols, double[:, ::1] phi, double[:, ::1] w):
    cdef Py_ssize_t b = phi.shape[0]
    cdef Py_ssize_t d = phi.shape[1]
    cdef Py_ssize_t c = w.shape[1]
    out_arr = np.zeros((b, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    half_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] half = half_arr
    cdef Py_ssize_t n, k, i, j
    cdef double t, wk
    for n in range(b):
        for k in range(c):
            wk = w[n, k]
            for i in range(d):
                t = 0.0
                for j in range(i, d):
                    t += chols[k, j, i] * phi[n, j]
                half[i] = t
            for j in range(d):
                t = 0.0
                for i in range(j + 1):
                    t += chols[k, j, i] * half[i]
                out[n, j] += wk * t
    return out_arr


def landing_direction(double[:, ::1] x, double[:, ::1] g, double lam):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t r = x.shape[1]
    out_arr = np.empty((m, r), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    psi_arr = np.empty((m, m), dtype=np.float64)
    cdef double[:, ::1] psi = psi_arr
    gram_arr = np.empty((r, r), dtype=np.float64)
    cdef double[:, ::1] gram = gram_arr
    cdef Py_ssize_t i, j, k
    cdef double a, bb, t
    for i in range(m):
        for j in range(m):
            a = 0.0
            bb = 0.0
            for k in range(r):
                a += g[i, k] * x[j, k]
                bb += g[j, k] * x[i, k]
            psi[i, j] = 0.5 * (a - bb)
    for i in range(r):
        for j in range(r):
            t = 0.0
            for k in range(m):
                t += x[k, i] * x[k, j]
            if i == j:
                t -= 1.0
            gram[i, j] = t
    for i in range(m):
        for j in range(r):
            a = 0.0
            for k in range(m):
                a += psi[i, k] * x[k, j]
            bb = 0.0
            for k in range(r):
                bb += x[i, k] * gram[k, j]
            out[i, j] = a + 4.0 * lam * bb
    return out_arr


def mc_predict_probs(double[:, ::1] means, double[:, :, ::1] factors,
                     double[:, ::1] phi, double[:, :, ::1] xi):
    cdef Py_ssize_t kk = xi.shape[0]
    cdef Py_ssize_t c = means.shape[0]
    cdef Py_ssize_t d = means.shape[1]
    cdef Py_ssize_t b = phi.shape[0]
    out_arr = np.zeros((b, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    theta_arr = np.empty((c, d), dtype=np.float64)
    cdef double[:, ::1] theta = theta_arr
    z_arr = np.empty(c, dtype=np.float64)
    cdef double[::1] z = z_arr
    cdef Py_ssize_t s, k, i, j, n
    cdef double t, zmax, denom, inv_k
    for s in range(kk):
        for k in range(c):
            for i in range(d):
                t = means[k, i]
                for j in range(i + 1):
                    t += factors[k, i, j] * xi[s, k, j]
                theta[k, i] = t
        for n in range(b):
            zmax = -1e308
            for k in range(c):
                t = 0.0
                for i in range(d):
                    t += theta[k, i] * phi[n, i]
                z[k] = t
                if t > zmax:
                    zmax = t
            denom = 0.0
            for k in range(c):
                z[k] = c_exp(z[k] - zmax)
                denom += z[k]
            for k in range(c):
                out[n, k] += z[k] / denom
    inv_k = 1.0 / kk
    for n in range(b):
        for k in range(c):
            out[n, k] *= inv_k
    return out_arr

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step kernels (mirrors ``_pykernels``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, atan2, sin, sqrt, M_PI, INFINITY
from scipy.linalg.cython_blas cimport ddot, dgemv

cnp.import_array()

NAME = "cython"


def rbf_vector(const double[:, ::1] points, const double[::1] x, double inv_two_bw):
    cdef Py_ssize_t n = points.shape[0], d = points.shape[1], i, j
    cdef double acc, diff
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        acc = 0.0
        for j in range(d):
            diff = points[i, j] - x[j]
            acc += diff * diff
        o[i] = exp(-acc * inv_two_bw)
    return out


def ntk_vector(const double[:, ::1] points, const double[::1] point_norms,
               const double[::1] x, double x_norm):
    cdef Py_ssize_t n = points.shape[0], d = points.shape[1], i, j
    cdef double dot, c, theta, rest, ui, uj, minus, plus
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        dot = 0.0
        minus = 0.0
        plus = 0.0
        for j in range(d):
            dot += points[i, j] * x[j]
            ui = points[i, j] / point_norms[i]
            uj = x[j] / x_norm
            minus += (ui - uj) * (ui - uj)
            plus += (ui + uj) * (ui + uj)
        c = dot / (point_norms[i] * x_norm)
        if c > 1.0:
            c = 1.0
        elif c < -1.0:
            c = -1.0
        theta = 2.0 * atan2(sqrt(minus), sqrt(plus))
        rest = M_PI - theta
        o[i] = c * (sin(theta) + rest * c) + rest / M_PI
    return out


def downdate_first(const double[:, ::1] Q):
    cdef Py_ssize_t n = Q.shape[0] - 1, i, j
    cdef double inv_q11 = 1.0 / Q[0, 0]
    cdef double qi
    out = np.empty((n, n))
    cdef double[:, ::1] o = out
    cdef const double[::1] q = Q[0, 1:]
    # full rows keep the writes contiguous; q_i * q_j is symmetric bit for bit
    for i in range(n):
        qi = q[i]
        for j in range(n):
            o[i, j] = Q[i + 1, j + 1] - (qi * q[j]) * inv_q11
    return out


cdef void _block_matvec(const double[:, ::1] Q, Py_ssize_t off, const double[::1] k, double[::1] v):
    """v = Q[off:, off:] k for symmetric row-major Q (BLAS sees the transpose)."""
    cdef int m = <int>k.shape[0], lda = <int>Q.shape[1], one = 1
    cdef double alpha = 1.0, beta = 0.0
    cdef char trans = b'T'
    if m == 0:
        return
    dgemv(&trans, &m, &m, &alpha, <double*>&Q[off, off], &lda, <double*>&k[0], &one, &beta, &v[0], &one)


cdef double _dot(const double[::1] a, const double[::1] b):
    cdef int n = <int>a.shape[0], one = 1
    if n == 0:
        return 0.0
    return ddot(&n, <double*>&a[0], &one, <double*>&b[0], &one)


cdef double _schur(const double[::1] k, const double[::1] v, double c):
    cdef Py_ssize_t i
    cdef double schur = c
    for i in range(k.shape[0]):
        schur -= k[i] * v[i]
    return schur


def append_update(const double[:, ::1] Q, const double[::1] k, double c):
    cdef Py_ssize_t n = Q.shape[0], i, j
    cdef double schur, delta
    v_arr = np.empty(n)
    cdef double[::1] v = v_arr
    _block_matvec(Q, 0, k, v)
    schur = _schur(k, v, c)
    delta = 1.0 / schur if schur != 0.0 else INFINITY
    out = np.empty((n + 1, n + 1))
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(n):
            o[i, j] = Q[i, j] + (v[i] * v[j]) * delta
        o[i, n] = -delta * v[i]
    for j in range(n):
        o[n, j] = -delta * v[j]
    o[n, n] = delta
    return out, schur


def slide_update(const double[:, ::1] Q, const double[::1] k, double c, double[:, ::1] out):
    cdef Py_ssize_t m = Q.shape[0] - 1, i, j
    cdef double inv_q11 = 1.0 / Q[0, 0]
    cdef double qk = 0.0, schur, delta, qi, vi
    cdef const double[::1] q = Q[0, 1:]
    v_arr = np.empty(m)
    cdef double[::1] v = v_arr
    # (Q22 - q q'/q11) k without forming the downdated block
    _block_matvec(Q, 1, k, v)
    for j in range(m):
        qk += q[j] * k[j]
    for i in range(m):
        v[i] -= (q[i] * qk) * inv_q11
    schur = _schur(k, v, c)
    delta = 1.0 / schur if schur != 0.0 else INFINITY
    for i in range(m):
        qi = q[i]
        vi = v[i]
        for j in range(m):
            out[i, j] = Q[i + 1, j + 1] - (qi * q[j]) * inv_q11 + (vi * v[j]) * delta
        out[i, m] = -delta * vi
    for j in range(m):
        out[m, j] = -delta * v[j]
    out[m, m] = delta
    return schur


def loo_errors(const double[:, ::1] Q, const double[::1] y):
    cdef Py_ssize_t n = Q.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    _block_matvec(Q, 0, y, o)
    for i in range(n):
        o[i] = o[i] / Q[i, i]
    return out


def fitted_value(const double[:, ::1] Q, const double[::1] y, const double[::1] kx):
    xi_arr = np.empty(Q.shape[0])
    cdef double[::1] xi = xi_arr
    _block_matvec(Q, 0, kx, xi)
    return _dot(xi, y)


def loo_terms(const double[:, ::1] Q, const double[::1] y, const double[::1] kx):
    cdef Py_ssize_t n = Q.shape[0], i
    cdef double fhat
    xi_arr = np.empty(n)
    err_arr = np.empty(n)
    pred_arr = np.empty(n)
    cdef double[::1] xi = xi_arr
    cdef double[::1] err = err_arr
    cdef double[::1] pred = pred_arr
    _block_matvec(Q, 0, kx, xi)
    _block_matvec(Q, 0, y, err)
    fhat = _dot(xi, y)
    for i in range(n):
        err[i] = err[i] / Q[i, i]
        pred[i] = fhat - xi[i] * err[i]
    return fhat, pred_arr, err_arr

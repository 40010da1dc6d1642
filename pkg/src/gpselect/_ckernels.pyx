# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Matérn hot kernels. Same contract as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

from ._poly import matern_coefficients

cnp.import_array()


cdef inline double _horner(const double[::1] b, int deg, double t) noexcept nogil:
    cdef double acc = b[deg]
    cdef int k
    for k in range(deg - 1, -1, -1):
        acc = acc * t + b[k]
    return acc


cdef inline double _corr(double h, int chi, double c, const double[::1] b) noexcept nogil:
    if chi < 0:
        return exp(-0.5 * h * h)
    cdef double t = c * h
    return _horner(b, chi, t) * exp(-t)


cdef inline double _g(double h, int chi, double c, double scale,
                      const double[::1] bm1) noexcept nogil:
    # -k'(h)/h
    if chi < 0:
        return exp(-0.5 * h * h)
    if chi == 0:
        if h > 0.0:
            return exp(-h) / h
        return 0.0
    cdef double t = c * h
    return scale * _horner(bm1, chi - 1, t) * exp(-t)


def _coefs(int chi):
    if chi < 0:
        return np.zeros(1), np.zeros(1), 0.0, 0.0
    c = sqrt(2.0 * chi + 1.0)
    b = matern_coefficients(chi)
    if chi >= 1:
        bm1 = matern_coefficients(chi - 1)
        scale = (2.0 * chi + 1.0) / (2.0 * chi - 1.0)
    else:
        bm1 = np.zeros(1)
        scale = 0.0
    return b, bm1, c, scale


def corr_cross(xs_in, ys_in, int chi):
    cdef const double[:, ::1] xs = np.ascontiguousarray(xs_in, dtype=np.float64)
    cdef const double[:, ::1] ys = np.ascontiguousarray(ys_in, dtype=np.float64)
    cdef Py_ssize_t n = xs.shape[0], m = ys.shape[0], d = xs.shape[1]
    b_arr, _, c, _ = _coefs(chi)
    cdef const double[::1] b = b_arr
    cdef double cc = c
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j
    cdef double s, diff
    with nogil:
        for i in range(n):
            for k in range(m):
                s = 0.0
                for j in range(d):
                    diff = xs[i, j] - ys[k, j]
                    s = s + diff * diff
                out[i, k] = _corr(sqrt(s), chi, cc, b)
    return out_arr


def corr_sym(xs_in, int chi):
    cdef const double[:, ::1] xs = np.ascontiguousarray(xs_in, dtype=np.float64)
    cdef Py_ssize_t n = xs.shape[0], d = xs.shape[1]
    b_arr, _, c, _ = _coefs(chi)
    cdef const double[::1] b = b_arr
    cdef double cc = c
    out_arr = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j
    cdef double s, diff, v
    with nogil:
        for i in range(n):
            out[i, i] = 1.0
            for k in range(i + 1, n):
                s = 0.0
                for j in range(d):
                    diff = xs[i, j] - xs[k, j]
                    s = s + diff * diff
                v = _corr(sqrt(s), chi, cc, b)
                out[i, k] = v
                out[k, i] = v
    return out_arr


def corr_dstack(xs_in, int chi):
    cdef const double[:, ::1] xs = np.ascontiguousarray(xs_in, dtype=np.float64)
    cdef Py_ssize_t n = xs.shape[0], d = xs.shape[1]
    _, bm1_arr, c, scale = _coefs(chi)
    cdef const double[::1] bm1 = bm1_arr
    cdef double cc = c, sc = scale
    out_arr = np.zeros((d, n, n), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, k, j
    cdef double s, diff, g, v
    with nogil:
        for i in range(n):
            for k in range(i + 1, n):
                s = 0.0
                for j in range(d):
                    diff = xs[i, j] - xs[k, j]
                    s = s + diff * diff
                g = _g(sqrt(s), chi, cc, sc, bm1)
                for j in range(d):
                    diff = xs[i, j] - xs[k, j]
                    v = g * diff * diff
                    out[j, i, k] = v
                    out[j, k, i] = v
    return out_arr


def grad_contract(xs_in, ys_in, int chi, w_in):
    cdef const double[:, ::1] xs = np.ascontiguousarray(xs_in, dtype=np.float64)
    cdef const double[:, ::1] ys = np.ascontiguousarray(ys_in, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef Py_ssize_t n = xs.shape[0], m = ys.shape[0], d = xs.shape[1]
    if w.shape[0] != n or w.shape[1] != m:
        raise ValueError("weight matrix shape mismatch")
    _, bm1_arr, c, scale = _coefs(chi)
    cdef const double[::1] bm1 = bm1_arr
    cdef double cc = c, sc = scale
    out_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, k, j
    cdef double s, diff, wg
    with nogil:
        for i in range(n):
            for k in range(m):
                if w[i, k] == 0.0:
                    continue
                s = 0.0
                for j in range(d):
                    diff = xs[i, j] - ys[k, j]
                    s = s + diff * diff
                wg = w[i, k] * _g(sqrt(s), chi, cc, sc, bm1)
                for j in range(d):
                    diff = xs[i, j] - ys[k, j]
                    out[j] = out[j] + wg * diff * diff
    return out_arr

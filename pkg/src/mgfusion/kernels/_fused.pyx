# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled fused kernels: single-pass elementwise/reduction loops.

Semantics match kernels.reference exactly (same per-element operation
order); matmuls stay on BLAS via numpy in both backends. Loops are
single-threaded and accumulate in a fixed order, so results are
bit-deterministic run to run.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

WMEAN_EPS = 1e-8
cdef double _WMEAN_EPS = 1e-8


def edge_forward(double[:, ::1] gram, double[:, ::1] denom, double thresh):
    cdef Py_ssize_t n = gram.shape[0], m = gram.shape[1], i, j
    out_arr = np.empty((n, m))
    cdef double[:, ::1] out = out_arr
    cdef double q
    for i in range(n):
        for j in range(m):
            q = fabs(gram[i, j]) / denom[i, j] - thresh
            out[i, j] = q if q > 0.0 else 0.0
    return out_arr


def edge_backward(double[:, ::1] gram, double[:, ::1] denom, double thresh,
                  double[:, ::1] d_out):
    cdef Py_ssize_t n = gram.shape[0], m = gram.shape[1], i, j
    d_gram_arr = np.zeros((n, m))
    d_denom_arr = np.zeros((n, m))
    cdef double[:, ::1] d_gram = d_gram_arr
    cdef double[:, ::1] d_denom = d_denom_arr
    cdef double d_thresh = 0.0, q, g, s
    for i in range(n):
        for j in range(m):
            q = fabs(gram[i, j]) / denom[i, j]
            if q > thresh:
                g = d_out[i, j]
                s = 1.0 if gram[i, j] > 0.0 else (-1.0 if gram[i, j] < 0.0 else 0.0)
                d_gram[i, j] = g * s / denom[i, j]
                d_denom[i, j] = -g * q / denom[i, j]
                d_thresh -= g
    return d_gram_arr, d_denom_arr, d_thresh


def wmean_forward(cnp.ndarray[double, ndim=2] weights,
                  cnp.ndarray[double, ndim=2] feats):
    cdef Py_ssize_t n = weights.shape[0], k = weights.shape[1], i, j
    rowsum_arr = np.empty(n)
    cdef double[::1] rowsum = rowsum_arr
    cdef double[:, ::1] w = np.ascontiguousarray(weights)
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(k):
            acc += w[i, j]
        rowsum[i] = acc
    out_arr = np.dot(weights, feats)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t c, width = out_arr.shape[1]
    cdef double inv
    for i in range(n):
        inv = 1.0 / (rowsum[i] + _WMEAN_EPS)
        for c in range(width):
            out[i, c] *= inv
    return out_arr, rowsum_arr


def wmean_backward(cnp.ndarray[double, ndim=2] weights,
                   cnp.ndarray[double, ndim=2] feats,
                   cnp.ndarray[double, ndim=2] out,
                   cnp.ndarray[double, ndim=1] rowsum,
                   cnp.ndarray[double, ndim=2] d_out):
    cdef Py_ssize_t n = weights.shape[0], i, c
    cdef Py_ssize_t width = d_out.shape[1]
    d_prod_arr = np.empty_like(d_out)
    cdef double[:, ::1] d_prod = d_prod_arr
    cdef double[:, ::1] d_out_v = np.ascontiguousarray(d_out)
    cdef double[:, ::1] out_v = np.ascontiguousarray(out)
    cdef double[::1] rs = rowsum
    d_rows_arr = np.empty(n)
    cdef double[::1] d_rows = d_rows_arr
    cdef double inv, acc
    for i in range(n):
        inv = 1.0 / (rs[i] + _WMEAN_EPS)
        acc = 0.0
        for c in range(width):
            d_prod[i, c] = d_out_v[i, c] * inv
            acc += d_out_v[i, c] * out_v[i, c]
        d_rows[i] = -acc * inv
    d_feats = np.dot(weights.T, d_prod_arr)
    d_weights_arr = np.dot(d_prod_arr, feats.T)
    cdef double[:, ::1] d_weights = d_weights_arr
    cdef Py_ssize_t k = weights.shape[1], j
    for i in range(n):
        for j in range(k):
            d_weights[i, j] += d_rows[i]
    return d_weights_arr, d_feats


def adamw_update(cnp.ndarray[double, ndim=2] param,
                 cnp.ndarray[double, ndim=2] grad,
                 cnp.ndarray[double, ndim=2] m,
                 cnp.ndarray[double, ndim=2] v,
                 long t, double lr, double beta1, double beta2,
                 double eps, double weight_decay):
    cdef double[:, ::1] p = param
    cdef double[:, ::1] g = np.ascontiguousarray(grad)
    cdef double[:, ::1] mv = m
    cdef double[:, ::1] vv = v
    cdef Py_ssize_t rows = param.shape[0], cols = param.shape[1], i, j
    cdef double bc1 = 1.0 - beta1**t
    cdef double bc2 = 1.0 - beta2**t
    cdef double m_hat, v_hat, gij
    for i in range(rows):
        for j in range(cols):
            gij = g[i, j]
            mv[i, j] = beta1 * mv[i, j] + (1.0 - beta1) * gij
            vv[i, j] = beta2 * vv[i, j] + (1.0 - beta2) * gij * gij
            m_hat = mv[i, j] / bc1
            v_hat = vv[i, j] / bc2
            p[i, j] -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p[i, j])

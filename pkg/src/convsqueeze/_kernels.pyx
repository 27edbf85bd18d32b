# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: fused Taylor-loss reductions and direct convolution.

Signature-compatible with :mod:`convsqueeze._kernels_py`; see that module for
the reference semantics.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def sq_taylor_loss(double[::1] g, double[::1] a, double[::1] b):
    cdef Py_ssize_t i, n = g.shape[0]
    cdef double acc = 0.0, d
    if a.shape[0] != n or b.shape[0] != n:
        raise ValueError("mismatched kernel operand lengths")
    with nogil:
        for i in range(n):
            d = g[i] * (a[i] - b[i])
            acc += d * d
    return acc


def metric_terms(double[::1] g, double[::1] wo, double[::1] w):
    cdef Py_ssize_t i, n = g.shape[0]
    cdef double ta = 0.0, tb = 0.0, tc = 0.0, gd, gw
    if wo.shape[0] != n or w.shape[0] != n:
        raise ValueError("mismatched kernel operand lengths")
    with nogil:
        for i in range(n):
            gd = g[i] * (wo[i] - w[i])
            gw = g[i] * wo[i]
            ta += gd * gd
            tb += gd * gw
            tc += gw * gw
    return ta, tb, tc


def direct_conv(double[:, :, :, ::1] w, double[:, :, ::1] x, Py_ssize_t stride):
    cdef Py_ssize_t n = w.shape[0], c = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t h_in = x.shape[1], w_in = x.shape[2]
    cdef Py_ssize_t h_out = (h_in - k) // stride + 1
    cdef Py_ssize_t w_out = (w_in - k) // stride + 1
    if x.shape[0] != c:
        raise ValueError("input channel count does not match the weights")
    out = np.zeros((n, h_out, w_out), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    cdef Py_ssize_t o, j, r, s, a, b, ri, si
    cdef double acc
    with nogil:
        for o in range(n):
            for r in range(h_out):
                ri = r * stride
                for s in range(w_out):
                    si = s * stride
                    acc = 0.0
                    for j in range(c):
                        for a in range(k):
                            for b in range(k):
                                acc += w[o, j, a, b] * x[j, ri + a, si + b]
                    y[o, r, s] = acc
    return out

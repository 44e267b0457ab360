# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im kernels backing conv2d and conv_transpose2d.

Columns use the transposed layout ``[C*k*k, B*Ho*Wo]`` so that both the
gather and the scatter walk contiguous memory. Zero padding is implicit:
``im2col`` reads zeros outside the input and ``col2im`` drops contributions
that land in the padding. Accumulation order in ``col2im`` matches the numpy
fallback, so the two backends agree bit for bit.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t lo=0, Py_ssize_t hi=0):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + lo + hi - k) // stride + 1
    cdef Py_ssize_t Wo = (W + lo + hi - k) // stride + 1
    out = np.empty((C * k * k, B * Ho * Wo), dtype=np.float64)
    cdef double[:, ::1] cols = out
    cdef Py_ssize_t b, c, i, j, ki, kj, row, y, xx
    cdef const double* src
    cdef double* dst
    with nogil:
        for c in range(C):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    for b in range(B):
                        for i in range(Ho):
                            dst = &cols[row, (b * Ho + i) * Wo]
                            y = i * stride + ki - lo
                            if y < 0 or y >= H:
                                for j in range(Wo):
                                    dst[j] = 0.0
                                continue
                            src = &x[b, c, y, 0]
                            for j in range(Wo):
                                xx = j * stride + kj - lo
                                if xx < 0 or xx >= W:
                                    dst[j] = 0.0
                                else:
                                    dst[j] = src[xx]
    return out


def col2im(const double[:, ::1] cols, tuple shape, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t lo=0, Py_ssize_t hi=0):
    cdef Py_ssize_t B = shape[0], C = shape[1], H = shape[2], W = shape[3]
    cdef Py_ssize_t Ho = (H + lo + hi - k) // stride + 1
    cdef Py_ssize_t Wo = (W + lo + hi - k) // stride + 1
    out = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] xo = out
    cdef Py_ssize_t b, c, i, j, ki, kj, row, y, xx
    cdef const double* src
    cdef double* dst
    with nogil:
        for ki in range(k):
            for kj in range(k):
                for c in range(C):
                    row = (c * k + ki) * k + kj
                    for b in range(B):
                        for i in range(Ho):
                            y = i * stride + ki - lo
                            if y < 0 or y >= H:
                                continue
                            src = &cols[row, (b * Ho + i) * Wo]
                            dst = &xo[b, c, y, 0]
                            for j in range(Wo):
                                xx = j * stride + kj - lo
                                if xx >= 0 and xx < W:
                                    dst[xx] += src[j]
    return out

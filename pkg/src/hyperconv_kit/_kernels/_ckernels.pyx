# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im for strided 2-D patch extraction."""

import numpy as np
cimport cython
from libc.string cimport memcpy

ctypedef fused real:
    float
    double


def im2col(const real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t sh, Py_ssize_t sw):
    cdef Py_ssize_t n_b = xp.shape[0], n_c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // sh + 1, wo = (wp - kw) // sw + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n_b, n_c, kh, kw, ho, wo), dtype=dtype)
    cdef real[:, :, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t plane, i, j, oy, ox
    cdef const real* src
    cdef real* dst
    if out_arr.size == 0:
        return out_arr
    with nogil:
        for plane in range(n_b * n_c):
            for i in range(kh):
                for j in range(kw):
                    dst = &out[plane // n_c, plane % n_c, i, j, 0, 0]
                    for oy in range(ho):
                        src = &xp[plane // n_c, plane % n_c, oy * sh + i, j]
                        if sw == 1:
                            memcpy(dst, src, wo * sizeof(real))
                        else:
                            for ox in range(wo):
                                dst[ox] = src[ox * sw]
                        dst += wo
    return out_arr


def col2im(const real[:, :, :, :, :, ::1] cols, Py_ssize_t hp, Py_ssize_t wp, Py_ssize_t sh, Py_ssize_t sw):
    cdef Py_ssize_t n_b = cols.shape[0], n_c = cols.shape[1], kh = cols.shape[2], kw = cols.shape[3]
    cdef Py_ssize_t ho = cols.shape[4], wo = cols.shape[5]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n_b, n_c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t plane, i, j, oy, ox
    cdef const real* src
    cdef real* dst
    if cols.size == 0 or out_arr.size == 0:
        return out_arr
    # (i, j) outermost per element keeps the summation order of the numpy path
    with nogil:
        for plane in range(n_b * n_c):
            for i in range(kh):
                for j in range(kw):
                    src = &cols[plane // n_c, plane % n_c, i, j, 0, 0]
                    for oy in range(ho):
                        dst = &out[plane // n_c, plane % n_c, oy * sh + i, j]
                        if sw == 1:
                            for ox in range(wo):
                                dst[ox] += src[ox]
                        else:
                            for ox in range(wo):
                                dst[ox * sw] += src[ox]
                        src += wo
    return out_arr

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels (hot path of every forward/backward pass).

Same contracts as _conv_py: cross-correlation, NCHW, float64. Plain C loops
with the padding bounds hoisted out of the inner loops; deterministic (no
threading, fixed accumulation order).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _lo(Py_ssize_t pad, Py_ssize_t kk, Py_ssize_t stride) noexcept nogil:
    # smallest o with o*stride + kk - pad >= 0
    cdef Py_ssize_t d = pad - kk
    if d <= 0:
        return 0
    return (d + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t n, Py_ssize_t pad, Py_ssize_t kk, Py_ssize_t stride,
                           Py_ssize_t nout) noexcept nogil:
    # one past the largest o with o*stride + kk - pad <= n-1
    cdef Py_ssize_t h = (n - 1 + pad - kk) // stride + 1
    if h > nout:
        return nout
    return h


def conv2d_forward(cnp.ndarray x_arr, cnp.ndarray w_arr, int stride, int padding):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_arr)
    cdef double[:, :, :, ::1] w = np.ascontiguousarray(w_arr)
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t Hout = (H + 2 * padding - k) // stride + 1
    cdef Py_ssize_t Wout = (W + 2 * padding - k) // stride + 1
    out_arr = np.zeros((B, Cout, Hout, Wout))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, co, ci, oh, ow, kh, kw, ih, iw0
    cdef Py_ssize_t oh0, oh1, ow0, ow1
    cdef double wv
    with nogil:
        for b in range(B):
            for co in range(Cout):
                for ci in range(Cin):
                    for kh in range(k):
                        oh0 = _lo(padding, kh, stride)
                        oh1 = _hi(H, padding, kh, stride, Hout)
                        for kw in range(k):
                            wv = w[co, ci, kh, kw]
                            if wv == 0.0:
                                continue
                            ow0 = _lo(padding, kw, stride)
                            ow1 = _hi(W, padding, kw, stride, Wout)
                            for oh in range(oh0, oh1):
                                ih = oh * stride + kh - padding
                                iw0 = ow0 * stride + kw - padding
                                for ow in range(ow0, ow1):
                                    out[b, co, oh, ow] += x[b, ci, ih, iw0] * wv
                                    iw0 += stride
    return out_arr


def conv2d_backward_input(cnp.ndarray grad_arr, cnp.ndarray w_arr, x_shape, int stride, int padding):
    cdef double[:, :, :, ::1] g = np.ascontiguousarray(grad_arr)
    cdef double[:, :, :, ::1] w = np.ascontiguousarray(w_arr)
    cdef Py_ssize_t B = x_shape[0], Cin = x_shape[1], H = x_shape[2], W = x_shape[3]
    cdef Py_ssize_t Cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t Hout = g.shape[2], Wout = g.shape[3]
    gx_arr = np.zeros((B, Cin, H, W))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, co, ci, oh, ow, kh, kw, ih, iw0
    cdef Py_ssize_t oh0, oh1, ow0, ow1
    cdef double wv
    with nogil:
        for b in range(B):
            for co in range(Cout):
                for ci in range(Cin):
                    for kh in range(k):
                        oh0 = _lo(padding, kh, stride)
                        oh1 = _hi(H, padding, kh, stride, Hout)
                        for kw in range(k):
                            wv = w[co, ci, kh, kw]
                            if wv == 0.0:
                                continue
                            ow0 = _lo(padding, kw, stride)
                            ow1 = _hi(W, padding, kw, stride, Wout)
                            for oh in range(oh0, oh1):
                                ih = oh * stride + kh - padding
                                iw0 = ow0 * stride + kw - padding
                                for ow in range(ow0, ow1):
                                    gx[b, ci, ih, iw0] += g[b, co, oh, ow] * wv
                                    iw0 += stride
    return gx_arr


def conv2d_backward_weight(cnp.ndarray grad_arr, cnp.ndarray x_arr, w_shape, int stride, int padding):
    cdef double[:, :, :, ::1] g = np.ascontiguousarray(grad_arr)
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_arr)
    cdef Py_ssize_t Cout = w_shape[0], Cin = w_shape[1], k = w_shape[2]
    cdef Py_ssize_t B = x.shape[0], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Hout = g.shape[2], Wout = g.shape[3]
    gw_arr = np.zeros((Cout, Cin, k, k))
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, co, ci, oh, ow, kh, kw, ih, iw0
    cdef Py_ssize_t oh0, oh1, ow0, ow1
    cdef double acc
    with nogil:
        for co in range(Cout):
            for ci in range(Cin):
                for kh in range(k):
                    oh0 = _lo(padding, kh, stride)
                    oh1 = _hi(H, padding, kh, stride, Hout)
                    for kw in range(k):
                        ow0 = _lo(padding, kw, stride)
                        ow1 = _hi(W, padding, kw, stride, Wout)
                        acc = 0.0
                        for b in range(B):
                            for oh in range(oh0, oh1):
                                ih = oh * stride + kh - padding
                                iw0 = ow0 * stride + kw - padding
                                for ow in range(ow0, ow1):
                                    acc += g[b, co, oh, ow] * x[b, ci, ih, iw0]
                                    iw0 += stride
                        gw[co, ci, kh, kw] = acc
    return gw_arr

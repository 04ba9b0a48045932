# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``_pykernels`` operation for operation."""
import numpy as np
cimport cython
from libc.math cimport exp, expf, INFINITY

NAME = "cython"

ctypedef fused real:
    float
    double


cdef inline real _exp(real x) noexcept nogil:
    if real is float:
        return expf(x)
    else:
        return exp(x)


def _matmul(const real[:, ::1] a, const real[:, ::1] b, real[:, ::1] out):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, t
    cdef real s
    with nogil:
        for i in range(m):
            for t in range(k):
                s = a[i, t]
                for j in range(n):
                    out[i, j] = out[i, j] + s * b[t, j]


def matmul(a, b):
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    _matmul(a, b, out)
    return out


def _softmax(const real[:, ::1] x, real[:, ::1] out):
    cdef Py_ssize_t n = x.shape[0], L = x.shape[1], i, j
    cdef real mx, total, e
    cdef Py_ssize_t bad = -1
    with nogil:
        for i in range(n):
            mx = -INFINITY
            for j in range(L):
                if x[i, j] > mx:
                    mx = x[i, j]
            if mx == -INFINITY:
                bad = i
                break
            total = 0
            for j in range(L):
                e = _exp(x[i, j] - mx)
                out[i, j] = e
                total = total + e
            for j in range(L):
                out[i, j] = out[i, j] / total
    return bad


def softmax_rows(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    bad = _softmax(x, out)
    if bad >= 0:
        return None, bad
    return out, -1


def _bilinear(const real[:, ::1] a, const long[::1] y0, const long[::1] y1, const real[::1] wy,
              const long[::1] x0, const long[::1] x1, const real[::1] wx,
              Py_ssize_t w_l, real[:, ::1] out):
    cdef Py_ssize_t n = a.shape[0], hh = y0.shape[0], ww = x0.shape[0]
    cdef Py_ssize_t q, y, x, r0, r1
    cdef real tl, tr, bl, br, top, bot
    with nogil:
        for q in range(n):
            for y in range(hh):
                r0 = y0[y] * w_l
                r1 = y1[y] * w_l
                for x in range(ww):
                    tl = a[q, r0 + x0[x]]
                    tr = a[q, r0 + x1[x]]
                    bl = a[q, r1 + x0[x]]
                    br = a[q, r1 + x1[x]]
                    top = tl + wx[x] * (tr - tl)
                    bot = bl + wx[x] * (br - bl)
                    out[q, y * ww + x] = top + wy[y] * (bot - top)


def bilinear_rows(a, y0, y1, wy, x0, x1, wx, h_l, w_l):
    a = np.ascontiguousarray(a)
    out = np.empty((a.shape[0], y0.shape[0] * x0.shape[0]), dtype=a.dtype)
    _bilinear(a, y0.astype(np.int_), y1.astype(np.int_), wy.astype(a.dtype),
              x0.astype(np.int_), x1.astype(np.int_), wx.astype(a.dtype), w_l, out)
    return out

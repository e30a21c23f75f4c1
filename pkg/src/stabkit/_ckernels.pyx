# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics mirror ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs, rint, INFINITY

cnp.import_array()

cdef double SNAP = 1e-9


cdef inline double _snap(double c) nogil:
    cdef double r = rint(c)
    if fabs(c - r) < SNAP:
        return r
    return c


cdef inline double _px(const double[:, ::1] img, Py_ssize_t j, Py_ssize_t i,
                       Py_ssize_t h, Py_ssize_t w) nogil:
    if i < 0 or i >= w or j < 0 or j >= h:
        return 0.0
    return img[j, i]


def bilinear_sample(img, u, v, bint grad=True):
    cdef const double[:, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef const double[::1] uu = np.ascontiguousarray(np.ravel(u), dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(np.ravel(v), dtype=np.float64)
    cdef Py_ssize_t n = uu.shape[0]
    cdef Py_ssize_t h = im.shape[0], w = im.shape[1]
    val_a = np.empty(n)
    # the slope buffers are scratch when grad is off
    gu_a = np.empty(n if grad else 1)
    gv_a = np.empty(n if grad else 1)
    ok_a = np.empty(n, dtype=np.bool_)
    cdef double[::1] val = val_a
    cdef double[::1] gu = gu_a
    cdef double[::1] gv = gv_a
    cdef cnp.npy_bool[::1] ok = ok_a
    cdef Py_ssize_t k, i0, j0
    cdef double x, y, fx, fy, a, b, c, d, top, bot
    cdef bint inside
    with nogil:
        for k in range(n):
            x = _snap(uu[k])
            y = _snap(vv[k])
            inside = x >= 0.0 and x <= w - 1 and y >= 0.0 and y <= h - 1
            ok[k] = inside
            fx = floor(x)
            fy = floor(y)
            if inside and fx >= w - 1 and w > 1:
                fx = w - 2
            if inside and fy >= h - 1 and h > 1:
                fy = h - 2
            if fx < -1 or fx > w - 1 or fy < -1 or fy > h - 1:
                val[k] = 0.0
                if grad:
                    gu[k] = 0.0
                    gv[k] = 0.0
                continue
            i0 = <Py_ssize_t>fx
            j0 = <Py_ssize_t>fy
            fx = x - fx
            fy = y - fy
            a = _px(im, j0, i0, h, w)
            b = _px(im, j0, i0 + 1, h, w)
            c = _px(im, j0 + 1, i0, h, w)
            d = _px(im, j0 + 1, i0 + 1, h, w)
            top = (1.0 - fx) * a + fx * b
            bot = (1.0 - fx) * c + fx * d
            val[k] = (1.0 - fy) * top + fy * bot
            if grad:
                gu[k] = (b - a) * (1.0 - fy) + (d - c) * fy
                gv[k] = bot - top
    if not grad:
        return val_a, None, None, ok_a
    return val_a, gu_a, gv_a, ok_a


def sad_block_match(a, b, Py_ssize_t block, Py_ssize_t radius):
    cdef const double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t h = B.shape[0], w = B.shape[1]
    cdef Py_ssize_t rows = h // block, cols = w // block
    dx_a = np.zeros((rows, cols), dtype=np.int64)
    dy_a = np.zeros((rows, cols), dtype=np.int64)
    best_a = np.full((rows, cols), np.inf)
    second_a = np.full((rows, cols), np.inf)
    cdef cnp.int64_t[:, ::1] DX = dx_a
    cdef cnp.int64_t[:, ::1] DY = dy_a
    cdef double[:, ::1] BEST = best_a
    cdef double[:, ::1] SECOND = second_a
    cdef Py_ssize_t r, cc, ox, oy, ddx, ddy, yy, xx
    cdef double s, e
    with nogil:
        for r in range(rows):
            for cc in range(cols):
                oy = r * block
                ox = cc * block
                for ddy in range(-radius, radius + 1):
                    if oy + ddy < 0 or oy + ddy + block > h:
                        continue
                    for ddx in range(-radius, radius + 1):
                        if ox + ddx < 0 or ox + ddx + block > w:
                            continue
                        s = 0.0
                        for yy in range(block):
                            for xx in range(block):
                                e = B[oy + yy, ox + xx] - A[oy + yy + ddy, ox + xx + ddx]
                                s += fabs(e)
                        if s < BEST[r, cc]:
                            SECOND[r, cc] = BEST[r, cc]
                            BEST[r, cc] = s
                            DX[r, cc] = ddx
                            DY[r, cc] = ddy
                        elif s < SECOND[r, cc]:
                            SECOND[r, cc] = s
    return dx_a, dy_a, best_a, second_a

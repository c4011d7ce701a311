# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: depthwise 3x3 convolution and LK flow refinement.

Semantics mirror ``_fallback.py``; that module is the reference.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport fabs, floor, sqrt

cnp.import_array()

ctypedef fused floating:
    float
    double


def dconv3x3_forward(floating[:, :, :, ::1] x, floating[:, :, ::1] w, floating[::1] b):
    """Depthwise 3x3 convolution, zero padding 1, on x[C, N, H, W]."""
    cdef Py_ssize_t c = x.shape[0], n = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ci, ni, i, j, ky, kx, yy, xx
    cdef floating acc, wk

    if floating is float:
        out_np = np.empty((c, n, h, wd), dtype=np.float32)
    else:
        out_np = np.empty((c, n, h, wd), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_np

    for ci in range(c):
        for ni in range(n):
            for i in range(h):
                for j in range(wd):
                    acc = b[ci]
                    for ky in range(3):
                        yy = i + ky - 1
                        if yy < 0 or yy >= h:
                            continue
                        for kx in range(3):
                            xx = j + kx - 1
                            if xx < 0 or xx >= wd:
                                continue
                            wk = w[ci, ky, kx] * x[ci, ni, yy, xx]
                            acc = acc + wk
                    out[ci, ni, i, j] = acc
    return out_np


cdef inline double _bilinear1(double[:, ::1] img, double sx, double sy) noexcept nogil:
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef double x0 = floor(sx), y0 = floor(sy)
    cdef double fx = sx - x0, fy = sy - y0
    cdef Py_ssize_t x0i = <Py_ssize_t>x0, y0i = <Py_ssize_t>y0
    cdef Py_ssize_t x1i = x0i + 1, y1i = y0i + 1
    if x0i < 0: x0i = 0
    if x0i > w - 1: x0i = w - 1
    if x1i < 0: x1i = 0
    if x1i > w - 1: x1i = w - 1
    if y0i < 0: y0i = 0
    if y0i > h - 1: y0i = h - 1
    if y1i < 0: y1i = 0
    if y1i > h - 1: y1i = h - 1
    cdef double top = img[y0i, x0i] * (1 - fx) + img[y0i, x1i] * fx
    cdef double bot = img[y1i, x0i] * (1 - fx) + img[y1i, x1i] * fx
    return top * (1 - fy) + bot * fy


def lk_refine(
    double[:, ::1] prev,
    double[:, ::1] nxt,
    double[:, ::1] ix,
    double[:, ::1] iy,
    double[::1] px,
    double[::1] py,
    double[::1] u0,
    double[::1] v0,
    int half_win,
    int max_iters,
    double step_eps,
    double min_eig_eps,
):
    """Iterative LK refinement at one pyramid level; see the fallback docstring."""
    cdef Py_ssize_t n = px.shape[0]
    cdef Py_ssize_t h = prev.shape[0], w = prev.shape[1]
    cdef int win = 2 * half_win + 1
    cdef double area = <double>(win * win)

    u_np = np.empty(n, dtype=np.float64)
    v_np = np.empty(n, dtype=np.float64)
    ok_np = np.zeros(n, dtype=np.uint8)
    resid_np = np.empty(n, dtype=np.float64)
    cdef double[::1] u = u_np, v = v_np, resid = resid_np
    cdef cnp.uint8_t[::1] ok = ok_np

    tmpl_np = np.empty((win, win), dtype=np.float64)
    gx_np = np.empty((win, win), dtype=np.float64)
    gy_np = np.empty((win, win), dtype=np.float64)
    cdef double[:, ::1] tmpl = tmpl_np, gx = gx_np, gy = gy_np

    cdef Py_ssize_t k, a, bidx, it
    cdef double cx, cy, wxp, wyp
    cdef double gxx, gxy, gyy, trace, det_term, min_eig, det
    cdef double bx, by, du, dv, diff, cur, tx, ty, acc
    cdef bint point_ok, active

    for k in range(n):
        cx = px[k]
        cy = py[k]
        for a in range(win):
            wyp = cy + (a - half_win)
            for bidx in range(win):
                wxp = cx + (bidx - half_win)
                tmpl[a, bidx] = _bilinear1(prev, wxp, wyp)
                gx[a, bidx] = _bilinear1(ix, wxp, wyp)
                gy[a, bidx] = _bilinear1(iy, wxp, wyp)

        gxx = 0.0
        gxy = 0.0
        gyy = 0.0
        for a in range(win):
            for bidx in range(win):
                gxx += gx[a, bidx] * gx[a, bidx]
                gxy += gx[a, bidx] * gy[a, bidx]
                gyy += gy[a, bidx] * gy[a, bidx]
        trace = gxx + gyy
        det_term = sqrt((gxx - gyy) * (gxx - gyy) + 4.0 * gxy * gxy)
        min_eig = 0.5 * (trace - det_term) / area
        point_ok = min_eig >= min_eig_eps
        det = gxx * gyy - gxy * gxy
        if not point_ok:
            det = 1.0

        u[k] = u0[k]
        v[k] = v0[k]
        active = point_ok
        for it in range(max_iters):
            if not active:
                break
            bx = 0.0
            by = 0.0
            for a in range(win):
                wyp = cy + (a - half_win) + v[k]
                for bidx in range(win):
                    wxp = cx + (bidx - half_win) + u[k]
                    cur = _bilinear1(nxt, wxp, wyp)
                    diff = tmpl[a, bidx] - cur
                    bx += diff * gx[a, bidx]
                    by += diff * gy[a, bidx]
            du = (gyy * bx - gxy * by) / det
            dv = (gxx * by - gxy * bx) / det
            u[k] += du
            v[k] += dv
            if du * du + dv * dv < step_eps * step_eps:
                active = False

        tx = cx + u[k]
        ty = cy + v[k]
        if tx < 0.0 or tx > w - 1.0 or ty < 0.0 or ty > h - 1.0:
            point_ok = False

        if point_ok:
            acc = 0.0
            for a in range(win):
                wyp = cy + (a - half_win) + v[k]
                for bidx in range(win):
                    wxp = cx + (bidx - half_win) + u[k]
                    acc += fabs(tmpl[a, bidx] - _bilinear1(nxt, wxp, wyp))
            resid[k] = acc / area
            ok[k] = 1
        else:
            resid[k] = np.inf
            ok[k] = 0

    return u_np, v_np, ok_np, resid_np

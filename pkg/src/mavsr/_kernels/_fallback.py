"""Pure-numpy implementations of the hot kernels.

These are the reference semantics; the compiled extension in ``_core.pyx``
must agree with them (same tap order for the convolution so float results
match bit for bit).
"""

from __future__ import annotations

import numpy as np


def dconv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Depthwise 3x3 convolution, zero padding 1, on x[C, N, H, W]."""
    c, n, h, wdt = x.shape
    pad = np.zeros((c, n, h + 2, wdt + 2), dtype=x.dtype)
    pad[:, :, 1:-1, 1:-1] = x
    out = np.empty_like(x)
    out[:] = b[:, None, None, None]
    for ky in range(3):
        for kx in range(3):
            out += w[:, ky, kx, None, None, None] * pad[:, :, ky : ky + h, kx : kx + wdt]
    return out


def _bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0i = np.clip(x0, 0, w - 1).astype(np.intp)
    x1i = np.clip(x0 + 1, 0, w - 1).astype(np.intp)
    y0i = np.clip(y0, 0, h - 1).astype(np.intp)
    y1i = np.clip(y0 + 1, 0, h - 1).astype(np.intp)
    top = img[y0i, x0i] * (1 - fx) + img[y0i, x1i] * fx
    bot = img[y1i, x0i] * (1 - fx) + img[y1i, x1i] * fx
    return top * (1 - fy) + bot * fy


def lk_refine(
    prev: np.ndarray,
    nxt: np.ndarray,
    ix: np.ndarray,
    iy: np.ndarray,
    px: np.ndarray,
    py: np.ndarray,
    u0: np.ndarray,
    v0: np.ndarray,
    half_win: int,
    max_iters: int,
    step_eps: float,
    min_eig_eps: float,
):
    """Iterative LK refinement of per-point flow at a single pyramid level.

    Returns (u, v, ok, resid). A point is marked not-ok when the normal
    matrix over its window is near-singular (min eigenvalue per pixel below
    ``min_eig_eps``) or the tracked position leaves the frame bounds.
    """
    h, w = prev.shape
    n = px.shape[0]
    offs = np.arange(-half_win, half_win + 1, dtype=np.float64)
    wx = px[:, None, None] + offs[None, None, :]
    wy = py[:, None, None] + offs[None, :, None]

    tmpl = _bilinear(prev, wx, wy)
    gx = _bilinear(ix, wx, wy)
    gy = _bilinear(iy, wx, wy)

    area = float((2 * half_win + 1) ** 2)
    gxx = np.sum(gx * gx, axis=(1, 2))
    gxy = np.sum(gx * gy, axis=(1, 2))
    gyy = np.sum(gy * gy, axis=(1, 2))
    trace = gxx + gyy
    det_term = np.sqrt((gxx - gyy) ** 2 + 4.0 * gxy * gxy)
    min_eig = 0.5 * (trace - det_term) / area
    ok = min_eig >= min_eig_eps
    det = gxx * gyy - gxy * gxy
    safe_det = np.where(ok, det, 1.0)

    u = u0.astype(np.float64).copy()
    v = v0.astype(np.float64).copy()
    active = ok.copy()
    for _ in range(max_iters):
        if not active.any():
            break
        cur = _bilinear(nxt, wx + u[:, None, None], wy + v[:, None, None])
        diff = tmpl - cur
        bx = np.sum(diff * gx, axis=(1, 2))
        by = np.sum(diff * gy, axis=(1, 2))
        du = (gyy * bx - gxy * by) / safe_det
        dv = (gxx * by - gxy * bx) / safe_det
        du = np.where(active, du, 0.0)
        dv = np.where(active, dv, 0.0)
        u += du
        v += dv
        active = active & (du * du + dv * dv >= step_eps * step_eps)

    tx = px + u
    ty = py + v
    inside = (tx >= 0.0) & (tx <= w - 1.0) & (ty >= 0.0) & (ty <= h - 1.0)
    ok = ok & inside

    final = _bilinear(nxt, wx + u[:, None, None], wy + v[:, None, None])
    resid = np.mean(np.abs(tmpl - final), axis=(1, 2))
    resid = np.where(ok, resid, np.inf)
    return u, v, ok.astype(np.uint8), resid

"""Pure-numpy implementations of the hot kernels.

Same signatures and results as the compiled ``_ckernels`` module; used when
the extension is unavailable or ``STABKIT_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import numpy as np

SNAP = 1e-9


def _snap(c: np.ndarray) -> np.ndarray:
    r = np.rint(c)
    return np.where(np.abs(c - r) < SNAP, r, c)


def bilinear_sample(img: np.ndarray, u: np.ndarray, v: np.ndarray, grad: bool = True):
    """Zero-padded bilinear sampling at pixel coordinates ``(u, v)``.

    Returns ``(value, d/du, d/dv, valid)`` as flat arrays; the slopes are
    ``None`` when ``grad`` is false. ``valid`` is true
    when the sample lies inside the pixel-centre hull ``[0, W-1] x [0, H-1]``.
    Inside the hull the interpolation cell is clamped to the image so edge
    samples use in-image slopes.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    h, w = img.shape
    u = _snap(np.asarray(u, dtype=np.float64).ravel())
    v = _snap(np.asarray(v, dtype=np.float64).ravel())
    valid = (u >= 0.0) & (u <= w - 1) & (v >= 0.0) & (v <= h - 1)

    i0 = np.floor(u)
    j0 = np.floor(v)
    # keep in-hull samples on an interior cell
    i0 = np.where(valid & (i0 >= w - 1), w - 2, i0) if w > 1 else i0
    j0 = np.where(valid & (j0 >= h - 1), h - 2, j0) if h > 1 else j0
    fx = u - i0
    fy = v - j0
    i0 = i0.astype(np.int64)
    j0 = j0.astype(np.int64)

    padded = np.zeros((h + 4, w + 4))
    padded[2:-2, 2:-2] = img
    # anything further than one pixel outside reads zeros only
    ii = np.clip(i0, -2, w) + 2
    jj = np.clip(j0, -2, h) + 2
    far = (i0 < -1) | (i0 > w - 1) | (j0 < -1) | (j0 > h - 1)
    a = padded[jj, ii]
    b = padded[jj, ii + 1]
    c = padded[jj + 1, ii]
    d = padded[jj + 1, ii + 1]
    a = np.where(far, 0.0, a)
    b = np.where(far, 0.0, b)
    c = np.where(far, 0.0, c)
    d = np.where(far, 0.0, d)

    # convex form is exact at fx, fy in {0, 1}
    top = (1.0 - fx) * a + fx * b
    bot = (1.0 - fx) * c + fx * d
    val = (1.0 - fy) * top + fy * bot
    if not grad:
        return val, None, None, valid
    gu = (b - a) * (1.0 - fy) + (d - c) * fy
    gv = bot - top
    return val, gu, gv, valid


def sad_block_match(a: np.ndarray, b: np.ndarray, block: int, radius: int):
    """For each ``block x block`` tile of ``b`` find the integer displacement
    ``(dx, dy)``, ``|dx|, |dy| <= radius``, minimising the SAD against ``a``
    sampled at ``tile + (dx, dy)``. Displacements leaving ``a`` are skipped.

    Returns ``(dx, dy, best, second)`` arrays of shape ``(rows, cols)``;
    ``second`` is the smallest SAD over displacements other than the best one.
    Ties resolve to the first displacement in raster order (dy, then dx).
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    h, w = b.shape
    rows, cols = h // block, w // block
    rh, cw = rows * block, cols * block
    n = 2 * radius + 1
    sads = np.full((n * n, rows, cols), np.inf)
    y0 = np.arange(rows) * block
    x0 = np.arange(cols) * block
    tiles = b[:rh, :cw].reshape(rows, block, cols, block)
    k = 0
    for dy in range(-radius, radius + 1):
        ok_r = (y0 + dy >= 0) & (y0 + dy + block <= h)
        for dx in range(-radius, radius + 1):
            ok_c = (x0 + dx >= 0) & (x0 + dx + block <= w)
            ok = ok_r[:, None] & ok_c[None, :]
            if ok.any():
                sh = np.zeros((rh, cw))
                ya, yb = max(0, -dy), min(rh, h - dy)
                xa, xb = max(0, -dx), min(cw, w - dx)
                sh[ya:yb, xa:xb] = a[ya + dy : yb + dy, xa + dx : xb + dx]
                diff = np.abs(tiles - sh.reshape(rows, block, cols, block)).sum(axis=(1, 3))
                sads[k] = np.where(ok, diff, np.inf)
            k += 1
    order = np.argsort(sads, axis=0, kind="stable")
    best = np.take_along_axis(sads, order[:1], axis=0)[0]
    if n * n > 1:
        second = np.take_along_axis(sads, order[1:2], axis=0)[0]
    else:
        second = np.full_like(best, np.inf)
    best_k = order[0]
    dy = best_k // n - radius
    dx = best_k % n - radius
    return dx.astype(np.int64), dy.astype(np.int64), best, second

"""Point correspondences and dense flow between frames.

Harris corners with NCC patch descriptors stand in for SURF; RANSAC runs
independently on the 2x2 sub-images for training-time supervision. Flow
fields are stored in normalized units on the grid of the *target* frame and
pull from the source: ``warp_with_flow(src, flow)(q) = src(q + flow(q))``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from . import kernels
from .errors import DimensionError, InsufficientDataError, NoConsensusError, DegenerateError, GeometryError
from .geometry import Homography, Vec2, apply_points, dlt_fit, invert, compose
from .image import Frame, norm_grid, pixel_scale, to_pixel

PATCH_RADIUS = 8  # 17x17 descriptors
RANSAC_ITERS = 500
# 3 px at the 512-wide reference resolution, in normalized units
RANSAC_THRESH = 3.0 * 2.0 / 511.0


@dataclass(frozen=True)
class Match:
    p_unsteady: Vec2
    p_steady: Vec2
    score: float


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Point pairs ``src[i] <-> dst[i]`` in normalized coordinates.

    For training supervision ``src`` holds unsteady-frame points and ``dst``
    the matching ground-truth steady-frame points. ``ids`` keeps the indices
    into the set a subset was taken from.
    """

    src: np.ndarray
    dst: np.ndarray
    scores: np.ndarray
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.float64).reshape(-1, 2)
        dst = np.asarray(self.dst, dtype=np.float64).reshape(-1, 2)
        if src.shape != dst.shape:
            raise DimensionError("src and dst must have equal length")
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        ids = np.arange(len(src)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))

    @classmethod
    def from_points(cls, src, dst, scores=None) -> "CorrespondenceSet":
        src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
        return cls(src, dst, np.ones(len(src)) if scores is None else scores)

    @property
    def m(self) -> int:
        return len(self.src)

    def __len__(self) -> int:
        return self.m

    @property
    def matches(self) -> list[Match]:
        return [
            Match((float(a[0]), float(a[1])), (float(b[0]), float(b[1])), float(s))
            for a, b, s in zip(self.src, self.dst, self.scores)
        ]

    def subset(self, idx) -> "CorrespondenceSet":
        idx = np.asarray(idx)
        return CorrespondenceSet(self.src[idx], self.dst[idx], self.scores[idx], self.ids[idx])

    @staticmethod
    def concat(sets) -> "CorrespondenceSet":
        sets = [s for s in sets if s.m]
        if not sets:
            return CorrespondenceSet.empty()
        return CorrespondenceSet(
            np.vstack([s.src for s in sets]),
            np.vstack([s.dst for s in sets]),
            np.concatenate([s.scores for s in sets]),
        )

    def to_json(self) -> list[list[float]]:
        """``[[x, y, x', y'], ...]`` with ``(x, y)`` from ``src``."""
        return [[float(a[0]), float(a[1]), float(b[0]), float(b[1])] for a, b in zip(self.src, self.dst)]

    @classmethod
    def from_json(cls, rows) -> "CorrespondenceSet":
        arr = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
        return cls.from_points(arr[:, :2], arr[:, 2:])

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass(frozen=True, eq=False)
class FlowField:
    dx: np.ndarray
    dy: np.ndarray
    mask: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)), np.ones((height, width), dtype=bool))


# -- feature detection and matching --------------------------------------


def harris_response(data: np.ndarray, sigma: float = 1.0, k: float = 0.04) -> np.ndarray:
    ix = ndimage.sobel(data, axis=1, mode="nearest") / 8.0
    iy = ndimage.sobel(data, axis=0, mode="nearest") / 8.0
    sxx = ndimage.gaussian_filter(ix * ix, sigma, mode="nearest")
    syy = ndimage.gaussian_filter(iy * iy, sigma, mode="nearest")
    sxy = ndimage.gaussian_filter(ix * iy, sigma, mode="nearest")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_corners(
    f: Frame,
    max_n: int = 500,
    *,
    border: int = 2,
    nms_radius: int = 2,
    rel_thresh: float = 0.01,
    abs_thresh: float = 1e-8,
    use_mask: bool = True,
) -> np.ndarray:
    """Up to ``max_n`` Harris maxima as an ``(N, 2)`` normalized array, strongest first.

    Locations are refined to sub-pixel precision with a quadratic fit of the
    response. Pixels near invalid mask regions are ignored when ``use_mask``.
    """
    r = harris_response(f.data)
    h, w = r.shape
    if max_n <= 0 or not np.any(r > abs_thresh):
        return np.zeros((0, 2))
    size = 2 * nms_radius + 1
    peak = (r == ndimage.maximum_filter(r, size=size, mode="constant", cval=-np.inf))
    keep = peak & (r > max(abs_thresh, rel_thresh * r.max()))
    keep[:border, :] = keep[-border:, :] = False
    keep[:, :border] = keep[:, -border:] = False
    if use_mask and not f.mask.all():
        keep &= ndimage.binary_erosion(f.mask, iterations=border + 1)
    jj, ii = np.nonzero(keep)
    if jj.size == 0:
        return np.zeros((0, 2))
    order = np.lexsort((ii, jj, -r[jj, ii]))[:max_n]
    jj, ii = jj[order], ii[order]
    # quadratic sub-pixel refinement along each axis
    fx = np.zeros(len(ii))
    fy = np.zeros(len(jj))
    inner_x = (ii > 0) & (ii < w - 1)
    inner_y = (jj > 0) & (jj < h - 1)
    c = r[jj, ii]
    l_ = r[jj, np.clip(ii - 1, 0, w - 1)]
    r_ = r[jj, np.clip(ii + 1, 0, w - 1)]
    den = l_ - 2 * c + r_
    ok = inner_x & (den < 0)
    fx[ok] = 0.5 * (l_[ok] - r_[ok]) / den[ok]
    u_ = r[np.clip(jj - 1, 0, h - 1), ii]
    d_ = r[np.clip(jj + 1, 0, h - 1), ii]
    den = u_ - 2 * c + d_
    ok = inner_y & (den < 0)
    fy[ok] = 0.5 * (u_[ok] - d_[ok]) / den[ok]
    fx = np.clip(fx, -0.5, 0.5)
    fy = np.clip(fy, -0.5, 0.5)
    u, v = _refine_corners(f.data, ii, jj, ii + fx, jj + fy)
    sx, sy = pixel_scale(w, h)
    return np.column_stack([u / sx - 1.0, v / sy - 1.0])


def _refine_corners(data: np.ndarray, ii, jj, u0, v0, radius: int = 3, sigma: float = 1.5):
    """Gradient-orthogonality refinement: the point closest, in the weighted
    least-squares sense, to every edge line through the window.

    Harris maxima of a blurred L-junction sit inside the corner; edge lines do
    not, so this removes that bias. Falls back to ``(u0, v0)`` when the window
    leaves the frame or the system is ill-conditioned.
    """
    h, w = data.shape
    gy, gx = np.gradient(data)
    off = np.arange(-radius, radius + 1)
    oy, ox = np.meshgrid(off, off, indexing="ij")
    wt = np.exp(-(ox**2 + oy**2) / (2.0 * sigma**2))
    u, v = np.array(u0, dtype=np.float64), np.array(v0, dtype=np.float64)
    for n, (i, j) in enumerate(zip(ii, jj)):
        if i - radius < 0 or j - radius < 0 or i + radius >= w or j + radius >= h:
            continue
        a = gx[j - radius : j + radius + 1, i - radius : i + radius + 1]
        b = gy[j - radius : j + radius + 1, i - radius : i + radius + 1]
        axx, axy, ayy = (wt * a * a).sum(), (wt * a * b).sum(), (wt * b * b).sum()
        det = axx * ayy - axy * axy
        tr = axx + ayy
        if tr <= 0.0 or det <= 1e-3 * tr * tr:
            continue
        px, py = i + ox, j + oy
        bx = (wt * (a * a * px + a * b * py)).sum()
        by = (wt * (a * b * px + b * b * py)).sum()
        qu = (ayy * bx - axy * by) / det
        qv = (axx * by - axy * bx) / det
        if abs(qu - i) <= 1.5 and abs(qv - j) <= 1.5:
            u[n], v[n] = qu, qv
    return u, v


def _ncc_surface(patch: np.ndarray, region: np.ndarray) -> np.ndarray:
    k = patch.shape[0]
    win = sliding_window_view(region, (k, k))
    p = patch - patch.mean()
    pn = np.sqrt((p * p).sum())
    wm = win.mean(axis=(2, 3), keepdims=True)
    wz = win - wm
    num = np.einsum("abij,ij->ab", wz, p)
    den = np.sqrt((wz * wz).sum(axis=(2, 3))) * pn
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 1e-9, num / den, -1.0)
    return out


def _parabola(m: float, c: float, p: float) -> float:
    den = m - 2.0 * c + p
    if not np.isfinite(den) or den >= 0.0:
        return 0.0
    return float(np.clip(0.5 * (m - p) / den, -0.5, 0.5))


def _search(a: np.ndarray, b: np.ndarray, i: int, j: int, radius: int, search: int, ratio: float, min_score: float):
    """Best NCC displacement of ``a``'s patch at pixel ``(i, j)`` inside ``b``.

    Returns ``(du, dv, score)`` with sub-pixel offsets, or ``None`` when the
    patch does not fit, is flat, or fails the score or ratio test.
    """
    h, w = a.shape
    k = 2 * radius + 1
    n = 2 * search + 1
    if i - radius < 0 or j - radius < 0 or i + radius >= w or j + radius >= h:
        return None
    patch = a[j - radius : j + radius + 1, i - radius : i + radius + 1]
    if patch.std() < 1e-6:
        return None
    # search region in b, clipped; track its offset from the nominal window
    y0, y1 = j - radius - search, j + radius + search + 1
    x0, x1 = i - radius - search, i + radius + search + 1
    cy0, cy1 = max(y0, 0), min(y1, h)
    cx0, cx1 = max(x0, 0), min(x1, w)
    region = b[cy0:cy1, cx0:cx1]
    if region.shape[0] < k or region.shape[1] < k:
        return None
    surf = np.full((n, n), -np.inf)
    core = _ncc_surface(patch, region)
    oy, ox = cy0 - y0, cx0 - x0
    surf[oy : oy + core.shape[0], ox : ox + core.shape[1]] = core
    by, bx = divmod(int(np.argmax(surf)), n)
    best = surf[by, bx]
    if not np.isfinite(best) or best < min_score:
        return None
    yy, xx = np.mgrid[0:n, 0:n]
    far = (np.abs(yy - by) >= 2) | (np.abs(xx - bx) >= 2)
    second = surf[far].max() if far.any() else -np.inf
    if not np.isfinite(second):
        second = -1.0
    if not (1.0 - best) < ratio * (1.0 - second):
        return None
    ox_ = _parabola(surf[by, bx - 1], best, surf[by, bx + 1]) if 0 < bx < n - 1 else 0.0
    oy_ = _parabola(surf[by - 1, bx], best, surf[by + 1, bx]) if 0 < by < n - 1 else 0.0
    # a perfect correlation is an exact integer match; the fit would only add bias
    if best >= 1.0 - 1e-12 or not (np.isfinite(ox_) and np.isfinite(oy_)):
        ox_ = oy_ = 0.0
    return bx - search + ox_, by - search + oy_, float(best)


def match_patches(
    a: Frame,
    b: Frame,
    pts_a: np.ndarray,
    *,
    radius: int = PATCH_RADIUS,
    search: int = 8,
    ratio: float = 0.9,
    min_score: float = 0.5,
    cross_check: bool = True,
) -> CorrespondenceSet:
    """NCC block search in ``b`` around each corner of ``a``.

    The patch around each point's nearest pixel, ``(2 radius + 1)^2`` wide, is
    compared against every displacement within ``search`` pixels, and the
    best peak is refined with a parabola. A match survives when
    ``(1 - best) < ratio * (1 - second)`` where ``second`` is the best NCC at
    least two pixels away from the peak. With ``cross_check`` the reverse
    search from the match must land within one pixel of the start.
    """
    if a.shape != b.shape:
        raise DimensionError("frames must have the same dimensions")
    h, w = a.shape
    pts_a = np.asarray(pts_a, dtype=np.float64).reshape(-1, 2)
    if pts_a.size == 0:
        return CorrespondenceSet.empty()
    u, v = to_pixel(pts_a[:, 0], pts_a[:, 1], w, h)
    sx, sy = pixel_scale(w, h)
    src, dst, scores = [], [], []
    for pu, pv in zip(u, v):
        i, j = int(np.rint(pu)), int(np.rint(pv))
        hit = _search(a.data, b.data, i, j, radius, search, ratio, min_score)
        if hit is None:
            continue
        du, dv, best = hit
        # the patch displacement applies to the sub-pixel corner inside it
        mu, mv = pu + du, pv + dv
        if cross_check:
            back = _search(b.data, a.data, int(np.rint(mu)), int(np.rint(mv)), radius, search, ratio, min_score)
            if back is None or np.hypot(np.rint(mu) + back[0] - i, np.rint(mv) + back[1] - j) > 1.0:
                continue
        src.append((pu / sx - 1.0, pv / sy - 1.0))
        dst.append((mu / sx - 1.0, mv / sy - 1.0))
        scores.append(best)
    if not src:
        return CorrespondenceSet.empty()
    return CorrespondenceSet(np.array(src), np.array(dst), np.array(scores))


# -- robust fitting ---------------------------------------------------------


def _residuals(h: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    try:
        proj = apply_points(h, src)
    except GeometryError:
        return np.full(len(src), np.inf)
    return np.sqrt(((proj - dst) ** 2).sum(axis=1))


def _minimal_homographies(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact 4-point homographies ``(k, 3, 3)`` for ``(k, 4, 2)`` samples, and a validity mask."""
    k = src.shape[0]
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    a = np.empty((k, 8, 8))
    a[:, 0::2] = np.stack([x, y, one, zero, zero, zero, -u * x, -u * y], axis=-1)
    a[:, 1::2] = np.stack([zero, zero, zero, x, y, one, -v * x, -v * y], axis=-1)
    rhs = np.empty((k, 8))
    rhs[:, 0::2], rhs[:, 1::2] = u, v
    # Hadamard ratio: |det| against the product of row norms, 0 when degenerate
    det = np.abs(np.linalg.det(a))
    ok = det > 1e-10 * np.prod(np.linalg.norm(a, axis=2), axis=1)
    h = np.zeros((k, 9))
    h[:, 8] = 1.0
    if ok.any():
        h[ok, :8] = np.linalg.solve(a[ok], rhs[ok][..., None])[..., 0]
    ok &= np.all(np.isfinite(h), axis=1)
    return h.reshape(k, 3, 3), ok


def _batch_residuals(hs: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    p = np.column_stack([src, np.ones(len(src))])
    q = np.einsum("kij,nj->kni", hs, p)
    w = q[..., 2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    r = np.hypot(q[..., 0] / w - dst[:, 0], q[..., 1] / w - dst[:, 1])
    return np.where(bad, np.inf, r)


def ransac_homography(
    cs: CorrespondenceSet,
    iters: int = RANSAC_ITERS,
    inlier_thresh: float = RANSAC_THRESH,
    rng: np.random.Generator | None = None,
    max_refits: int = 10,
) -> tuple[Homography, CorrespondenceSet]:
    """Maximal-consensus homography ``dst ~ H(src)`` refit on its inliers.

    Refitting repeats until the inlier set stops changing, so the returned
    inliers are a fixed point of one more refit.
    """
    m = cs.m
    if m < 4:
        raise InsufficientDataError(f"RANSAC needs at least 4 matches, got {m}")
    rng = np.random.default_rng(0) if rng is None else rng
    draws = np.array([rng.choice(m, size=4, replace=False) for _ in range(iters)]).reshape(-1, 4)
    hs, ok = _minimal_homographies(cs.src[draws], cs.dst[draws])
    if not ok.any():
        raise NoConsensusError("every minimal sample was degenerate")
    res = _batch_residuals(hs[ok], cs.src, cs.dst)
    inl = res < inlier_thresh
    ns = inl.sum(axis=1)
    errs = np.where(ns > 0, np.where(inl, res, 0.0).sum(axis=1), np.inf)
    # most inliers, then smallest summed residual, then earliest draw
    best = int(np.lexsort((np.arange(len(ns)), errs, -ns))[0])
    best_n, best_mask = int(ns[best]), inl[best]
    if best_n < 4:
        raise NoConsensusError(f"best consensus has {best_n} inliers (< 4)")
    mask = best_mask
    h = None
    for _ in range(max_refits):
        try:
            h = dlt_fit(cs.src[mask], cs.dst[mask])
        except GeometryError as exc:
            raise NoConsensusError(f"refit failed: {exc}") from exc
        new = _residuals(h, cs.src, cs.dst) < inlier_thresh
        if new.sum() < 4:
            break
        if np.array_equal(new, mask):
            break
        mask = new
    idx = np.flatnonzero(mask)
    return h, cs.subset(idx)


def quadrant_of(pts: np.ndarray) -> np.ndarray:
    """Sub-image index 0..3 (row-major over the 2x2 split) of normalized points."""
    return (pts[:, 1] >= 0).astype(int) * 2 + (pts[:, 0] >= 0).astype(int)


def subimage_match(
    unsteady: Frame,
    steady: Frame,
    *,
    max_corners: int = 400,
    radius: int = PATCH_RADIUS,
    search: int | None = None,
    thresh_px: float = 3.0,
    iters: int = RANSAC_ITERS,
    seed: int = 0,
    min_matches: int = 6,
) -> CorrespondenceSet:
    """Union of per-quadrant RANSAC inliers, ``src`` unsteady and ``dst`` steady."""
    if unsteady.shape != steady.shape:
        raise DimensionError("frames must have the same dimensions")
    h, w = unsteady.shape
    search = max(4, int(round(0.1 * w))) if search is None else search
    pts = detect_corners(unsteady, max_corners)
    cs = match_patches(unsteady, steady, pts, radius=radius, search=search)
    thresh = thresh_px * 2.0 / (w - 1)
    if cs.m == 0:
        return cs
    q = quadrant_of(cs.src)
    parts = []
    for k in range(4):
        sub = cs.subset(np.flatnonzero(q == k))
        if sub.m < max(4, min_matches):
            continue
        try:
            _, inl = ransac_homography(sub, iters, thresh, np.random.default_rng([seed, k]))
        except (NoConsensusError, InsufficientDataError):
            continue
        parts.append(inl)
    return CorrespondenceSet.concat(parts)


# -- dense flow -------------------------------------------------------------


def synthetic_flow(cam_prev: Homography, cam_next: Homography, width: int, height: int) -> FlowField:
    """Exact flow pulling frame ``t-1`` onto frame ``t``.

    ``cam_*`` map frame coordinates to scene coordinates, so the scene point
    seen at ``q`` in frame ``t`` appears at ``cam_prev^-1 cam_next (q)`` in
    frame ``t-1``.
    """
    rel = compose(invert(cam_prev), cam_next)
    qx, qy = norm_grid(width, height)
    src = apply_points(rel, np.column_stack([qx, qy]))
    dx = (src[:, 0] - qx).reshape(height, width)
    dy = (src[:, 1] - qy).reshape(height, width)
    mask = (np.abs(src[:, 0]) <= 1.0 + 1e-12) & (np.abs(src[:, 1]) <= 1.0 + 1e-12)
    return FlowField(dx, dy, mask.reshape(height, width))


def flow_sample_coords(flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    # offsets from the integer pixel grid, so zero flow samples exactly
    h, w = flow.shape
    sx, sy = pixel_scale(w, h)
    gv, gu = np.mgrid[0:h, 0:w]
    return gu.ravel() + flow.dx.ravel() * sx, gv.ravel() + flow.dy.ravel() * sy


def warp_with_flow(f: Frame, flow: FlowField) -> Frame:
    if f.shape != flow.shape:
        raise DimensionError(f"frame {f.shape} and flow {flow.shape} differ")
    u, v = flow_sample_coords(flow)
    val, _, _, ok = kernels.bilinear_sample(f.data, u, v)
    mask = ok & flow.mask.ravel()
    if not f.mask.all():
        mval, _, _, _ = kernels.bilinear_sample(f.mask.astype(np.float64), u, v)
        mask &= mval >= 1.0 - 1e-9
    h, w = f.shape
    return Frame(np.clip(val, 0.0, 1.0).reshape(h, w), mask.reshape(h, w))


def warp_channels_with_flow(arr: np.ndarray, flow: FlowField) -> np.ndarray:
    """Apply the same pull to every channel of an ``(H, W, C)`` array."""
    u, v = flow_sample_coords(flow)
    h, w, c = arr.shape
    out = np.empty((h * w, c))
    for k in range(c):
        out[:, k] = kernels.bilinear_sample(np.ascontiguousarray(arr[:, :, k]), u, v)[0]
    return out.reshape(h, w, c)


def block_matching_flow(a: Frame, b: Frame, block: int = 8, radius: int = 4, margin: float = 1e-3) -> FlowField:
    """Dense flow on ``b``'s grid pulling from ``a`` via per-block SAD search.

    A block is valid when its minimum SAD beats the runner-up by
    ``margin * block^2`` (mean absolute difference ``margin``).
    """
    if a.shape != b.shape:
        raise DimensionError("frames must have the same dimensions")
    h, w = b.shape
    if block < 1 or block > min(h, w) or radius < 0:
        raise DimensionError("block size and radius must fit inside the frame")
    dxp, dyp, best, second = kernels.sad_block_match(a.data, b.data, block, radius)
    bvalid = (second - best) > margin * block * block
    rows, cols = dxp.shape
    # tile centres sit at k * block + (block - 1) / 2; clamp outside them
    pu = np.clip((np.arange(w) - (block - 1) / 2.0) / block, 0.0, cols - 1)
    pv = np.clip((np.arange(h) - (block - 1) / 2.0) / block, 0.0, rows - 1)
    gu, gv = np.meshgrid(pu, pv)
    gu, gv = gu.ravel(), gv.ravel()
    sx, sy = pixel_scale(w, h)

    def up(tile_vals):
        if rows == 1 and cols == 1:
            return np.full(h * w, tile_vals[0, 0], dtype=np.float64)
        if rows == 1 or cols == 1:
            return ndimage.map_coordinates(tile_vals.astype(float), [gv, gu], order=1, mode="nearest")
        return kernels.bilinear_sample(tile_vals.astype(np.float64), gu, gv)[0]

    dx = up(dxp) / sx
    dy = up(dyp) / sy
    near_r = np.clip(np.rint(gv).astype(int), 0, rows - 1)
    near_c = np.clip(np.rint(gu).astype(int), 0, cols - 1)
    mask = bvalid[near_r, near_c]
    return FlowField(dx.reshape(h, w), dy.reshape(h, w), mask.reshape(h, w))

"""Grayscale frames, bilinear sampling and differentiable homography warps.

Warps pull: output pixel ``q`` (normalized) reads the source at ``H(q)``.
Sampling is zero-padded bilinear, so intensity is continuous in ``H`` even
when samples cross the frame edge; the validity mask marks samples whose
source lies outside ``[-1, 1]^2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import kernels
from .errors import DegenerateError, DimensionError, EmptyRegionError, SingularError
from .geometry import Homography, Vec2, apply_with_jacobian

LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True, eq=False)
class Frame:
    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape != self.mask.shape:
            raise DimensionError(f"data {self.data.shape} and mask {self.mask.shape} must be equal 2-D shapes")
        self.data.setflags(write=False)
        self.mask.setflags(write=False)

    @classmethod
    def from_array(cls, data, mask=None) -> "Frame":
        d = np.array(data, dtype=np.float64)
        m = np.ones(d.shape, dtype=bool) if mask is None else np.array(mask, dtype=bool)
        return cls(d, m)

    @classmethod
    def from_rgb(cls, rgb) -> "Frame":
        rgb = np.asarray(rgb, dtype=np.float64)
        return cls.from_array(rgb[..., 0] * LUMA[0] + rgb[..., 1] * LUMA[1] + rgb[..., 2] * LUMA[2])

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # (height, width)

    def with_mask(self, mask) -> "Frame":
        return Frame(self.data.copy(), np.array(mask, dtype=bool))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Frame)
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.mask, other.mask)
        )

    __hash__ = None  # type: ignore[assignment]


def pixel_scale(width: int, height: int) -> tuple[float, float]:
    """Pixels per normalized unit along x and y."""
    return (width - 1) / 2.0, (height - 1) / 2.0


def norm_grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat normalized coordinates of every pixel centre, row-major."""
    xs = np.arange(width) * (2.0 / (width - 1)) - 1.0
    ys = np.arange(height) * (2.0 / (height - 1)) - 1.0
    gx, gy = np.meshgrid(xs, ys)
    return gx.ravel(), gy.ravel()


def to_pixel(x, y, width: int, height: int):
    sx, sy = pixel_scale(width, height)
    return (np.asarray(x) + 1.0) * sx, (np.asarray(y) + 1.0) * sy


def _check_dims(f: Frame):
    if f.width < 2 or f.height < 2:
        raise DimensionError("frames must be at least 2x2 for sampling")


def bilinear_sample(f: Frame, p: Vec2):
    """Intensity at ``p``, its gradient in normalized units, and validity."""
    _check_dims(f)
    u, v = to_pixel(np.array([p[0]]), np.array([p[1]]), f.width, f.height)
    val, gu, gv, ok = kernels.bilinear_sample(f.data, u, v)
    sx, sy = pixel_scale(f.width, f.height)
    return float(val[0]), (float(gu[0] * sx), float(gv[0] * sy)), bool(ok[0])


def _source_mask(f: Frame, u: np.ndarray, v: np.ndarray, ok: np.ndarray) -> np.ndarray:
    if f.mask.all():
        return ok
    # a sample is valid only if every contributing source pixel is valid
    mval, _, _, _ = kernels.bilinear_sample(f.mask.astype(np.float64), u, v, grad=False)
    return ok & (mval >= 1.0 - 1e-9)


def _warp(f: Frame, h: Homography, out_shape, want_jac: bool):
    _check_dims(f)
    if abs(h.det()) < 1e-12:
        raise SingularError("cannot warp with a singular homography")
    ow, oh = (f.width, f.height) if out_shape is None else out_shape
    qx, qy = norm_grid(ow, oh)
    if want_jac:
        xs, ys, dxs, dys = apply_with_jacobian(h, qx, qy)
    else:
        m = h.matrix
        den = m[2, 0] * qx + m[2, 1] * qy + 1.0
        if np.any(np.abs(den) < 1e-12):
            raise DegenerateError("projective denominator vanishes inside the frame")
        xs = (m[0, 0] * qx + m[0, 1] * qy + m[0, 2]) / den
        ys = (m[1, 0] * qx + m[1, 1] * qy + m[1, 2]) / den
    u, v = to_pixel(xs, ys, f.width, f.height)
    val, gu, gv, ok = kernels.bilinear_sample(f.data, u, v, grad=want_jac)
    mask = _source_mask(f, u, v, ok)
    out = Frame(np.clip(val, 0.0, 1.0).reshape(oh, ow), mask.reshape(oh, ow))
    if not want_jac:
        return out, None
    sx, sy = pixel_scale(f.width, f.height)
    jac = (gu * sx)[:, None] * dxs + (gv * sy)[:, None] * dys
    return out, jac.reshape(oh, ow, 8)


def warp_frame(f: Frame, h: Homography, out_shape: tuple[int, int] | None = None) -> Frame:
    """Resample ``f`` so output pixel ``q`` shows ``f`` at ``h(q)``.

    ``out_shape`` is ``(width, height)`` of the output grid, defaulting to the
    input size.
    """
    return _warp(f, h, out_shape, want_jac=False)[0]


def warp_with_jacobian(f: Frame, h: Homography, out_shape: tuple[int, int] | None = None):
    """Warp plus the ``(H, W, 8)`` derivative of each output intensity w.r.t. ``h1..h8``.

    The derivative is the one-sided (interpolation cell) derivative at the
    measure-zero set of samples lying exactly on a pixel row or column.
    """
    return _warp(f, h, out_shape, want_jac=True)


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    if n_out == n_in:
        return np.eye(n_in)
    if n_out < n_in:
        # box filter: output cell k covers [k, k+1) * n_in / n_out
        edges = np.arange(n_out + 1) * (n_in / n_out)
        lo = edges[:-1, None]
        hi = edges[1:, None]
        left = np.arange(n_in)[None, :]
        overlap = np.clip(np.minimum(hi, left + 1) - np.maximum(lo, left), 0.0, None)
        return overlap / overlap.sum(axis=1, keepdims=True)
    # bilinear upsample on the shared pixel-centre convention
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1)) if n_out > 1 else np.zeros(1)
    i0 = np.clip(np.floor(pos).astype(int), 0, max(n_in - 2, 0))
    frac = pos - i0
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), i0] += 1.0 - frac
    if n_in > 1:
        m[np.arange(n_out), i0 + 1] += frac
    return m


def resize(f: Frame, width: int, height: int) -> Frame:
    """Area-average downsample or bilinear upsample, per axis."""
    if width < 1 or height < 1:
        raise DimensionError("target dimensions must be >= 1")
    if (width, height) == (f.width, f.height):
        return f
    ry = _area_matrix(f.height, height)
    rx = _area_matrix(f.width, width)
    data = np.clip(ry @ f.data @ rx.T, 0.0, 1.0)
    bad = ry @ (~f.mask).astype(np.float64) @ rx.T
    return Frame(data, bad <= 0.0)


@dataclass(frozen=True)
class CropRect:
    x: int
    y: int
    width: int
    height: int

    @property
    def area(self) -> int:
        return self.width * self.height

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "width": self.width, "height": self.height}

    def apply(self, f: Frame) -> Frame:
        sl = (slice(self.y, self.y + self.height), slice(self.x, self.x + self.width))
        return Frame(f.data[sl].copy(), f.mask[sl].copy())


def _combine(masks) -> np.ndarray:
    if isinstance(masks, np.ndarray) and masks.ndim == 2:
        return masks.astype(bool)
    it = iter(masks)
    acc = np.array(next(it), dtype=bool)
    for m in it:
        acc &= np.asarray(m, dtype=bool)
    return acc


def valid_crop(masks: np.ndarray | Iterable[np.ndarray]) -> CropRect:
    """Largest centred rectangle valid in every mask.

    Centred means equal insets left/right and top/bottom. Ties in area go to
    the smaller vertical inset.
    """
    m = _combine(masks)
    h, w = m.shape
    if not m.any():
        raise EmptyRegionError("no valid pixels")
    bad = (~m).astype(np.int64)
    # column-wise prefix sums over rows
    pre = np.vstack([np.zeros((1, w), dtype=np.int64), np.cumsum(bad, axis=0)])
    cols = np.arange(w)
    need = np.minimum(cols + 1, w - cols)  # inset that excludes column c
    best = None
    for dy in range((h - 1) // 2 + 1):
        colbad = (pre[h - dy] - pre[dy]) > 0
        dx = int(need[colbad].max()) if colbad.any() else 0
        if w - 2 * dx < 1:
            continue
        rect = CropRect(dx, dy, w - 2 * dx, h - 2 * dy)
        if best is None or rect.area > best.area:
            best = rect
    if best is None:
        raise EmptyRegionError("no centred rectangle is fully valid")
    return best


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if mask is not None:
        d = d[mask]
    mse = float(np.mean(d * d))
    return float("inf") if mse == 0.0 else 10.0 * np.log10(1.0 / mse)

from __future__ import annotations

import numpy as np
import pytest

from conftest import random_h, smooth_frame
from stabkit.errors import DimensionError, EmptyRegionError, SingularError
from stabkit.geometry import IDENTITY, Homography, apply_points, invert
from stabkit.image import (
    CropRect,
    Frame,
    bilinear_sample,
    norm_grid,
    psnr,
    resize,
    valid_crop,
    warp_frame,
    warp_with_jacobian,
)


def _norm(px, n):
    return px * 2.0 / (n - 1) - 1.0


def test_frame_validation_and_readonly():
    with pytest.raises(DimensionError):
        Frame(np.zeros((3, 4)), np.ones((4, 3), dtype=bool))
    f = Frame.from_array(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        f.data[0, 0] = 1.0
    assert f.mask.all() and f.width == 4 and f.height == 3


def test_bilinear_sample_trivial():
    data = np.zeros((4, 5))
    data[2, 1], data[2, 2] = 0.0, 1.0
    f = Frame.from_array(data)
    v, _, ok = bilinear_sample(f, (_norm(2, 5), _norm(2, 4)))
    assert v == 1.0 and ok
    v, (gx, _), ok = bilinear_sample(f, (_norm(1.5, 5), _norm(2, 4)))
    assert abs(v - 0.5) < 1e-15 and ok
    # one pixel is 2/(W-1) normalized units
    assert abs(gx - 1.0 / (2.0 / 4)) < 1e-12
    v, _, ok = bilinear_sample(f, (3.0, 0.0))
    assert v == 0.0 and not ok


def test_bilinear_gradient_matches_fd(rng):
    f = smooth_frame(rng)
    worst = 0.0
    for _ in range(200):
        p = rng.uniform(-0.95, 0.95, 2)
        _, g, _ = bilinear_sample(f, p)
        eps = 1e-7
        fd = []
        for k in range(2):
            a, b = p.copy(), p.copy()
            a[k] += eps
            b[k] -= eps
            fd.append((bilinear_sample(f, a)[0] - bilinear_sample(f, b)[0]) / (2 * eps))
        # skip stencils straddling a pixel row or column (the kink set)
        u = (p[0] + 1) * (f.width - 1) / 2
        v = (p[1] + 1) * (f.height - 1) / 2
        if abs(u - round(u)) < 1e-5 or abs(v - round(v)) < 1e-5:
            continue
        worst = max(worst, np.linalg.norm(np.subtract(g, fd)) / np.linalg.norm(fd))
    assert worst < 1e-6


def test_warp_identity_bit_exact(rng):
    f = smooth_frame(rng)
    w = warp_frame(f, IDENTITY)
    assert w == f


def test_warp_one_pixel_shift(rng):
    f = smooth_frame(rng, 20, 12)
    h = Homography.translation(2.0 / 19, 0.0)
    w = warp_frame(f, h)
    np.testing.assert_allclose(w.data[:, :-1], f.data[:, 1:], atol=1e-12)
    assert not w.mask[:, -1].any() and w.mask[:, :-1].all()


def test_warp_round_trip_psnr(rng):
    f = smooth_frame(rng, 64, 36, sigma=3.0)
    for _ in range(10):
        h = random_h(rng, 0.3)
        back = warp_frame(warp_frame(f, h), invert(h))
        assert psnr(back.data, f.data, back.mask) >= 40.0


def test_warp_mask_marks_out_of_source(rng):
    f = smooth_frame(rng)
    h = random_h(rng)
    w = warp_frame(f, h)
    qx, qy = norm_grid(f.width, f.height)
    src = apply_points(h, np.column_stack([qx, qy]))
    # pixel-centre hull with a tolerance for the in-kernel snapping
    tol = 1e-9 * 2 / (f.width - 1)
    inside = np.all(np.abs(src) <= 1.0 + tol, axis=1)
    exact = np.all(np.abs(src) <= 1.0 - tol, axis=1)
    m = w.mask.ravel()
    assert np.all(m[exact]) and not np.any(m[~inside])
    assert w.data.min() >= 0.0 and w.data.max() <= 1.0


def test_warp_singular():
    f = Frame.from_array(np.zeros((4, 4)))
    with pytest.raises(SingularError):
        warp_frame(f, Homography([[1, 1, 0], [1, 1, 0], [0, 0, 1]]))


def test_jacobian_trivial_cases():
    f = Frame.from_array(np.full((9, 16), 0.4))
    w, jac = warp_with_jacobian(f, Homography.translation(0.05, 0.02))
    # the zero-padded fringe has a real edge, so only valid pixels are flat
    assert np.all(jac[w.mask] == 0.0)
    xs = np.linspace(0, 1, 16)
    ramp = Frame.from_array(np.tile(xs, (9, 1)))
    w, jac = warp_with_jacobian(ramp, Homography.translation(0.03, 0.0))
    slope = (xs[1] - xs[0]) * (16 - 1) / 2.0
    np.testing.assert_allclose(jac[..., 2][w.mask], slope, atol=1e-12)


def test_jacobian_matches_fd_at_most_pixels(rng):
    eps = 1e-5
    for _ in range(10):
        f = smooth_frame(rng)
        h = random_h(rng)
        w, jac = warp_with_jacobian(f, h)
        good = np.zeros(8)
        total = w.mask.sum()
        for k in range(8):
            p = h.params.copy()
            p[k] += eps
            a = warp_frame(f, Homography.from_params(p)).data
            p[k] -= 2 * eps
            b = warp_frame(f, Homography.from_params(p)).data
            fd = (a - b) / (2 * eps)
            err = np.abs(jac[..., k] - fd) / np.maximum(np.abs(fd), 1e-3)
            good[k] = np.sum(err[w.mask] < 1e-4)
        assert np.all(good >= 0.99 * total)


def test_resize_cases():
    f = Frame.from_array(np.full((2, 2), 0.3))
    assert resize(f, 2, 2) is f
    assert resize(f, 1, 1).data[0, 0] == pytest.approx(0.3, abs=1e-15)
    c = Frame.from_array([[0.0, 1.0], [1.0, 0.0]])
    assert resize(c, 1, 1).data[0, 0] == 0.5
    up = resize(c, 5, 3)
    assert up.shape == (3, 5) and up.data.min() >= 0 and up.data.max() <= 1
    with pytest.raises(DimensionError):
        resize(c, 0, 1)


def _brute_crop(mask):
    h, w = mask.shape
    best = None
    for dy in range((h - 1) // 2 + 1):
        for dx in range((w - 1) // 2 + 1):
            r = CropRect(dx, dy, w - 2 * dx, h - 2 * dy)
            if mask[dy : h - dy, dx : w - dx].all() and (best is None or r.area > best.area):
                best = r
    return best


def test_valid_crop(rng):
    m = np.ones((18, 32), dtype=bool)
    assert valid_crop(m) == CropRect(0, 0, 32, 18)
    b = m.copy()
    b[:2], b[-2:], b[:, :2], b[:, -2:] = False, False, False, False
    assert valid_crop(b) == CropRect(2, 2, 28, 14)
    f = smooth_frame(rng)
    masks = [warp_frame(f, random_h(rng, 0.3)).mask for _ in range(5)]
    inter = np.logical_and.reduce(masks)
    assert valid_crop(masks) == _brute_crop(inter)
    with pytest.raises(EmptyRegionError):
        valid_crop(np.zeros((4, 4), dtype=bool))

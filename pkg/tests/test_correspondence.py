from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from conftest import oracle_apply, random_h
from stabkit import datagen as dg
from stabkit.correspondence import (
    CorrespondenceSet,
    FlowField,
    block_matching_flow,
    detect_corners,
    match_patches,
    ransac_homography,
    subimage_match,
    synthetic_flow,
    warp_with_flow,
)
from stabkit.errors import DimensionError, InsufficientDataError
from stabkit.geometry import Homography, PerturbationRange, apply_points, sample_perturbation
from stabkit.image import Frame, norm_grid, psnr, to_pixel, warp_frame


def _textured(seed, w=96, h=64, sigma=1.2):
    r = np.random.default_rng(seed)
    d = ndimage.gaussian_filter(r.uniform(size=(h, w)), sigma)
    d = (d - d.min()) / (d.max() - d.min())
    return Frame.from_array(d)


def test_detect_corners_constant_and_square():
    assert detect_corners(Frame.from_array(np.full((32, 32), 0.5)), 50).shape == (0, 2)
    d = np.zeros((48, 48))
    d[12:36, 12:36] = 1.0
    f = Frame.from_array(ndimage.gaussian_filter(d, 0.7))
    pts = detect_corners(f, 4)
    u, v = to_pixel(pts[:, 0], pts[:, 1], 48, 48)
    # corner pixels of the square
    for cu, cv in [(12, 12), (35, 12), (12, 35), (35, 35)]:
        assert np.min(np.hypot(u - cu, v - cv)) <= 1.0


def test_detect_corners_contract():
    f = _textured(0)
    pts = detect_corners(f, 10)
    assert 0 < len(pts) <= 10
    # strongest first: a shorter request is a prefix of a longer one
    np.testing.assert_array_equal(pts, detect_corners(f, 50)[:10])


def test_match_patches_identity_and_shift():
    a = _textured(1)
    pts = detect_corners(a, 80)
    cs = match_patches(a, a, pts)
    assert cs.m > 0.5 * len(pts)
    np.testing.assert_allclose(cs.src, cs.dst, atol=1e-12)
    # b(x) = a(x - 3): content moves 3 px right
    b = Frame.from_array(np.roll(a.data, 3, axis=1))
    # keep corners whose displaced patch stays clear of the wrapped seam
    u, _ = to_pixel(pts[:, 0], pts[:, 1], a.width, a.height)
    pts = pts[(u > 8 + 3) & (u < a.width - 1 - 8 - 3)]
    cs = match_patches(a, b, pts)
    assert cs.m > 0.5 * len(pts)
    du = (cs.dst[:, 0] - cs.src[:, 0]) * (a.width - 1) / 2
    dv = (cs.dst[:, 1] - cs.src[:, 1]) * (a.height - 1) / 2
    assert np.all(np.abs(du - 3) <= 0.5) and np.all(np.abs(dv) <= 0.5)


def test_match_patches_unrelated_noise():
    fracs = []
    for s in range(10):
        a, b = _textured(100 + s), _textured(200 + s)
        pts = detect_corners(a, 80)
        fracs.append(match_patches(a, b, pts).m / max(len(pts), 1))
    assert np.mean(fracs) < 0.15


def _planted(h, m, rng):
    src = rng.uniform(-1, 1, (m, 2))
    return src, np.array([oracle_apply(h, p) for p in src])


def test_ransac_clean_and_outliers(rng):
    h = random_h(rng)
    src, dst = _planted(h, 50, rng)
    g, inl = ransac_homography(CorrespondenceSet.from_points(src, dst))
    assert np.max(np.abs(g.matrix - h.matrix)) < 1e-9 and inl.m == 50
    src, dst = _planted(h, 70, rng)
    bad = rng.permutation(70)[:21]
    dst[bad] = rng.uniform(-1, 1, (21, 2))
    g, inl = ransac_homography(CorrespondenceSet.from_points(src, dst))
    assert np.max(np.abs(g.matrix - h.matrix)) < 1e-6
    assert sorted(inl.ids) == sorted(set(range(70)) - set(bad))
    with pytest.raises(InsufficientDataError):
        ransac_homography(CorrespondenceSet.from_points(src[:3], dst[:3]))


def test_ransac_permutation_and_fixed_point(rng):
    h = random_h(rng)
    src, dst = _planted(h, 60, rng)
    dst[:15] = rng.uniform(-1, 1, (15, 2))
    cs = CorrespondenceSet.from_points(src, dst)
    g1, inl1 = ransac_homography(cs, rng=np.random.default_rng(5))
    perm = rng.permutation(60)
    g2, inl2 = ransac_homography(cs.subset(perm), rng=np.random.default_rng(5))
    assert sorted(inl1.ids) == sorted(inl2.ids)
    assert np.max(np.abs(g1.matrix - g2.matrix)) < 1e-12
    g3, inl3 = ransac_homography(inl1, rng=np.random.default_rng(1))
    assert inl3.m == inl1.m


def test_subimage_match_identity_and_planted():
    a = _textured(7, 128, 72)
    cs = subimage_match(a, a)
    assert cs.m > 40
    np.testing.assert_allclose(cs.src, cs.dst, atol=1e-12)
    r = np.random.default_rng(8)
    h = sample_perturbation(PerturbationRange.default().scaled(0.2), r)
    steady = warp_frame(a, h)  # steady(q) = a(h q)
    cs = subimage_match(a, steady)
    assert cs.m > 20
    from stabkit.correspondence import quadrant_of

    q = quadrant_of(cs.src)
    for k in range(4):
        sub = cs.subset(np.flatnonzero(q == k))
        if sub.m < 4:
            continue
        g, _ = ransac_homography(sub)
        err = np.hypot(*((apply_points(g, sub.src) - sub.dst) * [(a.width - 1) / 2, (a.height - 1) / 2]).T)
        assert err.max() < 1.0


def test_subimage_match_flat_quadrant():
    a = _textured(9, 128, 72)
    d = a.data.copy()
    d[:36, :64] = 0.5
    f = Frame.from_array(d)
    cs = subimage_match(f, f)
    assert cs.m > 0
    assert np.all((cs.src[:, 0] >= 0) | (cs.src[:, 1] >= 0))


def test_synthetic_flow_cases(rng):
    h = random_h(rng)
    z = synthetic_flow(h, h, 16, 9)
    assert np.abs(z.dx).max() < 1e-12 and np.abs(z.dy).max() < 1e-12
    t = synthetic_flow(Homography.translation(0.2, 0), Homography.translation(0.3, 0), 16, 9)
    np.testing.assert_allclose(t.dx, 0.1, atol=1e-12)
    np.testing.assert_allclose(t.dy, 0.0, atol=1e-12)
    a, b = random_h(rng), random_h(rng)
    fl = synthetic_flow(a, b, 16, 9)
    rel = np.linalg.inv(a.matrix) @ b.matrix
    qx, qy = norm_grid(16, 9)
    for i in range(0, 144, 11):
        p = (qx[i], qy[i])
        e = np.array(oracle_apply(Homography(rel), p)) - p
        assert abs(fl.dx.ravel()[i] - e[0]) < 1e-10 and abs(fl.dy.ravel()[i] - e[1]) < 1e-10


def test_block_matching_flow():
    a = _textured(3, 64, 48)
    z = block_matching_flow(a, a)
    assert np.all(z.dx == 0) and np.all(z.dy == 0)
    b = Frame.from_array(np.roll(a.data, -2, axis=1))  # b(x) = a(x + 2)
    f = block_matching_flow(a, b)
    px = f.dx * (a.width - 1) / 2
    inner = f.mask.copy()
    inner[:, -12:] = False  # wrapped columns
    assert inner.sum() > 0.5 * inner.size
    np.testing.assert_allclose(px[inner], 2.0, atol=1e-9)
    r0 = block_matching_flow(a, b, radius=0)
    assert np.all(r0.dx == 0) and np.all(r0.dy == 0)


def test_warp_with_flow_cases():
    a = _textured(4, 32, 20)
    assert warp_with_flow(a, FlowField.zeros(32, 20)) == a
    one = FlowField(np.full((20, 32), 2.0 / 31), np.zeros((20, 32)), np.ones((20, 32), dtype=bool))
    w = warp_with_flow(a, one)
    np.testing.assert_allclose(w.data[:, :-1], a.data[:, 1:], atol=1e-12)
    assert not w.mask[:, -1].any()
    with pytest.raises(DimensionError):
        warp_with_flow(a, FlowField.zeros(31, 20))


def test_synthetic_flow_matches_rendered_frames():
    pair = dg.generate_clip(dg.MotionScript(kind="mixed", length=20), 11, (128, 72))
    for t in (5, 12):
        flow = pair.flow(t)
        moved = warp_with_flow(pair.steady[t - 1], flow)
        inner = moved.mask.copy()
        inner[:4], inner[-4:], inner[:, :4], inner[:, -4:] = False, False, False, False
        assert psnr(moved.data, pair.steady[t].data, inner) >= 40.0


def test_correspondence_json_round_trip(rng):
    cs = CorrespondenceSet.from_points(rng.uniform(-1, 1, (5, 2)), rng.uniform(-1, 1, (5, 2)))
    back = CorrespondenceSet.from_json(cs.to_json())
    assert np.array_equal(back.src, cs.src) and np.array_equal(back.dst, cs.dst)
    with pytest.raises(DimensionError):
        CorrespondenceSet.from_points(np.zeros((3, 2)), np.zeros((2, 2)))

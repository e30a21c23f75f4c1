"""Cropping ratio, distortion and stability scores.

Every per-frame transform here is a pull map ``F_t`` from output (stabilized)
coordinates to input coordinates, i.e. the inverse of the input->output
homography. Its scale is below 1 when the output is a zoomed-in crop.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .correspondence import (
    RANSAC_ITERS,
    detect_corners,
    match_patches,
    ransac_homography,
)
from .errors import GeometryError, InsufficientDataError, NoConsensusError
from .geometry import IDENTITY, CameraPath, Homography, accumulate_path, compose, decompose, invert
from .image import Frame, warp_frame

log = logging.getLogger(__name__)

MIN_FRAMES = 16
LOW_BINS = (2, 6)
MIN_INLIERS = 8
FLAT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Estimate:
    transforms: tuple[Homography, ...]
    flags: tuple[bool, ...]  # True where estimation failed and identity was substituted

    @property
    def n_failed(self) -> int:
        return int(sum(self.flags))


def _fit(a: Frame, b: Frame, pts, seed: int, thresh: float) -> Homography | None:
    cs = match_patches(a, b, pts, search=max(4, int(round(0.1 * a.width))))
    try:
        h, inl = ransac_homography(cs, RANSAC_ITERS, thresh, np.random.default_rng(seed))
    except (NoConsensusError, InsufficientDataError, GeometryError):
        return None
    return h if inl.m >= MIN_INLIERS else None


def estimate_pair(a: Frame, b: Frame, seed: int = 0, thresh_px: float = 1.5, refine: int = 1) -> tuple[Homography, bool]:
    """``H`` with ``b ~ H(a)`` in normalized coordinates, or identity and a failure flag.

    Each refinement pass pulls ``b`` back through the current estimate and
    matches again, so patches compare nearly aligned content even under
    strong scaling or shear.
    """
    pts = detect_corners(a, 400)
    if len(pts) < MIN_INLIERS:
        return IDENTITY, True
    if a == b:
        return IDENTITY, False
    thresh = thresh_px * 2.0 / (a.width - 1)
    h = _fit(a, b, pts, seed, thresh)
    if h is None:
        return IDENTITY, True
    for _ in range(refine):
        if h.is_identity():
            break
        try:
            back = warp_frame(b, h)
        except GeometryError:
            break
        r = _fit(a, back, pts, seed, thresh)
        if r is None:
            break
        # back(p) = b(h p), so a point p of a sits at h(r(p)) in b
        h = compose(h, r)
    return h, False


def estimate_interframe(frames: Sequence[Frame], seed: int = 0) -> Estimate:
    """``H_t`` mapping frame ``t+1`` coordinates into frame ``t``, for each consecutive pair."""
    frames = list(frames)
    if len(frames) < 2:
        raise InsufficientDataError("need at least 2 frames")
    hs, flags = [], []
    for t in range(len(frames) - 1):
        h, bad = estimate_pair(frames[t + 1], frames[t], seed)
        if bad:
            log.warning("frame %d->%d: matching failed, using identity", t, t + 1)
        hs.append(h)
        flags.append(bad)
    return Estimate(tuple(hs), tuple(flags))


def estimate_io(inputs: Sequence[Frame], outputs: Sequence[Frame], seed: int = 0) -> Estimate:
    """Per-frame pull maps from output frame ``t`` to input frame ``t``."""
    if len(inputs) != len(outputs):
        raise ValueError(f"input has {len(inputs)} frames, output {len(outputs)}")
    hs, flags = [], []
    for a, b in zip(outputs, inputs):
        h, bad = estimate_pair(a, b, seed)
        hs.append(h)
        flags.append(bad)
    return Estimate(tuple(hs), tuple(flags))


# -- formulas -----------------------------------------------------------------


def _scales(transforms: Sequence[Homography]) -> np.ndarray:
    return np.array([decompose(h).scale for h in transforms])


def _anisotropy(transforms: Sequence[Homography]) -> np.ndarray:
    return np.array([decompose(h).anisotropy for h in transforms])


def _keep(n: int, flags) -> np.ndarray:
    keep = np.ones(n, dtype=bool) if flags is None else ~np.asarray(flags, dtype=bool)
    if not keep.any():
        raise InsufficientDataError("every frame was flagged by estimation")
    return keep


def cropping_from_transforms(transforms: Sequence[Homography], flags=None) -> float:
    s = _scales(transforms)
    return float(np.mean(s[_keep(len(s), flags)]))


def distortion_from_transforms(transforms: Sequence[Homography], flags=None) -> float:
    a = _anisotropy(transforms)
    return float(np.min(a[_keep(len(a), flags)]))


def cropping_ratio(inputs: Sequence[Frame], outputs: Sequence[Frame], seed: int = 0) -> float:
    est = estimate_io(inputs, outputs, seed)
    return cropping_from_transforms(est.transforms, est.flags)


def distortion(inputs: Sequence[Frame], outputs: Sequence[Frame], seed: int = 0) -> float:
    est = estimate_io(inputs, outputs, seed)
    return distortion_from_transforms(est.transforms, est.flags)


def signal_score(x: np.ndarray, dc_inclusive: bool = False) -> float:
    """Share of spectral energy in bins 2..6 among bins 2..N/2 (0..N/2 if ``dc_inclusive``).

    A signal with no energy in the denominator has nothing to stabilize and
    scores 1.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < MIN_FRAMES:
        raise InsufficientDataError(f"stability needs at least {MIN_FRAMES} frames, got {n}")
    # motion at round-off level (composed exact transforms) counts as none
    if np.ptp(x) <= FLAT_TOL * max(1.0, float(np.max(np.abs(x)))):
        return 1.0
    e = np.abs(np.fft.rfft(x)) ** 2
    lo, hi = LOW_BINS
    num = e[lo : hi + 1].sum()
    den = e[(0 if dc_inclusive else lo) : n // 2 + 1].sum()
    if den == 0.0:
        return 1.0
    return float(num / den)


@dataclass(frozen=True)
class StabilityScores:
    tx: float
    ty: float
    rotation: float

    @property
    def translation(self) -> float:
        return min(self.tx, self.ty)

    @property
    def value(self) -> float:
        return min(self.translation, self.rotation)


def stability_from_signals(tx, ty, theta, dc_inclusive: bool = False) -> StabilityScores:
    return StabilityScores(
        signal_score(tx, dc_inclusive), signal_score(ty, dc_inclusive), signal_score(theta, dc_inclusive)
    )


def path_signals(path: CameraPath) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tr = path.translations()
    return tr[:, 0], tr[:, 1], np.unwrap(path.angles())


def stability_from_path(path: CameraPath, dc_inclusive: bool = False) -> StabilityScores:
    return stability_from_signals(*path_signals(path), dc_inclusive=dc_inclusive)


def stability_score(frames: Sequence[Frame], seed: int = 0, dc_inclusive: bool = False) -> float:
    frames = list(frames)
    if len(frames) < MIN_FRAMES:
        raise InsufficientDataError(f"stability needs at least {MIN_FRAMES} frames, got {len(frames)}")
    est = estimate_interframe(frames, seed)
    return stability_from_path(accumulate_path(est.transforms), dc_inclusive).value


# -- reports ------------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    cropping_ratio: float
    distortion: float
    stability: float
    stability_parts: dict
    per_frame_scale: tuple[float, ...]
    per_frame_distortion: tuple[float, ...]
    flagged: tuple[int, ...] = ()
    source: str = "estimated"

    def to_dict(self) -> dict:
        return {
            "cropping_ratio": self.cropping_ratio,
            "distortion": self.distortion,
            "stability": self.stability,
            "stability_parts": dict(self.stability_parts),
            "per_frame": {"scale": list(self.per_frame_scale), "distortion": list(self.per_frame_distortion)},
            "flagged_frames": list(self.flagged),
            "source": self.source,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "scale", "distortion", "flagged"])
        fl = set(self.flagged)
        for i, (s, d) in enumerate(zip(self.per_frame_scale, self.per_frame_distortion)):
            w.writerow([i, repr(s), repr(d), int(i in fl)])
        return buf.getvalue()


def output_interframe(input_inter: Sequence[Homography], transforms: Sequence[Homography]) -> list[Homography]:
    """Output-video inter-frame maps ``F_t^-1 H_t F_{t+1}``."""
    if len(input_inter) != len(transforms) - 1:
        raise ValueError(f"{len(input_inter)} inter-frame maps for {len(transforms)} frames")
    return [compose(compose(invert(transforms[t]), h), transforms[t + 1]) for t, h in enumerate(input_inter)]


def _report(transforms, io_flags, out_inter, dc_inclusive: bool, source: str) -> MetricReport:
    path = accumulate_path(out_inter)
    st = stability_from_path(path, dc_inclusive)
    flagged = tuple(int(i) for i in np.flatnonzero(io_flags)) if io_flags is not None else ()
    return MetricReport(
        cropping_ratio=cropping_from_transforms(transforms, io_flags),
        distortion=distortion_from_transforms(transforms, io_flags),
        stability=st.value,
        stability_parts={"tx": st.tx, "ty": st.ty, "rotation": st.rotation},
        per_frame_scale=tuple(float(v) for v in _scales(transforms)),
        per_frame_distortion=tuple(float(v) for v in _anisotropy(transforms)),
        flagged=flagged,
        source=source,
    )


def report_from_transforms(
    input_inter: Sequence[Homography],
    transforms: Sequence[Homography],
    dc_inclusive: bool = False,
) -> MetricReport:
    """Scores from exact transforms, bypassing feature matching.

    ``input_inter[t]`` maps input frame ``t+1`` into frame ``t``;
    ``transforms[t]`` is the pull map of output frame ``t``.
    """
    transforms = list(transforms)
    return _report(transforms, None, output_interframe(input_inter, transforms), dc_inclusive, "ground_truth")


def report(inputs: Sequence[Frame], outputs: Sequence[Frame], seed: int = 0, dc_inclusive: bool = False) -> MetricReport:
    io_est = estimate_io(inputs, outputs, seed)
    inter = estimate_interframe(outputs, seed)
    if inter.n_failed:
        log.warning("%d output inter-frame estimates fell back to identity", inter.n_failed)
    return _report(list(io_est.transforms), io_est.flags, list(inter.transforms), dc_inclusive, "estimated")


def cams_to_interframe(cams: Sequence[Homography]) -> list[Homography]:
    return [compose(invert(cams[t]), cams[t + 1]) for t in range(len(cams) - 1)]

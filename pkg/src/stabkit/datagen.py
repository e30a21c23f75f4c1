"""Synthetic steady/unsteady video pairs with exact ground truth.

A textured plane is filmed by two virtual cameras. Camera homographies map
frame coordinates to scene coordinates: the steady camera is
``base @ G_t`` for a smooth path ``G_t``, the unsteady one
``base @ G_t @ J_t`` with band-limited jitter ``J_t``. The transform that
stabilizes unsteady frame ``t`` is therefore ``J_t^-1``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import PchipInterpolator

from .correspondence import CorrespondenceSet, FlowField, synthetic_flow
from .errors import GeometryError, StabkitError
from .frameio import read_sequence, write_sequence
from .geometry import (
    IDENTITY,
    Homography,
    PerturbationRange,
    apply_points,
    compose,
    invert,
    sample_perturbation,
)
from .image import Frame, warp_frame

MOTION_TYPES = ("forward", "pan", "spin", "mixed")
TRAIN_OFFSETS = (30, 24, 18, 12, 6)
DEFAULT_DIMS = (64, 36)
DEFAULT_FRAMES = 120
FPS = 30.0
KEY_SPACING = 20

# per-frame parameter speed at speed=1
_PAN_SPEED = (0.004, 0.002)
_ZOOM_SPEED = 0.0015
_SPIN_SPEED = 0.002

_TRANS, _LINEAR, _PROJ = (2, 5), (0, 1, 3, 4), (6, 7)


class SceneError(StabkitError):
    pass


@dataclass(frozen=True)
class MotionScript:
    kind: str = "mixed"
    length: int = DEFAULT_FRAMES
    speed: float = 1.0
    jitter_amp: float = 0.06
    jitter_linear: float | None = None
    jitter_proj: float | None = None
    band: tuple[float, float] = (0.15, 0.45)

    def __post_init__(self):
        if self.kind not in MOTION_TYPES:
            raise ValueError(f"unknown motion type {self.kind!r}")
        if self.length < 2:
            raise ValueError("clip length must be >= 2")
        lo, hi = self.band
        if not (0.0 < lo < hi < 0.5):
            raise ValueError(f"jitter band {self.band} must satisfy 0 < lo < hi < 0.5")
        if self.speed < 0 or self.jitter_amp < 0:
            raise ValueError("speed and jitter amplitude must be non-negative")

    @property
    def linear_amp(self) -> float:
        return 0.2 * self.jitter_amp if self.jitter_linear is None else self.jitter_linear

    @property
    def proj_amp(self) -> float:
        return 0.05 * self.jitter_amp if self.jitter_proj is None else self.jitter_proj

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "length": self.length,
            "speed": self.speed,
            "jitter_amp": self.jitter_amp,
            "jitter_linear": self.jitter_linear,
            "jitter_proj": self.jitter_proj,
            "band": list(self.band),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotionScript":
        d = dict(d)
        d["band"] = tuple(d.get("band", (0.15, 0.45)))
        return cls(**d)


# -- scene --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScenePlane:
    texture: Frame
    corners: np.ndarray  # planted corner points, scene-normalized (N, 2)
    footprint: float  # fraction of the scene extent covered by the base camera

    @property
    def base(self) -> Homography:
        return Homography.scaling(self.footprint)


def _value_noise(rng: np.random.Generator, width: int, height: int, finest: float) -> np.ndarray:
    """Multi-octave smooth noise; ``finest`` is the shortest wavelength in pixels."""
    out = np.zeros((height, width))
    amp, total = 1.0, 0.0
    wl = max(width, height) / 2.0
    while wl >= finest:
        gw = int(np.ceil(width / wl)) + 3
        gh = int(np.ceil(height / wl)) + 3
        grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
        zy = np.linspace(1.0, gh - 2.0, height)
        zx = np.linspace(1.0, gw - 2.0, width)
        yy, xx = np.meshgrid(zy, zx, indexing="ij")
        out += amp * ndimage.map_coordinates(grid, [yy, xx], order=3, mode="nearest")
        total += amp
        amp *= 0.6
        wl /= 2.0
    out /= total
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo + 1e-12)


def make_scene(
    seed: int,
    frame_dims: tuple[int, int] = DEFAULT_DIMS,
    footprint: float = 0.4,
    oversample: float = 2.0,
    blobs_per_footprint: int = 18,
) -> ScenePlane:
    """Texture plus planted high-contrast rectangles, with their corners.

    The raster has ``oversample`` times the pixel density of a frame rendered
    by the base camera. Rectangles sit one per cell of a jittered grid with a
    guard band, so every planted corner is a clean L-junction.
    """
    rng = np.random.default_rng([seed, 0x5CE1E])
    fw, fh = frame_dims
    sw = int(round(fw / footprint * oversample))
    sh = int(round(fh / footprint * oversample))
    px_per_frame_px = oversample
    tex = 0.25 + 0.5 * _value_noise(rng, sw, sh, finest=4.0 * px_per_frame_px)
    canvas = tex.copy()
    corners = []
    scale_x, scale_y = (sw - 1) / 2.0, (sh - 1) / 2.0
    # guard band between a corner and anything outside its own cell
    guard = int(np.ceil(2 * px_per_frame_px))
    cell = np.sqrt((fw * oversample) * (fh * oversample) / blobs_per_footprint)
    nx, ny = max(1, int(sw // cell)), max(1, int(sh // cell))
    cw, ch = sw / nx, sh / ny
    max_w, max_h = cw - 2 * guard - 1, ch - 2 * guard - 1
    if max_w < 2 or max_h < 2:
        raise SceneError("blob density too high for the frame size")
    for gy in range(ny):
        for gx in range(nx):
            bw = min(rng.uniform(0.04, 0.09) * fw * px_per_frame_px, max_w)
            bh = min(rng.uniform(0.07, 0.16) * fh * px_per_frame_px, max_h)
            x0 = gx * cw + guard + rng.uniform(0.0, cw - 2 * guard - bw)
            y0 = gy * ch + guard + rng.uniform(0.0, ch - 2 * guard - bh)
            xi0, yi0 = int(np.ceil(x0)), int(np.ceil(y0))
            xi1, yi1 = int(np.floor(x0 + bw)), int(np.floor(y0 + bh))
            if xi1 - xi0 < 2 or yi1 - yi0 < 2:
                continue
            val = rng.choice([0.05, 0.95])
            # texture carries through at half strength so corner patches stay
            # distinctive; the step against the background is at least 0.325
            canvas[yi0:yi1, xi0:xi1] = val - 0.25 + 0.5 * tex[yi0:yi1, xi0:xi1]
            # the geometric corners lie between pixel centres
            for cx in (xi0 - 0.5, xi1 - 0.5):
                for cy in (yi0 - 0.5, yi1 - 0.5):
                    corners.append((cx / scale_x - 1.0, cy / scale_y - 1.0))
    canvas = ndimage.gaussian_filter(canvas, 0.9 * px_per_frame_px, mode="nearest")
    canvas = np.clip(canvas, 0.0, 1.0)
    return ScenePlane(Frame.from_array(canvas), np.array(corners).reshape(-1, 2), footprint)


# -- paths --------------------------------------------------------------------


def _aspect(dims: tuple[int, int]) -> float:
    return dims[1] / dims[0]


def _monotone_track(rng: np.random.Generator, length: int, per_frame: float) -> np.ndarray:
    """Monotone PCHIP curve from 0 with mean slope ``per_frame``."""
    if per_frame == 0.0 or length < 2:
        return np.zeros(length)
    knots = np.unique(np.append(np.arange(0, length - 1, KEY_SPACING), length - 1)).astype(float)
    if len(knots) < 2:
        knots = np.array([0.0, length - 1.0])
    steps = np.diff(knots) * per_frame * rng.uniform(0.5, 1.5, size=len(knots) - 1)
    values = np.concatenate([[0.0], np.cumsum(steps)])
    return PchipInterpolator(knots, values)(np.arange(length))


def path_tracks(script: MotionScript, seed: int) -> dict[str, np.ndarray]:
    """Per-frame translation, zoom and spin signals of the steady path."""
    rng = np.random.default_rng([seed, 0x57EAD])
    n = script.length
    s = script.speed
    w = {"forward": (0, 1, 0), "pan": (1, 0, 0), "spin": (0, 0, 1), "mixed": (0.6, 0.6, 0.6)}[script.kind]
    sign = rng.choice([-1.0, 1.0], size=3)
    tx = sign[0] * _monotone_track(rng, n, s * w[0] * _PAN_SPEED[0])
    ty = sign[1] * _monotone_track(rng, n, s * w[0] * _PAN_SPEED[1])
    zoom = -_monotone_track(rng, n, s * w[1] * _ZOOM_SPEED)
    spin = sign[2] * _monotone_track(rng, n, s * w[2] * _SPIN_SPEED)
    return {"tx": tx, "ty": ty, "zoom": zoom, "spin": spin}


def _steady_homography(tx: float, ty: float, zoom: float, spin: float, aspect: float) -> Homography:
    if tx == 0.0 and ty == 0.0 and zoom == 0.0 and spin == 0.0:
        return IDENTITY
    c, s = np.cos(spin), np.sin(spin)
    sc = np.exp(zoom)
    # rotation is isotropic in pixels, hence the aspect conjugation
    lin = sc * np.array([[c, -s * aspect], [s / aspect, c]])
    return Homography([[lin[0, 0], lin[0, 1], tx], [lin[1, 0], lin[1, 1], ty], [0.0, 0.0, 1.0]])


def gen_steady_path(script: MotionScript, seed: int, dims: tuple[int, int] = DEFAULT_DIMS) -> list[Homography]:
    tr = path_tracks(script, seed)
    a = _aspect(dims)
    return [
        _steady_homography(tr["tx"][t], tr["ty"][t], tr["zoom"][t], tr["spin"][t], a) for t in range(script.length)
    ]


def band_bins(length: int, band: tuple[float, float]) -> np.ndarray:
    """DFT bins of a ``length``-sample signal inside ``band`` (cycles/frame)."""
    lo = int(np.ceil(band[0] * length))
    hi = int(np.floor(band[1] * length))
    bins = np.arange(max(lo, 1), hi + 1)
    return bins[bins < length / 2.0]


def jitter_signals(script: MotionScript, seed: int, n_tones: int = 3) -> np.ndarray:
    """``(length, 8)`` jitter offsets, each of magnitude at most its amplitude.

    Every tone sits on an exact DFT bin inside the band, so the jitter has no
    spectral leakage outside it.
    """
    rng = np.random.default_rng([seed, 0x717])
    n = script.length
    amps = np.zeros(8)
    amps[list(_TRANS)] = script.jitter_amp
    amps[list(_LINEAR)] = script.linear_amp
    amps[list(_PROJ)] = script.proj_amp
    bins = band_bins(n, script.band)
    t = np.arange(n)
    out = np.zeros((n, 8))
    for k in range(8):
        if amps[k] == 0.0:
            continue
        if bins.size:
            f = rng.choice(bins, size=n_tones) / n
        else:
            f = rng.uniform(*script.band, size=n_tones)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=n_tones)
        c = rng.uniform(0.5, 1.0, size=n_tones)
        c /= c.sum()
        out[:, k] = amps[k] * (c[None, :] * np.sin(2.0 * np.pi * f[None, :] * t[:, None] + phase)).sum(axis=1)
    return out


def gen_unsteady_path(
    steady: Sequence[Homography],
    script: MotionScript,
    seed: int,
    bounds: PerturbationRange | None = None,
) -> tuple[list[Homography], list[Homography]]:
    """``(unsteady path, jitter transforms)`` with ``unsteady[t] = steady[t] @ jitter[t]``."""
    if len(steady) != script.length:
        raise ValueError(f"steady path has {len(steady)} frames, script expects {script.length}")
    bounds = PerturbationRange.default() if bounds is None else bounds
    ident = IDENTITY.params
    amps = np.zeros(8)
    amps[list(_TRANS)] = script.jitter_amp
    amps[list(_LINEAR)] = script.linear_amp
    amps[list(_PROJ)] = script.proj_amp
    if np.any(ident + amps > bounds.upper.params + 1e-12) or np.any(ident - amps < bounds.lower.params - 1e-12):
        raise ValueError("jitter amplitude exceeds the perturbation range")
    if not np.any(amps):
        return list(steady), [IDENTITY] * len(steady)
    jit = jitter_signals(script, seed)
    jitters = [Homography.from_params(ident + jit[t]) for t in range(script.length)]
    unsteady = [compose(g, j) for g, j in zip(steady, jitters)]
    return unsteady, jitters


# -- rendering ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VideoPair:
    steady: tuple[Frame, ...]
    unsteady: tuple[Frame, ...]
    steady_cams: tuple[Homography, ...]
    unsteady_cams: tuple[Homography, ...]
    correspondences: tuple[CorrespondenceSet, ...]
    width: int
    height: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.steady)
        if not (len(self.unsteady) == len(self.steady_cams) == len(self.unsteady_cams) == len(self.correspondences) == n):
            raise ValueError("video pair components must have equal lengths")

    def __len__(self) -> int:
        return len(self.steady)

    def gt_transform(self, t: int) -> Homography:
        """Pull map taking unsteady frame ``t`` onto steady frame ``t``."""
        return compose(invert(self.unsteady_cams[t]), self.steady_cams[t])

    def flow(self, t: int) -> FlowField:
        """Flow pulling steady frame ``t-1`` onto steady frame ``t``."""
        if t < 1:
            raise IndexError("flow is defined for t >= 1")
        return synthetic_flow(self.steady_cams[t - 1], self.steady_cams[t], self.width, self.height)

    def interframe(self, which: str = "unsteady") -> list[Homography]:
        """``H_t`` mapping frame ``t+1`` coordinates into frame ``t``."""
        cams = self.unsteady_cams if which == "unsteady" else self.steady_cams
        return [compose(invert(cams[t]), cams[t + 1]) for t in range(len(cams) - 1)]


def render_frame(scene: ScenePlane, cam: Homography, dims: tuple[int, int]) -> Frame:
    return warp_frame(scene.texture, cam, out_shape=dims)


def _check_footprint(cam: Homography, t: int):
    c = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    try:
        pts = apply_points(cam, c)
    except GeometryError as exc:
        raise SceneError(f"frame {t}: {exc}") from exc
    if np.any(np.abs(pts) > 1.0):
        raise SceneError(f"frame {t}: camera footprint leaves the scene extent")


def planted_correspondences(
    scene: ScenePlane, steady_cam: Homography, unsteady_cam: Homography, margin: float = 0.02
) -> CorrespondenceSet:
    lim = 1.0 - margin
    ps = apply_points(invert(steady_cam), scene.corners)
    pu = apply_points(invert(unsteady_cam), scene.corners)
    keep = np.all(np.abs(ps) <= lim, axis=1) & np.all(np.abs(pu) <= lim, axis=1)
    return CorrespondenceSet.from_points(pu[keep], ps[keep])


def render_pair(
    scene: ScenePlane,
    steady_path: Sequence[Homography],
    unsteady_path: Sequence[Homography],
    dims: tuple[int, int] = DEFAULT_DIMS,
    meta: dict | None = None,
) -> VideoPair:
    if len(steady_path) != len(unsteady_path):
        raise ValueError("paths must have equal length")
    base = scene.base
    s_cams = tuple(compose(base, g) for g in steady_path)
    u_cams = tuple(compose(base, u) for u in unsteady_path)
    for t, (a, b) in enumerate(zip(s_cams, u_cams)):
        _check_footprint(a, t)
        _check_footprint(b, t)
    steady = tuple(render_frame(scene, c, dims) for c in s_cams)
    unsteady = tuple(
        steady[t] if u_cams[t] == s_cams[t] else render_frame(scene, c, dims) for t, c in enumerate(u_cams)
    )
    cs = tuple(planted_correspondences(scene, a, b) for a, b in zip(s_cams, u_cams))
    return VideoPair(steady, unsteady, s_cams, u_cams, cs, dims[0], dims[1], dict(meta or {}))


def generate_clip(script: MotionScript, seed: int, dims: tuple[int, int] = DEFAULT_DIMS) -> VideoPair:
    scene = make_scene(seed, dims)
    steady = gen_steady_path(script, seed, dims)
    unsteady, _ = gen_unsteady_path(steady, script, seed)
    return render_pair(scene, steady, unsteady, dims, meta={"seed": seed, "script": script.to_dict()})


# -- augmentation -------------------------------------------------------------

_FLIP = np.array([-1.0, 1.0, 1.0])


def _flip_h(h: Homography) -> Homography:
    return Homography(h.matrix * _FLIP[:, None] * _FLIP[None, :])


def _flip_frame(f: Frame) -> Frame:
    return Frame(f.data[:, ::-1].copy(), f.mask[:, ::-1].copy())


def flip_pair(pair: VideoPair) -> VideoPair:
    def flip_cs(cs: CorrespondenceSet) -> CorrespondenceSet:
        return CorrespondenceSet(cs.src * _FLIP[:2], cs.dst * _FLIP[:2], cs.scores.copy(), cs.ids.copy())

    meta = dict(pair.meta)
    meta["flipped"] = not meta.get("flipped", False)
    return VideoPair(
        tuple(_flip_frame(f) for f in pair.steady),
        tuple(_flip_frame(f) for f in pair.unsteady),
        tuple(_flip_h(h) for h in pair.steady_cams),
        tuple(_flip_h(h) for h in pair.unsteady_cams),
        tuple(flip_cs(c) for c in pair.correspondences),
        pair.width,
        pair.height,
        meta,
    )


def reverse_pair(pair: VideoPair) -> VideoPair:
    meta = dict(pair.meta)
    meta["reversed"] = not meta.get("reversed", False)
    return VideoPair(
        pair.steady[::-1],
        pair.unsteady[::-1],
        pair.steady_cams[::-1],
        pair.unsteady_cams[::-1],
        pair.correspondences[::-1],
        pair.width,
        pair.height,
        meta,
    )


def augment(pair: VideoPair) -> list[VideoPair]:
    """Original, horizontal flip, time reversal and both."""
    f = flip_pair(pair)
    return [pair, f, reverse_pair(pair), reverse_pair(f)]


# -- training samples ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Supervision:
    gt_t: Frame
    gt_prev: Frame
    frame_t: Frame
    frame_prev: Frame
    cs_t: CorrespondenceSet
    cs_prev: CorrespondenceSet
    flow: FlowField
    transform_t: Homography
    transform_prev: Homography


@dataclass(frozen=True, eq=False)
class TrainingSample:
    input_t: np.ndarray  # (6, H, W)
    input_prev: np.ndarray
    supervision: Supervision
    history_t: tuple[int, ...]
    history_prev: tuple[int, ...]


def history_indices(t: int, offsets: Sequence[int] = TRAIN_OFFSETS) -> tuple[int, ...]:
    """Frame indices of the history for time ``t``, oldest first; clamped at 0."""
    return tuple(max(t - o, 0) for o in sorted(offsets, reverse=True))


BORDER_MODES = ("warp", "mask")


def add_border(gt: Frame, p: Homography, mode: str = "warp") -> Frame:
    """Black borders from perturbation ``p``.

    ``warp`` resamples the frame through ``p``; ``mask`` keeps the content in
    place and blanks the pixels that ``p`` would pull from outside the frame,
    which is how a correctly stabilized output looks.
    """
    if p.is_identity():
        return gt
    w = warp_frame(gt, p)
    if mode == "warp":
        return w
    if mode == "mask":
        return Frame(np.where(w.mask, gt.data, 0.0), w.mask & gt.mask)
    raise ValueError(f"unknown border mode {mode!r}")


def _stack(pair: VideoPair, t: int, offsets, rng_range, rng, mode: str) -> tuple[np.ndarray, tuple[int, ...]]:
    idx = history_indices(t, offsets)
    chans = []
    for i in idx:
        chans.append(add_border(pair.steady[i], sample_perturbation(rng_range, rng), mode).data)
    chans.append(pair.unsteady[t].data)
    return np.stack(chans), idx


def make_training_sample(
    pair: VideoPair,
    t: int,
    perturb_range: PerturbationRange | None = None,
    rng: np.random.Generator | None = None,
    offsets: Sequence[int] = TRAIN_OFFSETS,
    flow: FlowField | None = None,
    border_mode: str = "warp",
) -> TrainingSample:
    """Inputs for both Siamese branches (times ``t`` and ``t-1``) plus supervision.

    History channels are ground-truth steady frames, each warped by its own
    random perturbation to introduce black borders.
    """
    if t < max(offsets) or t >= len(pair):
        raise IndexError(f"t={t} outside [{max(offsets)}, {len(pair) - 1}]")
    rng = np.random.default_rng(0) if rng is None else rng
    rr = PerturbationRange.default() if perturb_range is None else perturb_range
    x_t, h_t = _stack(pair, t, offsets, rr, rng, border_mode)
    x_p, h_p = _stack(pair, t - 1, offsets, rr, rng, border_mode)
    sup = Supervision(
        gt_t=pair.steady[t],
        gt_prev=pair.steady[t - 1],
        frame_t=pair.unsteady[t],
        frame_prev=pair.unsteady[t - 1],
        cs_t=pair.correspondences[t],
        cs_prev=pair.correspondences[t - 1],
        flow=pair.flow(t) if flow is None else flow,
        transform_t=pair.gt_transform(t),
        transform_prev=pair.gt_transform(t - 1),
    )
    return TrainingSample(x_t, x_p, sup, h_t, h_p)


def corner_visible_count(scene: ScenePlane, cam: Homography) -> int:
    pts = apply_points(invert(cam), scene.corners)
    return int(np.sum(np.all(np.abs(pts) <= 1.0, axis=1)))


# -- disk format ----------------------------------------------------------------

DATASET_VERSION = 1


def clip_seed(master: int, index: int) -> int:
    """Independent per-clip seed split from the master seed by counter."""
    return int(np.random.SeedSequence([master, index]).generate_state(1, np.uint32)[0])


def dataset_scripts(n_clips: int, frames: int, jitter_amp: float, master: int) -> list[tuple[int, MotionScript]]:
    out = []
    for i in range(n_clips):
        s = clip_seed(master, i)
        speed = float(np.random.default_rng([s, 0x59]).uniform(0.5, 1.5))
        out.append((s, MotionScript(MOTION_TYPES[i % len(MOTION_TYPES)], frames, speed, jitter_amp)))
    return out


def _json_dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def save_clip(pair: VideoPair, directory) -> None:
    d = Path(directory)
    write_sequence(d / "steady", pair.steady)
    write_sequence(d / "unsteady", pair.unsteady)
    gt = {
        "width": pair.width,
        "height": pair.height,
        "frames": len(pair),
        "steady_cams": [h.to_list() for h in pair.steady_cams],
        "unsteady_cams": [h.to_list() for h in pair.unsteady_cams],
        "gt_transforms": [pair.gt_transform(t).to_list() for t in range(len(pair))],
        "correspondences": [c.to_json() for c in pair.correspondences],
        "meta": pair.meta,
    }
    _json_dump(d / "ground_truth.json", gt)
    n = len(pair)
    flow = np.zeros((max(n - 1, 0), 2, pair.height, pair.width))
    fmask = np.zeros((max(n - 1, 0), pair.height, pair.width), dtype=bool)
    for t in range(1, n):
        f = pair.flow(t)
        flow[t - 1, 0], flow[t - 1, 1], fmask[t - 1] = f.dx, f.dy, f.mask
    (d / "flow").mkdir(parents=True, exist_ok=True)
    np.save(d / "flow" / "flow.npy", flow.astype("<f8"))
    np.save(d / "flow" / "mask.npy", fmask)


def load_clip(directory) -> VideoPair:
    d = Path(directory)
    gt = json.loads((d / "ground_truth.json").read_text())
    steady = tuple(read_sequence(d / "steady"))
    unsteady = tuple(read_sequence(d / "unsteady"))
    if len(steady) != gt["frames"] or len(unsteady) != gt["frames"]:
        raise SceneError(f"{d}: frame count does not match ground_truth.json")
    return VideoPair(
        steady,
        unsteady,
        tuple(Homography.from_params(p) for p in gt["steady_cams"]),
        tuple(Homography.from_params(p) for p in gt["unsteady_cams"]),
        tuple(CorrespondenceSet.from_json(c) for c in gt["correspondences"]),
        int(gt["width"]),
        int(gt["height"]),
        gt.get("meta", {}),
    )


def generate_dataset(
    out_dir,
    n_clips: int = 16,
    frames: int = DEFAULT_FRAMES,
    dims: tuple[int, int] = DEFAULT_DIMS,
    jitter_amp: float = 0.06,
    seed: int = 0,
) -> dict:
    """Write ``n_clips`` clips plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clips = []
    for i, (s, script) in enumerate(dataset_scripts(n_clips, frames, jitter_amp, seed)):
        name = f"clip_{i:03d}"
        save_clip(generate_clip(script, s, dims), out / name)
        clips.append({"name": name, "seed": s, "script": script.to_dict()})
    manifest = {
        "version": DATASET_VERSION,
        "seed": seed,
        "dims": list(dims),
        "frames": frames,
        "jitter_amp": jitter_amp,
        "clips": clips,
    }
    _json_dump(out / "manifest.json", manifest)
    return manifest


def load_dataset(directory) -> list[VideoPair]:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"{d}: missing manifest.json")
    manifest = json.loads(mpath.read_text())
    return [load_clip(d / c["name"]) for c in manifest["clips"]]

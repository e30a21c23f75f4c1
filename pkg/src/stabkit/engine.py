"""Online self-driven stabilization: one frame in, one frame out.

Each prediction is conditioned on earlier *stabilized* outputs, read from a
ring buffer at fixed offsets relative to the frame being stabilized. The
buffer starts as ``r`` copies of the first input frame.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import network
from .errors import DimensionError, EmptyRegionError, StabkitError
from .geometry import Homography
from .image import CropRect, Frame, valid_crop, warp_frame
from .network import NetworkParams

OFFSET_PRESETS = {
    # history for frame t is S_t = <I_{t-30}, ..., I_{t-6}>
    "paper-train": (-30, -24, -18, -12, -6),
    # the same indices read literally against the frame being stabilized
    "paper-test": (-29, -23, -17, -11, -5),
}
CROP_MODES = ("running", "final", "none")


@dataclass(frozen=True)
class EngineConfig:
    offsets: tuple[int, ...] = OFFSET_PRESETS["paper-test"]
    r: int = 30
    crop: str = "final"

    def __post_init__(self):
        o = tuple(self.offsets)
        if not o or any(x >= 0 for x in o) or any(b <= a for a, b in zip(o, o[1:])):
            raise ValueError(f"offsets {o} must be negative and strictly increasing")
        if self.r < -o[0]:
            raise ValueError(f"r={self.r} must be >= max |offset| = {-o[0]}")
        if self.crop not in CROP_MODES:
            raise ValueError(f"crop mode must be one of {CROP_MODES}")

    @classmethod
    def preset(cls, name: str, **kw) -> "EngineConfig":
        if name not in OFFSET_PRESETS:
            raise ValueError(f"unknown offset preset {name!r}; choose from {sorted(OFFSET_PRESETS)}")
        return cls(offsets=OFFSET_PRESETS[name], **kw)

    @property
    def capacity(self) -> int:
        return -self.offsets[0]

    def to_dict(self) -> dict:
        return {"offsets": list(self.offsets), "r": self.r, "crop": self.crop}


class HistoryBuffer:
    """The last ``capacity`` stabilized frames; index ``-1`` is the newest."""

    def __init__(self, capacity: int, frames: Iterable[Frame] = ()):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._q: deque[Frame] = deque(frames, maxlen=capacity)

    @property
    def capacity(self) -> int:
        return self._q.maxlen  # type: ignore[return-value]

    def __len__(self) -> int:
        return len(self._q)

    def push(self, f: Frame) -> None:
        self._q.append(f)

    def at(self, offset: int) -> Frame:
        """Frame stabilized ``-offset`` steps before the one being processed."""
        if not (-len(self._q) <= offset < 0):
            raise IndexError(f"offset {offset} outside buffer of {len(self._q)} frames")
        return self._q[offset]

    def copy(self) -> "HistoryBuffer":
        return HistoryBuffer(self.capacity, self._q)  # frames are immutable


@dataclass
class EngineState:
    params: NetworkParams
    config: EngineConfig
    buffer: HistoryBuffer
    t: int = 0
    running_mask: np.ndarray | None = None
    timings: list[float] = field(default_factory=list)

    def snapshot(self) -> "EngineState":
        rm = None if self.running_mask is None else self.running_mask.copy()
        return EngineState(self.params, self.config, self.buffer.copy(), self.t, rm, list(self.timings))


@dataclass(frozen=True, eq=False)
class StepResult:
    frame: Frame
    transform: Homography
    t: int
    seconds: float
    crop: CropRect | None = None


def _check_frame(params: NetworkParams, f: Frame):
    cfg = params.config
    if (f.width, f.height) != (cfg.width, cfg.height):
        raise DimensionError(f"frame is {f.width}x{f.height}, checkpoint expects {cfg.width}x{cfg.height}")


def init(first: Frame, config: EngineConfig, params: NetworkParams) -> EngineState:
    _check_frame(params, first)
    buf = HistoryBuffer(config.capacity, [first] * config.r)
    return EngineState(params, config, buf)


def stack_inputs(state: EngineState, frame: Frame) -> np.ndarray:
    chans = [state.buffer.at(o).data for o in state.config.offsets]
    chans.append(frame.data)
    return np.stack(chans)


def step(state: EngineState, frame: Frame) -> StepResult:
    """Stabilize the next frame and push the result into the history."""
    _check_frame(state.params, frame)
    t0 = time.perf_counter()
    delta, _ = network.forward_batch(state.params, stack_inputs(state, frame)[None], keep_cache=False)
    h = network.delta_to_homography(delta[0])
    out = frame if h.is_identity() else warp_frame(frame, h)
    state.buffer.push(out)
    crop = None
    if state.config.crop == "running":
        state.running_mask = out.mask.copy() if state.running_mask is None else state.running_mask & out.mask
        try:
            crop = valid_crop(state.running_mask)
        except EmptyRegionError as exc:
            raise EmptyRegionError(f"frame {state.t}: {exc}") from exc
    dt = time.perf_counter() - t0
    state.timings.append(dt)
    res = StepResult(out, h, state.t, dt, crop)
    state.t += 1
    return res


@dataclass(frozen=True, eq=False)
class ClipResult:
    frames: tuple[Frame, ...]
    transforms: tuple[Homography, ...]
    crop: CropRect | None
    timings: tuple[float, ...]

    def cropped(self) -> list[Frame]:
        if self.crop is None:
            return list(self.frames)
        return [self.crop.apply(f) for f in self.frames]


def stabilize_clip(frames: Sequence[Frame], params: NetworkParams, config: EngineConfig = EngineConfig()) -> ClipResult:
    frames = list(frames)
    if not frames:
        raise StabkitError("cannot stabilize an empty clip")
    state = init(frames[0], config, params)
    outs, hs = [], []
    for i, f in enumerate(frames):
        try:
            r = step(state, f)
        except StabkitError as exc:
            raise type(exc)(f"frame {i}: {exc}") from exc
        outs.append(r.frame)
        hs.append(r.transform)
    crop = None
    if config.crop == "final":
        crop = valid_crop([f.mask for f in outs])
    elif config.crop == "running":
        crop = valid_crop(state.running_mask)
    return ClipResult(tuple(outs), tuple(hs), crop, tuple(state.timings))


def stream(frames: Iterable[Frame], params: NetworkParams, config: EngineConfig = EngineConfig()) -> Iterator[StepResult]:
    """Lazily stabilize ``frames``; result ``k`` is yielded before input ``k+1`` is read."""
    state = None
    for f in frames:
        if state is None:
            state = init(f, config, params)
        yield step(state, f)

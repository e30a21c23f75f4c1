"""Conv encoder + homography regressor with hand-written reverse mode.

Layout inside the network is channel-major ``(C, N, H, W)`` so every conv
is a single ``(out, C*k*k) @ (C*k*k, N*Ho*Wo)`` product. The regressor
outputs 8 deltas added to the identity; it is zero-initialised so a fresh
network predicts the identity exactly.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptCheckpointError,
    DimensionError,
    ShapeMismatchError,
    StabkitError,
    VersionMismatchError,
)
from .geometry import Homography

IN_CHANNELS = 6
OUT_DIM = 8
_IDENTITY8 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int = 3
    stride: int = 2
    activation: str = "relu"


@dataclass(frozen=True)
class NetworkConfig:
    width: int = 64
    height: int = 36
    layers: tuple[ConvSpec, ...] = tuple(ConvSpec(c) for c in (8, 16, 32, 64, 128))
    in_channels: int = IN_CHANNELS

    def __post_init__(self):
        if self.in_channels != IN_CHANNELS:
            raise ValueError(f"input must have {IN_CHANNELS} channels (5 history + current)")
        if self.width < 1 or self.height < 1 or not self.layers:
            raise ValueError("invalid network dimensions")
        for spec in self.layers:
            if spec.kernel < 1 or spec.kernel % 2 == 0 or spec.stride < 1 or spec.out_channels < 1:
                raise ValueError(f"invalid conv layer {spec}")
            if spec.activation not in ("relu", "linear"):
                raise ValueError(f"unknown activation {spec.activation!r}")

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].out_channels

    def with_dims(self, width: int, height: int) -> "NetworkConfig":
        return NetworkConfig(width, height, self.layers)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "in_channels": self.in_channels,
            "layers": [
                {"out_channels": s.out_channels, "kernel": s.kernel, "stride": s.stride, "activation": s.activation}
                for s in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            layers=tuple(ConvSpec(**spec) for spec in d["layers"]),
            in_channels=int(d.get("in_channels", IN_CHANNELS)),
        )


def param_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c = config.in_channels
    for i, spec in enumerate(config.layers):
        shapes[f"conv{i}.w"] = (spec.out_channels, c, spec.kernel, spec.kernel)
        shapes[f"conv{i}.b"] = (spec.out_channels,)
        c = spec.out_channels
    shapes["fc.w"] = (OUT_DIM, c)
    shapes["fc.b"] = (OUT_DIM,)
    return shapes


@dataclass(eq=False)
class NetworkParams:
    config: NetworkConfig
    arrays: dict[str, np.ndarray]
    iteration: int = 0
    # bumped on every in-place update; lets backward reject stale caches
    version: int = field(default=0, compare=False)

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, {k: v.copy() for k, v in self.arrays.items()}, self.iteration, self.version)

    def bitwise_equal(self, other: "NetworkParams") -> bool:
        return (
            self.config == other.config
            and self.iteration == other.iteration
            and list(self.arrays) == list(other.arrays)
            and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays)
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    def num_params(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))


def build(config: NetworkConfig, seed: int = 0) -> NetworkParams:
    """He-initialised conv stack, zero regressor (identity output)."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("conv") and name.endswith(".w"):
            fan_in = shape[1] * shape[2] * shape[3]
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return NetworkParams(config, arrays)


@dataclass
class ForwardCache:
    layers: list
    pooled: np.ndarray
    in_shape: tuple[int, ...]
    params_id: int
    params_version: int


def _out_size(n: int, k: int, s: int) -> int:
    p = k // 2
    return (n + 2 * p - k) // s + 1


def _tap_range(n: int, no: int, i: int, p: int, s: int) -> tuple[int, int]:
    # outputs o with 0 <= s*o + i - p < n
    lo = max(0, -(-(p - i) // s))
    hi = min(no, (n - 1 + p - i) // s + 1)
    return lo, max(lo, hi)


def _im2col(x: np.ndarray, k: int, s: int):
    c, n, h, w = x.shape
    p = k // 2
    ho, wo = _out_size(h, k, s), _out_size(w, k, s)
    cols = np.empty((c, k, k, n, ho, wo))
    for i in range(k):
        r0, r1 = _tap_range(h, ho, i, p, s)
        for j in range(k):
            c0, c1 = _tap_range(w, wo, j, p, s)
            dst = cols[:, i, j]
            # zero padding touches only the border strips
            dst[:, :, :r0] = 0.0
            dst[:, :, r1:] = 0.0
            dst[:, :, r0:r1, :c0] = 0.0
            dst[:, :, r0:r1, c1:] = 0.0
            y0, x0 = s * r0 + i - p, s * c0 + j - p
            dst[:, :, r0:r1, c0:c1] = x[:, :, y0 : y0 + s * (r1 - r0) : s, x0 : x0 + s * (c1 - c0) : s]
    return cols.reshape(c * k * k, n * ho * wo), ho, wo


def _col2im(dcols: np.ndarray, shape, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    c, n, h, w = shape
    p = k // 2
    dxp = np.zeros((c, n, h + 2 * p, w + 2 * p))
    dc = dcols.reshape(c, k, k, n, ho, wo)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dc[:, i, j]
    return dxp[:, :, p : p + h, p : p + w] if p else dxp


def _check_input(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    cfg = params.config
    if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.height, cfg.width):
        raise DimensionError(
            f"input shape {x.shape[1:] if x.ndim == 4 else x.shape} does not match "
            f"({cfg.in_channels}, {cfg.height}, {cfg.width})"
        )
    return x


def forward_batch(params: NetworkParams, x: np.ndarray, keep_cache: bool = True):
    """Deltas ``(N, 8)`` for an ``(N, 6, H, W)`` batch (frames in ``[0, 1]``)."""
    x = _check_input(params, x)
    a = np.ascontiguousarray((x - 0.5).transpose(1, 0, 2, 3))
    layers = []
    for i, spec in enumerate(params.config.layers):
        wgt = params.arrays[f"conv{i}.w"]
        b = params.arrays[f"conv{i}.b"]
        cols, ho, wo = _im2col(a, spec.kernel, spec.stride)
        z = wgt.reshape(wgt.shape[0], -1) @ cols
        z += b[:, None]
        if spec.activation == "relu":
            active = z > 0.0
            z *= active
        else:
            active = None
        if keep_cache:
            layers.append((cols, a.shape, active, ho, wo))
        a = z.reshape(wgt.shape[0], x.shape[0], ho, wo)
    pooled = a.mean(axis=(2, 3))  # (F, N)
    delta = params.arrays["fc.w"] @ pooled + params.arrays["fc.b"][:, None]
    cache = ForwardCache(layers, pooled, x.shape, id(params), params.version) if keep_cache else None
    return delta.T.copy(), cache


def backward_batch(params: NetworkParams, cache: ForwardCache, d_delta: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse-mode gradients for upstream ``dL/d delta`` of shape ``(N, 8)``."""
    if cache is None or cache.params_id != id(params) or cache.params_version != params.version:
        raise StabkitError("stale forward cache: parameters changed since the forward pass")
    g = np.asarray(d_delta, dtype=np.float64).reshape(cache.in_shape[0], OUT_DIM).T  # (8, N)
    grads: dict[str, np.ndarray] = {}
    grads["fc.w"] = g @ cache.pooled.T
    grads["fc.b"] = g.sum(axis=1)
    d_pool = params.arrays["fc.w"].T @ g  # (F, N)
    n_layers = len(params.config.layers)
    last = cache.layers[-1]
    ho, wo = last[3], last[4]
    da = np.broadcast_to(d_pool[:, :, None, None] / (ho * wo), d_pool.shape + (ho, wo))
    for i in range(n_layers - 1, -1, -1):
        spec = params.config.layers[i]
        cols, in_shape, active, ho, wo = cache.layers[i]
        wgt = params.arrays[f"conv{i}.w"]
        dz = da.reshape(wgt.shape[0], -1)
        if active is not None:
            dz = dz * active
        grads[f"conv{i}.w"] = (dz @ cols.T).reshape(wgt.shape)
        grads[f"conv{i}.b"] = dz.sum(axis=1)
        if i > 0:
            dcols = wgt.reshape(wgt.shape[0], -1).T @ dz
            da = _col2im(dcols, in_shape, spec.kernel, spec.stride, ho, wo)
    return {k: grads[k] for k in params.arrays}


def delta_to_homography(delta: np.ndarray) -> Homography:
    return Homography.from_params(_IDENTITY8 + np.asarray(delta, dtype=np.float64))


def forward(params: NetworkParams, stacked: np.ndarray) -> tuple[Homography, ForwardCache]:
    """Predicted transform for a single ``(6, H, W)`` stack, oldest history first."""
    delta, cache = forward_batch(params, np.asarray(stacked)[None] if np.ndim(stacked) == 3 else stacked)
    if delta.shape[0] != 1:
        raise DimensionError("forward expects a single input stack; use forward_batch")
    return delta_to_homography(delta[0]), cache


def backward(params: NetworkParams, cache: ForwardCache, d_h: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for upstream ``dL/dF`` over ``h1..h8`` (equal to ``dL/d delta``)."""
    return backward_batch(params, cache, np.asarray(d_h, dtype=np.float64).reshape(-1, OUT_DIM))


def forward_pair(params: NetworkParams, input_t: np.ndarray, input_prev: np.ndarray):
    """Both Siamese branches through the same parameters."""
    f_t, c_t = forward(params, input_t)
    f_p, c_p = forward(params, input_prev)
    return f_t, f_p, (c_t, c_p)


def backward_pair(params: NetworkParams, caches, d_t: np.ndarray, d_prev: np.ndarray) -> dict[str, np.ndarray]:
    g_t = backward(params, caches[0], d_t)
    g_p = backward(params, caches[1], d_prev)
    return {k: g_t[k] + g_p[k] for k in g_t}


# -- checkpoints -------------------------------------------------------------

MAGIC = b"STABKIT\x00"
FORMAT_VERSION = 1


def save_checkpoint(params: NetworkParams, path, adam_state=None, extra: dict | None = None) -> None:
    """Versioned container: magic, u32 version, u64 header length, JSON header, f8 blobs."""
    blobs = [(name, np.ascontiguousarray(arr, dtype="<f8")) for name, arr in params.arrays.items()]
    adam_header = None
    if adam_state is not None:
        adam_header = {"step": int(adam_state.step)}
        blobs += [(f"adam.m.{k}", np.ascontiguousarray(v, dtype="<f8")) for k, v in adam_state.m.items()]
        blobs += [(f"adam.v.{k}", np.ascontiguousarray(v, dtype="<f8")) for k, v in adam_state.v.items()]
    header = {
        "format_version": FORMAT_VERSION,
        "config": params.config.to_dict(),
        "iteration": int(params.iteration),
        "adam": adam_header,
        "extra": extra or {},
        "blobs": [
            {"name": n, "shape": list(a.shape), "nbytes": a.nbytes, "crc32": zlib.crc32(a.tobytes())}
            for n, a in blobs
        ],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for _, a in blobs:
            fh.write(a.tobytes())
    tmp.replace(path)


def _read_container(path):
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12 or raw[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a stabkit checkpoint (bad magic or truncated)")
    version, hlen = struct.unpack_from("<IQ", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint format {version}, expected {FORMAT_VERSION}")
    off = len(MAGIC) + 12
    if off + hlen > len(raw):
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from exc
    off += hlen
    blobs = {}
    for entry in header["blobs"]:
        nb = entry["nbytes"]
        chunk = raw[off : off + nb]
        if len(chunk) != nb:
            raise CorruptCheckpointError(f"{path}: truncated blob {entry['name']!r}")
        if zlib.crc32(chunk) != entry["crc32"]:
            raise CorruptCheckpointError(f"{path}: checksum mismatch in blob {entry['name']!r}")
        blobs[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
        off += nb
    if off != len(raw):
        raise CorruptCheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return header, blobs


def load_training_state(path, config: NetworkConfig | None = None):
    """``(params, adam_state or None, header)`` from a checkpoint file."""
    from .trainer import AdamState  # circular at import time

    header, blobs = _read_container(path)
    stored = NetworkConfig.from_dict(header["config"])
    expect = stored if config is None else config
    shapes = param_shapes(expect)
    arrays = {}
    for name, shape in shapes.items():
        if name not in blobs:
            raise ShapeMismatchError(f"layer {name!r} missing from checkpoint")
        if tuple(blobs[name].shape) != shape:
            raise ShapeMismatchError(f"layer {name!r}: checkpoint shape {tuple(blobs[name].shape)} != config shape {shape}")
        arrays[name] = blobs[name]
    if config is not None and (config.width, config.height) != (stored.width, stored.height):
        raise ShapeMismatchError(
            f"input dims: checkpoint {stored.width}x{stored.height} != config {config.width}x{config.height}"
        )
    params = NetworkParams(stored, arrays, int(header["iteration"]))
    adam = None
    if header.get("adam"):
        adam = AdamState(
            m={k: blobs[f"adam.m.{k}"] for k in arrays},
            v={k: blobs[f"adam.v.{k}"] for k in arrays},
            step=int(header["adam"]["step"]),
        )
    return params, adam, header


def load_checkpoint(path, config: NetworkConfig | None = None) -> NetworkParams:
    return load_training_state(path, config)[0]

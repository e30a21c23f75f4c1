"""Siamese training loop with ADAM and a step learning-rate schedule."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import network
from .datagen import TRAIN_OFFSETS, VideoPair, augment, make_training_sample
from .errors import InsufficientDataError, NumericError
from .geometry import PerturbationRange
from .losses import Branch, LossWeights, total_loss
from .network import NetworkConfig, NetworkParams

log = logging.getLogger(__name__)

LOG_FIELDS = ("iteration", "lr", "total", "pixel", "feature", "temporal", "grad_norm", "clipped")


@dataclass(frozen=True)
class TrainerConfig:
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 0.001
    lr_factor: float = 0.1
    decay_every: int = 3000
    max_iter: int = 9000
    seed: int = 0
    clip_norm: float | None = 10.0
    checkpoint_every: int = 1000
    alpha: float = 0.33
    lam: float = 30.0
    masked: bool = False
    perturb_scale: float = 1.0
    augment: bool = True
    border_mode: str = "warp"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1 or self.decay_every < 1 or self.max_iter < 0:
            raise ValueError("batch size and decay interval must be >= 1, max_iter >= 0")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.lam)

    @property
    def perturb_range(self) -> PerturbationRange:
        return PerturbationRange.default().scaled(self.perturb_scale)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.arrays.items()},
                   {k: np.zeros_like(a) for k, a in params.arrays.items()}, 0)


def scheduled_lr(iteration: int, config: TrainerConfig) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return config.lr * config.lr_factor ** (iteration // config.decay_every)


def _check_finite(grads: dict[str, np.ndarray]):
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in layer {k!r}")


def adam_step(
    params: NetworkParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainerConfig,
    lr: float | None = None,
) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected ADAM update, in place on ``params`` and ``state``."""
    if set(grads) != set(params.arrays):
        raise ValueError("gradient names do not match parameters")
    _check_finite(grads)
    lr = scheduled_lr(params.iteration, config) if lr is None else lr
    step = state.step + 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for k, p in params.arrays.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k!r}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    state.step = step
    params.iteration += 1
    params.version += 1
    return params, state


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float | None):
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm is None or norm <= max_norm:
        return grads, norm, False
    s = max_norm / norm
    return {k: g * s for k, g in grads.items()}, norm, True


# -- data --------------------------------------------------------------------


def sample_index(dataset: Sequence[VideoPair], offsets=TRAIN_OFFSETS) -> list[tuple[int, int]]:
    lo = max(offsets)
    idx = [(c, t) for c, pair in enumerate(dataset) for t in range(lo, len(pair))]
    if not idx:
        raise InsufficientDataError(f"dataset has no clip with more than {lo} frames")
    return idx


class BatchSampler:
    """Epoch-wise shuffles of all ``(clip, t)`` pairs, drawn without replacement.

    The order depends only on the seed and the position in the stream, so a
    resumed run sees the same batches as an uninterrupted one.
    """

    def __init__(self, index: list[tuple[int, int]], batch_size: int, seed: int):
        self.index = index
        self.batch_size = batch_size
        self.seed = seed
        self._perms: dict[int, np.ndarray] = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms = {epoch: np.random.default_rng([self.seed, 0xE9, epoch]).permutation(len(self.index))}
        return self._perms[epoch]

    def batch(self, iteration: int) -> list[tuple[int, int]]:
        n = len(self.index)
        out = []
        for pos in range(iteration * self.batch_size, (iteration + 1) * self.batch_size):
            out.append(self.index[self._perm(pos // n)[pos % n]])
        return out


class _FlowCache:
    def __init__(self, dataset):
        self.dataset = dataset
        self._c = {}

    def __call__(self, c: int, t: int):
        key = (c, t)
        if key not in self._c:
            self._c[key] = self.dataset[c].flow(t)
        return self._c[key]


def build_batch(dataset, items, iteration: int, config: TrainerConfig, flows=None):
    xs_t, xs_p, sups = [], [], []
    rr = config.perturb_range
    for b, (c, t) in enumerate(items):
        rng = np.random.default_rng([config.seed, 0xBA7C, iteration, b])
        s = make_training_sample(dataset[c], t, rr, rng, flow=None if flows is None else flows(c, t), border_mode=config.border_mode)
        xs_t.append(s.input_t)
        xs_p.append(s.input_prev)
        sups.append(s.supervision)
    return np.stack(xs_t + xs_p), sups


def batch_loss(params: NetworkParams, x: np.ndarray, sups, config: TrainerConfig):
    """Mean loss over the batch, its gradients, and the mean component values."""
    b = len(sups)
    deltas, cache = network.forward_batch(params, x)
    d = np.zeros_like(deltas)
    acc = np.zeros(4)
    w = config.weights
    for i, s in enumerate(sups):
        rep = total_loss(
            Branch(network.delta_to_homography(deltas[i]), s.frame_t, s.gt_t, s.cs_t),
            Branch(network.delta_to_homography(deltas[b + i]), s.frame_prev, s.gt_prev, s.cs_prev),
            s.flow,
            w,
            config.masked,
        )
        d[i] = rep.grad_t / b
        d[b + i] = rep.grad_prev / b
        acc += (rep.total, rep.pixel, rep.feature, rep.temporal)
    return acc / b, d, cache


# -- training ----------------------------------------------------------------


@dataclass
class TrainResult:
    params: NetworkParams
    adam: AdamState
    history: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None


def _write_log_header(path: Path):
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(LOG_FIELDS)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def train(
    dataset: Sequence[VideoPair],
    net_config: NetworkConfig,
    config: TrainerConfig = TrainerConfig(),
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    init_seed: int | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train from scratch (or ``resume``) until ``config.max_iter`` iterations.

    With ``out_dir`` set, writes ``train_log.csv``, periodic
    ``ckpt_XXXXXX.stab`` files and ``final.stab``. A non-finite loss aborts
    with :class:`NumericError`; previously written checkpoints are kept.
    """
    dataset = list(dataset)
    if not dataset:
        raise InsufficientDataError("empty training set")
    for pair in dataset:
        if (pair.width, pair.height) != (net_config.width, net_config.height):
            raise ValueError(f"clip is {pair.width}x{pair.height}, network expects {net_config.width}x{net_config.height}")
    if config.augment:
        dataset = [v for pair in dataset for v in augment(pair)]
    index = sample_index(dataset)
    if resume is not None:
        params, adam, _ = network.load_training_state(resume, net_config)
        adam = adam or AdamState.zeros_like(params)
    else:
        params = network.build(net_config, config.seed if init_seed is None else init_seed)
        adam = AdamState.zeros_like(params)
    sampler = BatchSampler(index, config.batch_size, config.seed)
    flows = _FlowCache(dataset)
    out = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.csv"
        if resume is None or not log_path.exists():
            _write_log_header(log_path)
    ck_extra = {"trainer": config.to_dict()}
    history = []
    last_ckpt = None
    while params.iteration < config.max_iter:
        it = params.iteration
        items = sampler.batch(it)
        x, sups = build_batch(dataset, items, it, config, flows)
        vals, d, cache = batch_loss(params, x, sups, config)
        if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(d)):
            raise NumericError(f"non-finite loss at iteration {it}; last checkpoint: {last_ckpt}")
        grads = network.backward_batch(params, cache, d)
        grads, gnorm, clipped = clip_by_global_norm(grads, config.clip_norm)
        if clipped:
            log.info("iteration %d: gradient norm %.4g clipped to %.4g", it, gnorm, config.clip_norm)
        lr = scheduled_lr(it, config)
        adam_step(params, grads, adam, config, lr)
        row = {
            "iteration": it,
            "lr": lr,
            "total": vals[0],
            "pixel": vals[1],
            "feature": vals[2],
            "temporal": vals[3],
            "grad_norm": gnorm,
            "clipped": int(clipped),
        }
        history.append(row)
        if log_path is not None:
            with open(log_path, "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow([_fmt(row[k]) for k in LOG_FIELDS])
        if progress is not None:
            progress(row)
        if out is not None and config.checkpoint_every and params.iteration % config.checkpoint_every == 0:
            last_ckpt = out / f"ckpt_{params.iteration:06d}.stab"
            network.save_checkpoint(params, last_ckpt, adam, extra=ck_extra)
    final = None
    if out is not None:
        final = out / "final.stab"
        network.save_checkpoint(params, final, adam, extra=ck_extra)
    return TrainResult(params, adam, history, final)


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class ValidationSummary:
    pixel_loss: float
    identity_pixel_loss: float
    stability_in: float
    stability_out: float
    cropping: float
    distortion: float
    per_clip: tuple[dict, ...]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_clip"] = list(self.per_clip)
        return d


def validate(params: NetworkParams, clips: Sequence[VideoPair], engine_config=None) -> ValidationSummary:
    """Run the engine over each clip and score it against the steady twin.

    Pixel losses use the valid output pixels only, since the black borders
    of a stabilized frame have no counterpart in the identity baseline.
    Scores use the clips' exact camera transforms.
    """
    from .engine import EngineConfig, stabilize_clip
    from .losses import pixel_loss
    from .metrics import cams_to_interframe, report_from_transforms
    from .geometry import IDENTITY

    clips = list(clips)
    if not clips:
        raise InsufficientDataError("empty validation set")
    cfg = EngineConfig() if engine_config is None else engine_config
    rows = []
    for pair in clips:
        res = stabilize_clip(pair.unsteady, params, cfg)
        pl = np.mean([pixel_loss(f, u, g, masked=True)[0] for f, u, g in zip(res.transforms, pair.unsteady, pair.steady)])
        il = np.mean([pixel_loss(IDENTITY, u, g, masked=True)[0] for u, g in zip(pair.unsteady, pair.steady)])
        inter = cams_to_interframe(pair.unsteady_cams)
        rin = report_from_transforms(inter, [IDENTITY] * len(pair))
        rout = report_from_transforms(inter, res.transforms)
        rows.append(
            {
                "pixel_loss": float(pl),
                "identity_pixel_loss": float(il),
                "stability_in": rin.stability,
                "stability_out": rout.stability,
                "cropping": rout.cropping_ratio,
                "distortion": rout.distortion,
            }
        )
    mean = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    return ValidationSummary(
        mean["pixel_loss"],
        mean["identity_pixel_loss"],
        mean["stability_in"],
        mean["stability_out"],
        mean["cropping"],
        min(r["distortion"] for r in rows),
        tuple(rows),
    )

"""Training losses and their gradients w.r.t. the 8 homography parameters.

``F`` is the pull map of the warp (stabilized coordinates -> unsteady
coordinates), so the feature residual is measured in the unsteady frame:
``p_unsteady - F(p_steady)``. That keeps the pixel and feature terms
minimised by the same ``F``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correspondence import CorrespondenceSet, FlowField, warp_channels_with_flow, warp_with_flow
from .errors import DimensionError, InsufficientDataError, StabkitError
from .geometry import Homography, apply_with_jacobian
from .image import Frame, warp_with_jacobian


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.33
    lam: float = 30.0

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossReport:
    total: float
    stab_t: float
    stab_prev: float
    pixel_t: float
    pixel_prev: float
    feature_t: float
    feature_prev: float
    temporal: float
    grad_t: np.ndarray
    grad_prev: np.ndarray

    @property
    def pixel(self) -> float:
        return self.pixel_t + self.pixel_prev

    @property
    def feature(self) -> float:
        return self.feature_t + self.feature_prev

    def row(self) -> dict[str, float]:
        return {
            "total": self.total,
            "pixel": self.pixel,
            "feature": self.feature,
            "temporal": self.temporal,
        }


def _mse_grad(residual: np.ndarray, jac: np.ndarray, weight: np.ndarray | None):
    """``mean(r^2)`` and ``d/dh`` given ``dr/dh = -jac``, over all or masked pixels."""
    if weight is None:
        d = residual.size
        val = float(np.dot(residual.ravel(), residual.ravel()) / d)
        grad = -2.0 / d * (residual.reshape(-1) @ jac.reshape(-1, 8))
        return val, grad
    d = int(weight.sum())
    if d == 0:
        return 0.0, np.zeros(8)
    r = residual[weight]
    val = float(np.dot(r, r) / d)
    grad = -2.0 / d * (r @ jac[weight])
    return val, grad


def _pixel_from_warp(warped: Frame, jac: np.ndarray, gt: Frame, masked: bool):
    if warped.shape != gt.shape:
        raise DimensionError(f"warped frame {warped.shape} and ground truth {gt.shape} differ")
    weight = (warped.mask & gt.mask) if masked else None
    return _mse_grad(gt.data - warped.data, jac, weight)


def pixel_loss(f_t: Homography, frame: Frame, gt: Frame, masked: bool = False):
    """``mean((gt - warp(frame, F))^2)`` and its gradient."""
    if frame.shape != gt.shape:
        raise DimensionError(f"frame {frame.shape} and ground truth {gt.shape} differ")
    warped, jac = warp_with_jacobian(frame, f_t)
    return _pixel_from_warp(warped, jac, gt, masked)


def feature_loss(f_t: Homography, cs: CorrespondenceSet):
    """``mean ||p_unsteady - F(p_steady)||^2`` and its gradient."""
    if cs.m == 0:
        raise InsufficientDataError("feature loss needs at least one correspondence")
    xs, ys, dxs, dys = apply_with_jacobian(f_t, cs.dst[:, 0].copy(), cs.dst[:, 1].copy())
    rx = cs.src[:, 0] - xs
    ry = cs.src[:, 1] - ys
    m = cs.m
    val = float((rx @ rx + ry @ ry) / m)
    grad = -2.0 / m * (rx @ dxs + ry @ dys)
    return val, grad


def stability_loss(
    f_t: Homography,
    frame: Frame,
    gt: Frame,
    cs: CorrespondenceSet,
    weights: LossWeights = LossWeights(),
    masked: bool = False,
):
    pv, pg = pixel_loss(f_t, frame, gt, masked)
    fv, fg = feature_loss(f_t, cs)
    return pv + weights.alpha * fv, pg + weights.alpha * fg


def _temporal_from_warps(w_t: Frame, j_t, w_p: Frame, j_p, flow: FlowField, masked: bool):
    if w_t.shape != w_p.shape or flow.shape != w_t.shape:
        raise DimensionError("temporal loss needs equal frame and flow dimensions")
    moved = warp_with_flow(w_p, flow)
    moved_j = warp_channels_with_flow(j_p, flow)
    diff = w_t.data - moved.data
    weight = (w_t.mask & moved.mask) if masked else None
    # d diff / dF_t = j_t, d diff / dF_prev = -moved_j (flow held constant)
    val, g_t = _mse_grad(diff, -j_t, weight)
    _, g_p = _mse_grad(diff, moved_j, weight)
    return val, g_t, g_p


def temporal_loss(
    f_t: Homography,
    f_prev: Homography,
    frame_t: Frame,
    frame_prev: Frame,
    flow: FlowField,
    masked: bool = False,
):
    """``mean((warp(I_t, F_t) - w(warp(I_{t-1}, F_{t-1})))^2)`` and both gradients."""
    if frame_t.shape != frame_prev.shape:
        raise DimensionError("frames must have equal dimensions")
    w_t, j_t = warp_with_jacobian(frame_t, f_t)
    w_p, j_p = warp_with_jacobian(frame_prev, f_prev)
    return _temporal_from_warps(w_t, j_t, w_p, j_p, flow, masked)


@dataclass(frozen=True, eq=False)
class Branch:
    """Everything one Siamese branch contributes to the loss."""

    transform: Homography
    frame: Frame
    gt: Frame
    correspondences: CorrespondenceSet


def _stab_branch(branch: Branch, weights: LossWeights, masked: bool, label: str):
    try:
        warped, jac = warp_with_jacobian(branch.frame, branch.transform)
        pv, pg = _pixel_from_warp(warped, jac, branch.gt, masked)
        if weights.alpha > 0.0 or branch.correspondences.m:
            fv, fg = feature_loss(branch.transform, branch.correspondences)
        else:
            fv, fg = 0.0, np.zeros(8)
    except StabkitError as exc:
        raise type(exc)(f"branch {label}: {exc}") from exc
    return warped, jac, pv, pg, fv, fg


def total_loss(
    branch_t: Branch,
    branch_prev: Branch,
    flow: FlowField,
    weights: LossWeights = LossWeights(),
    masked: bool = False,
) -> LossReport:
    """Stability loss on both branches plus ``lam`` times the temporal loss."""
    w_t, j_t, pv_t, pg_t, fv_t, fg_t = _stab_branch(branch_t, weights, masked, "t")
    w_p, j_p, pv_p, pg_p, fv_p, fg_p = _stab_branch(branch_prev, weights, masked, "t-1")
    try:
        tv, tg_t, tg_p = _temporal_from_warps(w_t, j_t, w_p, j_p, flow, masked)
    except StabkitError as exc:
        raise type(exc)(f"temporal term: {exc}") from exc
    a, lam = weights.alpha, weights.lam
    stab_t = pv_t + a * fv_t
    stab_p = pv_p + a * fv_p
    return LossReport(
        total=stab_t + stab_p + lam * tv,
        stab_t=stab_t,
        stab_prev=stab_p,
        pixel_t=pv_t,
        pixel_prev=pv_p,
        feature_t=fv_t,
        feature_prev=fv_p,
        temporal=tv,
        grad_t=pg_t + a * fg_t + lam * tg_t,
        grad_prev=pg_p + a * fg_p + lam * tg_p,
    )

"""Differentiable training losses.

Every per-item distance uses an epsilon-smoothed norm
``sqrt(||v||^2 + 1e-12) - 1e-6`` so losses are smooth everywhere yet exactly
zero on exact matches. Evaluation metrics (exact norms, millimeters) live in
:mod:`markerbody.metrics`; these losses stay in meters/pixels and are meant
to be differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .camera import CameraIntrinsics, project

EPS_SMOOTH = 1e-12


def smooth_norm(v, axis: int = -1):
    """Smoothed L2 norm along ``axis``: zero iff the vector is exactly zero."""
    return ad.sqrt(ad.tsum(v * v, axis=axis) + EPS_SMOOTH) - EPS_SMOOTH**0.5


def smooth_abs(x):
    return ad.sqrt(x * x + EPS_SMOOTH) - EPS_SMOOTH**0.5


def loss_param_prior(theta, beta):
    """Squared-norm prior pulling pose and shape toward the standard normal."""
    t2 = ad.tsum(theta * theta, axis=-1)
    b2 = ad.tsum(beta * beta, axis=-1)
    return ad.tmean(t2 + b2)


def loss_markers(pred_markers, target_markers):
    """Mean per-marker position error (smoothed norms, meters)."""
    return ad.tmean(smooth_norm(pred_markers - target_markers))


def loss_keypoints(pred_joints, cam: CameraIntrinsics, keypoints_px, confidence):
    """Confidence-weighted mean reprojection distance of predicted joints.

    ``pred_joints`` (K, 3) in camera frame; ``keypoints_px`` (K, 2);
    ``confidence`` (K,) in [0, 1]. Average is over all K joints.
    """
    proj = project(pred_joints, cam)
    return ad.tmean(smooth_norm(proj - keypoints_px) * confidence)


def loss_parts(target_map, rendered_map):
    """Mean per-pixel L1 distance between part maps (channels summed)."""
    h, w = ad.values_of(target_map).shape[:2]
    return ad.tsum(smooth_abs(rendered_map - target_map)) * (1.0 / float(h * w))


def loss_fullsup(pred_verts, gt_verts, pred_joints, gt_joints,
                 lambda_v: float = 1.0, lambda_j: float = 1.0):
    """3d supervision: mean per-vertex error plus mean per-joint error."""
    lv = ad.tmean(smooth_norm(pred_verts - gt_verts))
    lj = ad.tmean(smooth_norm(pred_joints - gt_joints))
    return lambda_v * lv + lambda_j * lj


@dataclass
class LossWeights:
    ps: float = 1e-3
    m: float = 1.0
    k: float = 1.0
    b: float = 1.0
    f: float = 1.0
    v: float = 1.0  # vertex term inside the 3d loss
    j: float = 1.0  # joint term inside the 3d loss


_WEIGHT_FIELD = {
    "param_prior": "ps",
    "markers": "m",
    "keypoints": "k",
    "parts": "b",
    "fullsup": "f",
}


def combine_losses(parts: dict, weights: LossWeights, has_3d: bool):
    """Weighted total; the 3d term is gated by ``has_3d``.

    ``parts`` maps names in {param_prior, markers, keypoints, parts, fullsup}
    to scalar loss Tensors; missing entries contribute nothing. The fullsup
    term is always logged but only enters the total when ``has_3d``.
    Returns (total, {name: float}).
    """
    total = None
    logged = {}
    for name, term in parts.items():
        if term is None:
            continue
        w = getattr(weights, _WEIGHT_FIELD[name])
        if name == "fullsup" and not has_3d:
            logged[name] = float(ad.values_of(term))
            continue
        contrib = term * w
        total = contrib if total is None else total + contrib
        logged[name] = float(ad.values_of(term))
    if total is None:
        raise ValueError("combine_losses: no active loss terms")
    logged["total"] = float(ad.values_of(total))
    return total, logged

"""Similarity alignment and reconstruction error metrics.

Metrics are evaluation-only (plain numpy, exact norms) and reported in
millimeters; inputs are meters.
"""

from __future__ import annotations

import numpy as np


def procrustes_align(x: np.ndarray, y: np.ndarray):
    """Similarity transform (s, R, t) minimizing ||s R x + t - y||^2.

    Classic closed form: SVD of the cross-covariance with a determinant
    sign correction so R is always a proper rotation (det +1), never a
    reflection. ``x`` and ``y`` are (N, 3) with N >= 3.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"procrustes_align: expected matching (N, 3) arrays, got {x.shape} and {y.shape}")
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    var_x = (xc * xc).sum() / len(x)
    cov = yc.T @ xc / len(x)
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        d[2] = -1.0
    rot = u @ np.diag(d) @ vt
    scale = (s * d).sum() / var_x
    trans = mu_y - scale * rot @ mu_x
    return scale, rot, trans


def apply_similarity(x: np.ndarray, scale: float, rot: np.ndarray, trans: np.ndarray) -> np.ndarray:
    return scale * x @ rot.T + trans


def mpjpe_mm(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-joint position error in millimeters."""
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * 1000.0)


def mpjpe_pa_mm(pred: np.ndarray, gt: np.ndarray) -> float:
    """MPJPE after Procrustes alignment of the prediction onto the target."""
    s, r, t = procrustes_align(pred, gt)
    return mpjpe_mm(apply_similarity(pred, s, r, t), gt)


def mpvpe_mm(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-vertex position error in millimeters (alias of the joint formula)."""
    return mpjpe_mm(pred, gt)


def translation_error_mm(pred_t: np.ndarray, gt_t: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(pred_t) - np.asarray(gt_t)) * 1000.0)


def reprojection_error_px(pred_px: np.ndarray, gt_px: np.ndarray) -> float:
    """Mean 2d keypoint distance in pixels."""
    return float(np.linalg.norm(pred_px - gt_px, axis=-1).mean())

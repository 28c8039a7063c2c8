"""Pinhole camera intrinsics, perspective projection and crop adaptation.

Conventions: the camera sits at the origin of a right-handed frame with
x right, y down, z forward (the optical axis). Pixel coordinates are
continuous, x along image columns and y along rows, so the principal point
(cx, cy) is measured in pixels of the current image. A crop of the source
image, resized to a new resolution, is *its own* camera: the adapted
intrinsics scale the focals and shift the principal point.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

Z_NEAR = 1e-4


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy], dtype=np.float64)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "CameraIntrinsics":
        d = json.loads(text)
        return CameraIntrinsics(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"])


@dataclass(frozen=True)
class CropSpec:
    """A square axis-aligned crop of a source image, resized to out_size.

    ``x0, y0`` locate the crop's top-left corner in source pixels; ``size``
    is its side length in source pixels. The resized crop is ``out_size``
    pixels square, giving the isotropic scale ``out_size / size``.
    """

    x0: float
    y0: float
    size: float
    out_size: int

    @property
    def scale(self) -> float:
        return self.out_size / self.size


class BehindCameraError(ValueError):
    pass


def project(points, cam: CameraIntrinsics, z_near: float = Z_NEAR):
    """Perspective-project (..., 3) camera-frame points to (..., 2) pixels.

    x_px = fx * x / z + cx, y_px = fy * y / z + cy. Points at or behind the
    near plane raise :class:`BehindCameraError`. Works on plain arrays or
    Tensors (differentiable).
    """
    vals = ad.values_of(points)
    if vals.shape[-1] != 3:
        raise ad.ShapeError("project", vals.shape, ("...", 3))
    z_vals = vals[..., 2]
    if np.any(z_vals < z_near):
        raise BehindCameraError(
            f"project: {int((z_vals < z_near).sum())} point(s) at or behind the near plane"
        )
    x = points[..., 0]
    y = points[..., 1]
    z = points[..., 2]
    u = x / z * cam.fx + cam.cx
    v = y / z * cam.fy + cam.cy
    return ad.stack([u, v], axis=-1)


def adapt_intrinsics_to_crop(cam: CameraIntrinsics, crop: CropSpec) -> CameraIntrinsics:
    """Intrinsics of the virtual camera that observes the resized crop.

    With scale s = out_size / size and crop origin (x0, y0):
    (fx, fy, cx, cy) -> (s*fx, s*fy, s*(cx - x0), s*(cy - y0)).
    """
    s = crop.scale
    return CameraIntrinsics(
        fx=s * cam.fx,
        fy=s * cam.fy,
        cx=s * (cam.cx - crop.x0),
        cy=s * (cam.cy - crop.y0),
    )


def crop_to_source_pixels(points_px: np.ndarray, crop: CropSpec) -> np.ndarray:
    """Map (..., 2) crop-image pixels back to source-image pixels."""
    return np.asarray(points_px, dtype=np.float64) / crop.scale + np.array([crop.x0, crop.y0])

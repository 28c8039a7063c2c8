"""Projection and crop-intrinsics tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markerbody.camera import (
    BehindCameraError,
    CameraIntrinsics,
    CropSpec,
    adapt_intrinsics_to_crop,
    crop_to_source_pixels,
    project,
)
from markerbody.gradcheck import check_gradient

CAM = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0)


class TestProject:
    def test_hand_case(self):
        # x = 500 * 1/2 + 320 = 570, y = 500 * 0/2 + 240 = 240
        px = project(np.array([[1.0, 0.0, 2.0]]), CAM)
        np.testing.assert_allclose(px, [[570.0, 240.0]], atol=1e-12)

    def test_principal_point_is_fixed_point(self):
        px = project(np.array([[0.0, 0.0, 3.0]]), CAM)
        np.testing.assert_allclose(px, [[320.0, 240.0]], atol=1e-12)

    def test_behind_camera_raises(self):
        with pytest.raises(BehindCameraError):
            project(np.array([[0.0, 0.0, -1.0]]), CAM)
        with pytest.raises(BehindCameraError):
            project(np.array([[0.0, 0.0, 0.0]]), CAM)

    def test_batched_shape(self):
        pts = np.random.default_rng(0).uniform(1.0, 2.0, size=(4, 7, 3))
        assert project(pts, CAM).shape == (4, 7, 2)

    def test_gradients(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-1.0, 1.0, size=(5, 3))
        pts[:, 2] = rng.uniform(2.0, 4.0, size=5)
        w = rng.normal(size=(5, 2))
        report = check_gradient(
            lambda t: (project(t["p"], CAM) * w * 1e-3).sum(),
            {"p": pts},
            tolerance=1e-5,
            floor=1e-3,
        )
        assert report.ok, report.summary()


class TestCropAdaptation:
    def test_hand_case(self):
        # scale 0.5, origin (100, 60): (250, 250, 110, 90)
        crop = CropSpec(x0=100.0, y0=60.0, size=128.0, out_size=64)
        out = adapt_intrinsics_to_crop(CAM, crop)
        assert out == CameraIntrinsics(250.0, 250.0, 110.0, 90.0)

    def test_identity_crop(self):
        crop = CropSpec(x0=0.0, y0=0.0, size=64.0, out_size=64)
        assert adapt_intrinsics_to_crop(CAM, crop) == CAM

    def test_projection_consistency(self):
        # projecting with adapted intrinsics == projecting with the source
        # camera then mapping pixels into the crop
        rng = np.random.default_rng(3)
        pts = rng.uniform(-1.0, 1.0, size=(200, 3))
        pts[:, 2] = rng.uniform(0.5, 6.0, size=200)
        for _ in range(20):
            crop = CropSpec(
                x0=rng.uniform(-50, 400),
                y0=rng.uniform(-50, 300),
                size=rng.uniform(32, 512),
                out_size=int(rng.integers(16, 256)),
            )
            cc = adapt_intrinsics_to_crop(CAM, crop)
            direct = project(pts, cc)
            via_full = (project(pts, CAM) - [crop.x0, crop.y0]) * crop.scale
            assert np.abs(direct - via_full).max() <= 1e-9

    def test_crop_to_source_round_trip(self):
        crop = CropSpec(x0=12.0, y0=-3.0, size=100.0, out_size=64)
        rng = np.random.default_rng(4)
        pts = rng.uniform(0.5, 5.0, size=(50, 3))
        pts[:, 2] += 1.0
        full_px = project(pts, CAM)
        crop_px = project(pts, adapt_intrinsics_to_crop(CAM, crop))
        np.testing.assert_allclose(crop_to_source_pixels(crop_px, crop), full_px, atol=1e-9)


class TestSerialization:
    def test_json_round_trip(self):
        text = CAM.to_json()
        assert CameraIntrinsics.from_json(text) == CAM


@settings(max_examples=50, deadline=None)
@given(
    fx=st.floats(50, 2000),
    fy=st.floats(50, 2000),
    cx=st.floats(-100, 700),
    cy=st.floats(-100, 700),
    x0=st.floats(-200, 600),
    y0=st.floats(-200, 600),
    size=st.floats(8, 1024),
    out_size=st.integers(8, 512),
    seed=st.integers(0, 2**31 - 1),
)
def test_property_crop_consistency(fx, fy, cx, cy, x0, y0, size, out_size, seed):
    cam = CameraIntrinsics(fx, fy, cx, cy)
    crop = CropSpec(x0=x0, y0=y0, size=size, out_size=out_size)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-2.0, 2.0, size=(20, 3))
    pts[:, 2] = rng.uniform(0.2, 10.0, size=20)
    direct = project(pts, adapt_intrinsics_to_crop(cam, crop))
    via_full = (project(pts, cam) - [x0, y0]) * crop.scale
    # tolerance is absolute in pixels of the crop
    assert np.abs(direct - via_full).max() <= 1e-9 * max(1.0, np.abs(via_full).max())

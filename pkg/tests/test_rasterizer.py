"""Hard and soft rasterizer tests."""

import numpy as np
import pytest

from markerbody import rasterizer as ras
from markerbody.body import BodyParams, build_standin_body, optimal_center_translation, pose_mesh
from markerbody.camera import CameraIntrinsics, project
from markerbody.gradcheck import check_gradient
from markerbody.losses import loss_parts

CAM16 = CameraIntrinsics(fx=16.0, fy=16.0, cx=8.0, cy=8.0)


def _tri_scene(depths, offsets):
    """Unit-square-ish triangles at given depths, one part each."""
    verts = []
    tris = []
    for i, (z, (ox, oy)) in enumerate(zip(depths, offsets)):
        base = len(verts)
        # triangle spanning most of the 16x16 view at z
        s = z / 16.0
        verts += [
            [(-6.0 + ox) * s, (-6.0 + oy) * s, z],
            [(+6.0 + ox) * s, (-6.0 + oy) * s, z],
            [(0.0 + ox) * s, (+6.0 + oy) * s, z],
        ]
        tris.append([base, base + 1, base + 2])
    return np.array(verts), np.array(tris), np.arange(len(depths))


class TestHardRasterizer:
    def test_single_triangle_matches_point_in_triangle_oracle(self):
        px = np.array([[2.5, 2.5], [13.5, 2.5], [2.5, 13.5]])
        z = np.array([2.0, 2.0, 2.0])
        tris = np.array([[0, 1, 2]])
        label, depth = ras.rasterize_hard(px, z, tris, np.array([0]), (16, 16))
        for i in range(16):
            for j in range(16):
                q = np.array([j + 0.5, i + 0.5])

                def cr(u, v):
                    return u[0] * v[1] - u[1] * v[0]

                w0 = cr(px[1] - px[0], q - px[0])
                w1 = cr(px[2] - px[1], q - px[1])
                w2 = cr(px[0] - px[2], q - px[2])
                inside = (w0 >= 0) and (w1 >= 0) and (w2 >= 0) or (w0 <= 0) and (w1 <= 0) and (w2 <= 0)
                assert (label[i, j] == 1) == bool(inside)
        assert np.all(np.isinf(depth[label == 0]))
        np.testing.assert_allclose(depth[label == 1], 2.0)

    def test_depth_ordering(self):
        verts, tris, parts = _tri_scene([3.0, 2.0], [(0.0, 0.0), (0.0, 0.0)])
        px = project(verts, CAM16)
        label, depth = ras.rasterize_hard(px, verts[:, 2], tris, parts, (16, 16))
        covered = label > 0
        assert covered.any()
        assert np.all(label[covered] == 2)  # nearer triangle (part index 1 -> label 2)
        np.testing.assert_allclose(depth[covered], 2.0, atol=1e-9)

    def test_perspective_correct_depth(self):
        # slanted triangle: depth interpolation must be linear in 1/z
        px = np.array([[0.5, 0.5], [15.5, 0.5], [0.5, 15.5]])
        z = np.array([2.0, 4.0, 2.0])
        tris = np.array([[0, 1, 2]])
        _, depth = ras.rasterize_hard(px, z, tris, np.array([0]), (16, 16))
        # midpoint of the horizontal edge: bary (0.5, 0.5, 0)
        expect = 1.0 / (0.5 / 2.0 + 0.5 / 4.0)
        assert abs(depth[0, 8] - expect) < 0.2

    def test_onehot_background_and_channels(self):
        label = np.array([[0, 1], [3, 0]])
        oh = ras.part_map_onehot(label, 3)
        assert oh.shape == (2, 2, 3)
        np.testing.assert_array_equal(oh[0, 0], [0, 0, 0])
        np.testing.assert_array_equal(oh[0, 1], [1, 0, 0])
        np.testing.assert_array_equal(oh[1, 0], [0, 0, 1])


class TestSoftRasterizer:
    def test_channel_sum_at_most_one(self):
        verts, tris, parts = _tri_scene([2.0, 2.5], [(0.0, 0.0), (2.0, 1.0)])
        out = ras.soft_rasterize_parts(verts, tris, parts, CAM16, (16, 16), n_parts=2)
        total = out.sum(axis=2)
        assert total.max() <= 1.0 + 1e-9
        assert total.min() >= 0.0

    def test_interior_coverage_near_one_in_hard_limit(self):
        verts, tris, parts = _tri_scene([2.0], [(0.0, 0.0)])
        out = ras.soft_rasterize_parts(
            verts, tris, parts, CAM16, (16, 16), n_parts=1, sigma=1e-5
        )
        # center pixel is deep inside the triangle
        assert out[8, 8, 0] >= 0.99
        # far corner is far outside
        assert out[0, 15, 0] <= 1e-6

    def test_occlusion_front_dominates(self):
        verts, tris, parts = _tri_scene([2.0, 3.0], [(0.0, 0.0), (0.0, 0.0)])
        out = ras.soft_rasterize_parts(verts, tris, parts, CAM16, (16, 16), n_parts=2)
        assert out[8, 8, 0] >= 0.99
        assert out[8, 8, 1] <= 0.01

    def test_depths_within_gamma_blend(self):
        verts, tris, parts = _tri_scene([2.0, 2.002], [(0.0, 0.0), (0.0, 0.0)])
        out = ras.soft_rasterize_parts(verts, tris, parts, CAM16, (16, 16), n_parts=2)
        w0, w1 = out[8, 8, 0], out[8, 8, 1]
        assert w0 + w1 >= 0.99
        assert 0.4 <= w0 / (w0 + w1) <= 0.6

    def test_windowed_matches_full(self):
        verts, tris, parts = _tri_scene([2.0, 2.4, 3.0], [(0.0, 0.0), (3.0, -1.0), (-2.0, 2.0)])
        full = ras.soft_rasterize_parts(
            verts, tris, parts, CAM16, (16, 16), n_parts=3, full_window=True
        )
        windowed = ras.soft_rasterize_parts(
            verts, tris, parts, CAM16, (16, 16), n_parts=3, full_window=False
        )
        np.testing.assert_allclose(windowed, full, atol=1e-9)

    def test_matches_hard_rasterizer_on_body(self):
        model, _ = build_standin_body(density=0.6)
        cam = CameraIntrinsics(36.0, 36.0, 16.0, 16.0)
        t = optimal_center_translation(model, cam, (32, 32))
        p = BodyParams.default()
        p.trans = t
        verts = pose_mesh(model, p)
        px = project(verts, cam)
        label, _ = ras.rasterize_hard(px, verts[:, 2], model.triangles, model.triangle_parts(), (32, 32))
        soft = ras.soft_rasterize_parts(
            verts, model.triangles, model.triangle_parts(), cam, (32, 32),
            sigma=1e-6, gamma=1e-4,
        )
        conf = soft.sum(axis=2)
        soft_label = np.where(conf > 0.5, soft.argmax(axis=2) + 1, 0)
        # compare on confident pixels away from the soft boundary band
        mask = (conf > 0.9) | (conf < 0.1)
        agree = (soft_label[mask] == label[mask]).mean()
        assert agree >= 0.95

    def test_empty_scene_returns_zeros(self):
        verts = np.array([[100.0, 100.0, 2.0], [101.0, 100.0, 2.0], [100.0, 101.0, 2.0]])
        out = ras.soft_rasterize_parts(verts, np.array([[0, 1, 2]]), np.array([0]), CAM16, (16, 16), n_parts=1)
        np.testing.assert_array_equal(out, 0.0)

    def test_gradients_through_loss_parts(self):
        verts, tris, parts = _tri_scene([2.0, 2.3], [(0.0, 0.0), (1.5, 0.5)])
        rng = np.random.default_rng(3)
        target = rng.uniform(0.0, 1.0, size=(8, 8, 2))
        cam = CameraIntrinsics(8.0, 8.0, 4.0, 4.0)

        def f(t):
            rendered = ras.soft_rasterize_parts(
                t["v"], tris, parts, cam, (8, 8), n_parts=2, full_window=True
            )
            return loss_parts(target, rendered)

        report = check_gradient(f, {"v": verts}, tolerance=1e-3, max_entries=18, rng=rng)
        assert report.ok, report.summary()

"""Stand-in body model tests: construction invariants, kinematics, centering."""

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from markerbody import body
from markerbody.body import (
    BodyParams,
    DegenerateRotationError,
    build_standin_body,
    matrix_to_rot6d,
    optimal_center_translation,
    pose_mesh,
    regress_joints,
    rot6d_to_matrix,
)
from markerbody.camera import CameraIntrinsics, project
from markerbody.gradcheck import check_gradient


@pytest.fixture(scope="module")
def model_and_anchors():
    return build_standin_body()


@pytest.fixture(scope="module")
def model(model_and_anchors):
    return model_and_anchors[0]


class TestConstruction:
    def test_vertex_budget(self, model):
        assert 800 <= model.n_vertices <= 1400

    def test_fifteen_parts_all_used(self, model):
        assert len(model.part_names) == 15
        assert sorted(set(model.part_labels.tolist())) == list(range(15))

    def test_triangles_stay_within_one_part(self, model):
        pl = model.part_labels
        t = model.triangles
        assert np.all(pl[t[:, 0]] == pl[t[:, 1]])
        assert np.all(pl[t[:, 0]] == pl[t[:, 2]])

    def test_triangle_indices_valid(self, model):
        assert model.triangles.min() >= 0
        assert model.triangles.max() < model.n_vertices

    def test_skin_weights_convex_and_sparse(self, model):
        w = model.skin_weights
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert (w > 0).sum(axis=1).max() <= 4

    def test_joint_regressor_convex(self, model):
        r = model.joint_regressor
        assert np.all(r >= 0)
        np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-12)

    def test_regressed_joints_near_skeleton(self, model):
        err = np.linalg.norm(model.rest_joints - body._rest_skeleton(), axis=1)
        assert err.max() < 0.04  # within 4 cm of the construction skeleton

    def test_anchor_count_and_asymmetry(self, model_and_anchors):
        _, anchors = model_and_anchors
        assert len(anchors) == 53
        assert "RBAK" in anchors and "LBAK" not in anchors  # unpaired marker
        pts = np.array(list(anchors.values()))
        mirrored = pts * np.array([-1.0, 1.0, 1.0])
        d = np.linalg.norm(mirrored[:, None, :] - pts[None, :, :], axis=-1)
        # placement is not mirror symmetric: some marker's reflection is far
        # from every marker
        assert d.min(axis=1).max() > 0.01

    def test_density_scales_vertex_count(self):
        small, _ = build_standin_body(density=0.7)
        big, _ = build_standin_body(density=1.3)
        assert small.n_vertices < big.n_vertices

    def test_blendshape_magnitudes_bounded(self, model):
        norms = np.linalg.norm(model.blendshapes, axis=2)
        assert norms.max() < 0.15  # no shape moves a vertex more than 15 cm/sigma

    def test_stature_shape_changes_height(self, model):
        tall = pose_mesh(model, BodyParams(
            theta=np.zeros(90), beta=np.eye(8)[0] * 2.0,
            rot6d=body.ROT6D_IDENTITY, trans=np.zeros(3)))
        base = model.template
        h0 = base[:, 1].max() - base[:, 1].min()
        h1 = tall[:, 1].max() - tall[:, 1].min()
        assert h1 > h0 * 1.05


class TestRot6d:
    def test_round_trip_haar_rotations(self):
        rots = special_ortho_group.rvs(3, size=50, random_state=np.random.default_rng(5))
        back = rot6d_to_matrix(matrix_to_rot6d(rots))
        np.testing.assert_allclose(back, rots, atol=1e-12)

    def test_orthonormal_det_plus_one_for_random_6d(self):
        rng = np.random.default_rng(6)
        r6 = rng.normal(size=(100, 6))
        R = rot6d_to_matrix(r6)
        eye = np.einsum("bij,bik->bjk", R, R)
        np.testing.assert_allclose(eye, np.broadcast_to(np.eye(3), (100, 3, 3)), atol=1e-12)
        np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-12)

    def test_degenerate_inputs_raise(self):
        with pytest.raises(DegenerateRotationError):
            rot6d_to_matrix(np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0]))
        with pytest.raises(DegenerateRotationError):
            rot6d_to_matrix(np.array([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]))

    def test_gradients(self):
        rng = np.random.default_rng(7)
        r6 = rng.normal(size=6) + body.ROT6D_IDENTITY
        w = rng.normal(size=(3, 3))
        report = check_gradient(
            lambda t: (rot6d_to_matrix(t["r"]) * w).sum(),
            {"r": r6},
            tolerance=1e-5,
            floor=1e-3,
        )
        assert report.ok, report.summary()


class TestPoseMesh:
    def test_identity_pose_is_template(self, model):
        v = pose_mesh(model, BodyParams.default())
        np.testing.assert_allclose(v, model.template, atol=1e-12)

    def test_translation_only_shifts(self, model):
        p = BodyParams.default()
        p.trans = np.array([0.3, -0.2, 4.0])
        v = pose_mesh(model, p)
        np.testing.assert_allclose(v, model.template + p.trans, atol=1e-12)

    def test_global_rotation_pivots_about_root_joint(self, model):
        R = special_ortho_group.rvs(3, random_state=np.random.default_rng(8))
        p = BodyParams.default()
        p.rot6d = matrix_to_rot6d(R)
        v = pose_mesh(model, p)
        j0 = model.rest_joints[0]
        expect = (model.template - j0) @ R.T + j0
        np.testing.assert_allclose(v, expect, atol=1e-10)

    def test_beta_is_linear_at_identity_pose(self, model):
        rng = np.random.default_rng(9)
        b = rng.normal(size=8)
        p = BodyParams.default()
        p.beta = b
        v = pose_mesh(model, p)
        expect = model.template + np.einsum("k,kvc->vc", b, model.blendshapes)
        np.testing.assert_allclose(v, expect, atol=1e-10)

    def test_batched_matches_loop(self, model):
        rng = np.random.default_rng(10)
        B = 4
        params = BodyParams(
            theta=rng.normal(size=(B, 90)) * 0.5,
            beta=rng.normal(size=(B, 8)) * 0.5,
            rot6d=np.stack([
                matrix_to_rot6d(special_ortho_group.rvs(3, random_state=rng)) for _ in range(B)
            ]),
            trans=rng.uniform(-2, 2, size=(B, 3)),
        )
        batched = pose_mesh(model, params)
        for i in range(B):
            single = pose_mesh(model, BodyParams(
                theta=params.theta[i], beta=params.beta[i],
                rot6d=params.rot6d[i], trans=params.trans[i]))
            np.testing.assert_allclose(batched[i], single, atol=1e-12)

    def test_posed_joints_follow_regressor(self, model):
        rng = np.random.default_rng(11)
        p = BodyParams(
            theta=rng.normal(size=90) * 0.4, beta=rng.normal(size=8) * 0.5,
            rot6d=matrix_to_rot6d(special_ortho_group.rvs(3, random_state=rng)),
            trans=np.array([0.0, 0.0, 3.0]))
        v = pose_mesh(model, p)
        j = regress_joints(model, v)
        assert j.shape == (16, 3)
        # joints stay inside the mesh bounding box
        assert np.all(j >= v.min(axis=0) - 1e-9) and np.all(j <= v.max(axis=0) + 1e-9)

    def test_gradients_through_full_chain(self, model):
        rng = np.random.default_rng(12)
        w = rng.normal(size=(model.n_vertices, 3))

        def f(t):
            p = BodyParams(theta=t["theta"], beta=t["beta"], rot6d=t["rot6d"], trans=t["trans"])
            return (pose_mesh(model, p) * w * 1e-2).sum()

        report = check_gradient(
            f,
            {
                "theta": rng.normal(size=90) * 0.5,
                "beta": rng.normal(size=8) * 0.5,
                "rot6d": body.ROT6D_IDENTITY + 0.3 * rng.normal(size=6),
                "trans": rng.normal(size=3),
            },
            tolerance=1e-5,
            floor=1e-3,
            max_entries=10,
            rng=rng,
        )
        assert report.ok, report.summary()


class TestOptimalCenterTranslation:
    CAMS = [
        CameraIntrinsics(70.0, 70.0, 32.0, 32.0),
        CameraIntrinsics(120.0, 110.0, 30.0, 36.0),
        CameraIntrinsics(400.0, 420.0, 100.0, 140.0),
    ]
    SIZES = [(64, 64), (64, 64), (224, 256)]

    def test_centroid_centered_and_height_fraction(self, model):
        for cam, size in zip(self.CAMS, self.SIZES):
            t = optimal_center_translation(model, cam, size)
            px = project(pose_mesh(model, BodyParams.default()) + t, cam)
            center = px.mean(axis=0)
            assert abs(center[0] - size[0] / 2) <= 1.0
            assert abs(center[1] - size[1] / 2) <= 1.0
            lo, hi = px.min(axis=0), px.max(axis=0)
            assert abs((hi[1] - lo[1]) / size[1] - 0.9) <= 0.02

    def test_height_fraction_parameter(self, model):
        cam = self.CAMS[0]
        t = optimal_center_translation(model, cam, (64, 64), height_fraction=0.5)
        px = project(pose_mesh(model, BodyParams.default()) + t, cam)
        lo, hi = px.min(axis=0), px.max(axis=0)
        assert abs((hi[1] - lo[1]) / 64 - 0.5) <= 0.02

    def test_focal_doubling_scales_depth(self, model):
        # exact similar-triangles proportionality is perturbed only by
        # perspective spread (a couple of percent at this distance)
        t1 = optimal_center_translation(model, CameraIntrinsics(70, 70, 32, 32), (64, 64))
        t2 = optimal_center_translation(model, CameraIntrinsics(140, 140, 32, 32), (64, 64))
        assert abs(t2[2] / t1[2] - 2.0) <= 0.05

    def test_degenerate_mesh_raises(self, model):
        import copy

        flat = copy.deepcopy(model)
        flat.template = flat.template * np.array([1.0, 0.0, 1.0])
        with pytest.raises(ValueError):
            optimal_center_translation(flat, self.CAMS[0], (64, 64))

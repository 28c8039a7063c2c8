"""Synthetic dataset generation and persistence tests."""

import numpy as np
import pytest

from markerbody import synth
from markerbody.body import BodyParams, build_standin_body, optimal_center_translation
from markerbody.camera import CameraIntrinsics, project
from markerbody.config import GenDataConfig
from markerbody.markers import build_marker_set
from markerbody.synth import (
    PlacementError,
    SyntheticSample,
    generate_dataset,
    load_manifest,
    load_sample,
    make_sample,
    render_sample,
    strip_3d,
)

CAM = CameraIntrinsics(70.0, 70.0, 32.0, 32.0)


@pytest.fixture(scope="module")
def model():
    m, _ = build_standin_body()
    return m


@pytest.fixture(scope="module")
def centered(model):
    t0 = optimal_center_translation(model, CAM, (64, 64))
    params = BodyParams.default()
    params.trans = t0
    return render_sample(model, params, CAM, (64, 64), seed=7)


class TestRenderSample:
    def test_joint_centroid_near_image_center(self, centered):
        c = centered.keypoints.mean(axis=0)
        assert np.abs(c - np.array([32.0, 32.0])).max() <= 2.0

    def test_part_map_onehot_and_background_zero(self, centered):
        sums = centered.part_map.sum(axis=-1)
        assert set(np.unique(sums)) <= {0.0, 1.0}
        fg = sums > 0
        assert 0.1 < fg.mean() < 0.95
        assert np.all(centered.part_map[~fg] == 0.0)

    def test_image_range_and_dtype(self, centered):
        assert centered.image.dtype == np.float32
        assert centered.image.min() >= 0.0 and centered.image.max() <= 1.0
        assert centered.image.shape == (64, 64, 3)

    def test_same_seed_bit_identical(self, model, centered):
        t0 = optimal_center_translation(model, CAM, (64, 64))
        params = BodyParams.default()
        params.trans = t0
        again = render_sample(model, params, CAM, (64, 64), seed=7)
        np.testing.assert_array_equal(again.image, centered.image)
        np.testing.assert_array_equal(again.keypoints, centered.keypoints)
        np.testing.assert_array_equal(again.confidence, centered.confidence)

    def test_keypoints_reproject_from_vertices(self, centered, model):
        joints = model.joint_regressor @ centered.vertices
        px = project(joints, centered.cam)
        err = np.linalg.norm(px - centered.keypoints, axis=-1)
        assert err[centered.confidence == 1.0].max() <= 0.5

    def test_confidence_levels_only(self, centered):
        assert set(np.unique(centered.confidence)) <= {0.3, 1.0}
        # frontal default pose: most joints visible
        assert (centered.confidence == 1.0).sum() >= 10

    def test_occlusion_flags_back_joint(self, model):
        # body rotated so one arm hides behind the torso more often than not;
        # at minimum the test asserts occlusion happens somewhere over poses
        rng = np.random.default_rng(3)
        occluded_any = False
        for seed in range(8):
            s = make_sample(model, GenDataConfig(seed=11, count=8), seed)
            occluded_any = occluded_any or bool((s.confidence == 0.3).any())
        assert occluded_any

    def test_resamples_translation_when_behind(self, model):
        params = BodyParams.default()
        params.trans = np.array([0.0, 0.0, -5.0])  # behind the camera
        s = render_sample(model, params, CAM, (64, 64), seed=0)
        assert s.params.trans[2] >= 1.0
        assert s.vertices[:, 2].min() >= synth.MIN_VERTEX_Z

    def test_unplaceable_raises(self, model):
        params = BodyParams.default()
        params.trans = np.array([0.0, 0.0, -5.0])
        bad_cam = CameraIntrinsics(70.0, 70.0, 5000.0, 5000.0)  # looks nowhere
        with pytest.raises(PlacementError):
            render_sample(model, params, bad_cam, (64, 64), seed=0)

    def test_strip_3d_drops_fields(self, centered):
        ws = strip_3d(centered)
        assert not ws.has_3d
        assert ws.params is None and ws.vertices is None and ws.joints is None
        np.testing.assert_array_equal(ws.image, centered.image)


class TestMakeSample:
    def test_deterministic_by_index(self, model):
        cfg = GenDataConfig(seed=5, count=4)
        a = make_sample(model, cfg, 2)
        b = make_sample(model, cfg, 2)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.vertices, b.vertices)

    def test_indices_independent(self, model):
        cfg = GenDataConfig(seed=5, count=4)
        a = make_sample(model, cfg, 0)
        b = make_sample(model, cfg, 1)
        assert np.abs(a.image - b.image).max() > 0.0

    def test_ws_fraction_strips_leading_indices(self, model):
        cfg = GenDataConfig(seed=5, count=4, ws_fraction=0.5)
        assert not make_sample(model, cfg, 0).has_3d
        assert not make_sample(model, cfg, 1).has_3d
        assert make_sample(model, cfg, 2).has_3d
        assert make_sample(model, cfg, 3).has_3d

    def test_bbox_coverage_band(self, model):
        cfg = GenDataConfig(seed=9, count=80)
        cover = []
        for i in range(80):
            s = make_sample(model, cfg, i)
            px = project(s.vertices if s.has_3d else None, s.cam)
            lo, hi = px.min(axis=0), px.max(axis=0)
            cover.append((hi[0] - lo[0]) * (hi[1] - lo[1]) / (64.0 * 64.0))
        assert 0.5 <= float(np.mean(cover)) <= 0.95

    def test_keypoint_reprojection_across_samples(self, model):
        cfg = GenDataConfig(seed=13, count=12)
        for i in range(12):
            s = make_sample(model, cfg, i)
            px = project(model.joint_regressor @ s.vertices, s.cam)
            err = np.linalg.norm(px - s.keypoints, axis=-1)
            assert err[s.confidence == 1.0].max() <= 0.5


@pytest.fixture(scope="module")
def dataset(model, tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    cfg = GenDataConfig(seed=21, count=6, ws_fraction=0.5)
    manifest = generate_dataset(model, cfg, out)
    return out, cfg, manifest


class TestPersistence:
    def test_manifest_fields(self, dataset):
        out, cfg, manifest = dataset
        assert manifest["count"] == 6
        assert manifest["split"] == "train"
        offs = manifest["offsets"]
        assert len(offs) == 6 and offs == sorted(offs) and offs[0] == 0
        assert load_manifest(out) == manifest

    def test_round_trip_bit_exact(self, dataset, model):
        out, cfg, manifest = dataset
        for i in range(6):
            direct = make_sample(model, cfg, i)
            loaded = load_sample(out, manifest, i)
            np.testing.assert_array_equal(loaded.image, direct.image)
            np.testing.assert_array_equal(loaded.keypoints, direct.keypoints)
            np.testing.assert_array_equal(loaded.confidence, direct.confidence)
            np.testing.assert_array_equal(loaded.part_map, direct.part_map)
            assert loaded.has_3d == direct.has_3d
            assert loaded.cam == direct.cam
            if direct.has_3d:
                np.testing.assert_array_equal(loaded.vertices, direct.vertices)
                np.testing.assert_array_equal(loaded.joints, direct.joints)
                np.testing.assert_array_equal(loaded.params.theta, direct.params.theta)
                np.testing.assert_array_equal(loaded.params.rot6d, direct.params.rot6d)
            else:
                assert loaded.params is None and loaded.vertices is None

    def test_out_of_range_raises(self, dataset):
        out, _, manifest = dataset
        with pytest.raises(IndexError):
            load_sample(out, manifest, 6)
        with pytest.raises(IndexError):
            load_sample(out, manifest, -1)

    def test_checksum_flip_detected(self, dataset):
        import shutil

        from markerbody.tensorio import CorruptRecordError

        out, _, manifest = dataset
        broken = out / "broken"
        broken.mkdir(exist_ok=True)
        shutil.copy(out / synth.MANIFEST_NAME, broken / synth.MANIFEST_NAME)
        blob = bytearray((out / synth.BLOB_NAME).read_bytes())
        blob[manifest["offsets"][2] + 40] ^= 0xFF
        (broken / synth.BLOB_NAME).write_bytes(bytes(blob))
        with pytest.raises(CorruptRecordError):
            load_sample(broken, manifest, 2)
        # other records unharmed
        load_sample(broken, manifest, 1)

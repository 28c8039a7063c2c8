"""Tensor container, OBJ, and record framing round trips."""

import io
import struct

import numpy as np
import pytest

from markerbody import tensorio as tio
from markerbody.body import build_standin_body


@pytest.fixture(scope="module")
def body():
    model, _ = build_standin_body()
    return model


class TestTensorContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "a.weight": rng.normal(size=(4, 7)),
            "a.bias": rng.normal(size=(7,)),
            "scalar": np.array(3.5),
        }
        p = tmp_path / "t.tensors"
        tio.save_tensors(p, tensors)
        back = tio.load_tensors(p)
        assert set(back) == set(tensors)
        for k in tensors:
            np.testing.assert_array_equal(back[k], tensors[k])

    def test_deterministic_bytes_regardless_of_insert_order(self):
        a = np.arange(6.0).reshape(2, 3)
        b = np.ones(4)
        assert tio.pack_tensors({"x": a, "y": b}) == tio.pack_tensors({"y": b, "x": a})

    def test_header_layout(self):
        blob = tio.pack_tensors({"w": np.zeros((2,))})
        assert blob[:4] == b"THND"
        assert struct.unpack_from("<I", blob, 4)[0] == 1
        assert struct.unpack_from("<I", blob, 8)[0] == 1  # name length
        assert blob[12:13] == b"w"
        assert struct.unpack_from("<I", blob, 13)[0] == 1  # rank
        assert struct.unpack_from("<Q", blob, 17)[0] == 2  # dim

    def test_bad_magic_rejected(self):
        with pytest.raises(tio.CheckpointFormatError, match="magic"):
            tio.unpack_tensors(b"NOPE" + b"\x00" * 16)

    def test_truncation_rejected(self):
        blob = tio.pack_tensors({"w": np.zeros((3, 3))})
        with pytest.raises(tio.CheckpointFormatError):
            tio.unpack_tensors(blob[:-4])

    def test_shape_validation(self, tmp_path):
        p = tmp_path / "c.tensors"
        tio.save_tensors(p, {"w": np.zeros((2, 3)), "opt.step": np.array(5.0)})
        ok = tio.load_checkpoint(p, {"w": (2, 3)})
        assert "opt.step" in ok  # extras ride along
        with pytest.raises(tio.CheckpointShapeError, match="w"):
            tio.load_checkpoint(p, {"w": (3, 2)})
        with pytest.raises(tio.CheckpointShapeError, match="missing"):
            tio.load_checkpoint(p, {"w": (2, 3), "v": (1,)})


class TestObj:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        verts = rng.normal(size=(20, 3))
        tris = rng.integers(0, 20, size=(9, 3))
        p = tmp_path / "m.obj"
        tio.write_obj(p, verts, tris)
        v2, t2 = tio.read_obj(p)
        np.testing.assert_array_equal(v2, verts)
        np.testing.assert_array_equal(t2, tris)


class TestBodyPersistence:
    def test_round_trip(self, tmp_path, body):
        d = tmp_path / "body"
        tio.save_body(d, body)
        back = tio.load_body(d)
        np.testing.assert_array_equal(back.template, body.template)
        np.testing.assert_array_equal(back.triangles, body.triangles)
        np.testing.assert_array_equal(back.blendshapes, body.blendshapes)
        np.testing.assert_array_equal(back.joint_regressor, body.joint_regressor)
        np.testing.assert_array_equal(back.skin_weights, body.skin_weights)
        np.testing.assert_array_equal(back.part_labels, body.part_labels)
        np.testing.assert_array_equal(back.parents, body.parents)
        assert back.joint_names == body.joint_names
        assert back.part_names == body.part_names
        assert back.theta_scale == body.theta_scale
        assert back.part_labels.dtype.kind == "i"


class TestRecordFraming:
    def test_round_trip(self):
        payload = b"hello records" * 10
        framed = tio.frame_record(payload)
        fh = io.BytesIO(b"junk" + framed)
        assert tio.read_record(fh, 4) == payload

    def test_crc_flip_detected(self):
        framed = bytearray(tio.frame_record(b"abcdef"))
        framed[-1] ^= 0x01
        with pytest.raises(tio.CorruptRecordError, match="checksum"):
            tio.read_record(io.BytesIO(bytes(framed)), 0)

    def test_truncation_detected(self):
        framed = tio.frame_record(b"abcdef")
        with pytest.raises(tio.CorruptRecordError, match="truncated"):
            tio.read_record(io.BytesIO(framed[:-2]), 0)

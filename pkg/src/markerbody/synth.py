"""Synthetic corpus: posed bodies rendered part-colored over random backgrounds.

Every sample is generated pre-cropped. A virtual full-frame camera observes
the scene; a square crop around the projected body produces the crop
intrinsics, so the intrinsics-adaptation path is exercised by construction.
Keypoints are the projected regressed joints, with confidence 1.0 when the
joint passes a z-buffer visibility test and 0.3 when occluded. Weakly
supervised samples structurally drop the 3d fields.
"""

import copy
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensorio
from .body import (
    N_PARTS,
    BodyModel,
    BodyParams,
    pose_mesh,
    regress_joints,
)
from .camera import CameraIntrinsics, CropSpec, adapt_intrinsics_to_crop, project
from .config import GenDataConfig
from .markers import sample_params
from .rasterizer import part_map_onehot, rasterize_hard

# distinct flat-shade color per body part, rows in part order
PART_COLORS = np.array(
    [
        [0.90, 0.60, 0.50],  # head
        [0.20, 0.35, 0.80],  # torso
        [0.55, 0.30, 0.65],  # pelvis
        [0.95, 0.80, 0.25],  # l_upper_arm
        [0.80, 0.55, 0.15],  # l_forearm
        [0.95, 0.40, 0.20],  # l_hand
        [0.35, 0.80, 0.90],  # r_upper_arm
        [0.20, 0.60, 0.70],  # r_forearm
        [0.25, 0.85, 0.60],  # r_hand
        [0.70, 0.90, 0.30],  # l_thigh
        [0.45, 0.70, 0.20],  # l_shin
        [0.30, 0.50, 0.10],  # l_foot
        [0.90, 0.30, 0.55],  # r_thigh
        [0.70, 0.15, 0.40],  # r_shin
        [0.50, 0.10, 0.25],  # r_foot
    ]
)

OCCLUDED_CONFIDENCE = 0.3
JOINT_DEPTH_SLACK = 0.15  # joints sit inside the body, under the front surface
MIN_VERTEX_Z = 0.3
BBOX_OVERLAP_MIN = 0.7
PLACEMENT_ATTEMPTS = 100
BACKGROUND_NOISE = 0.02


class PlacementError(RuntimeError):
    pass


@dataclass
class SyntheticSample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    cam: CameraIntrinsics  # crop intrinsics
    keypoints: np.ndarray  # (J, 2) pixels
    confidence: np.ndarray  # (J,) 1.0 visible, 0.3 occluded
    part_map: np.ndarray  # (H, W, N_PARTS) one-hot, all-zero background
    has_3d: bool
    params: BodyParams | None = None
    vertices: np.ndarray | None = None
    joints: np.ndarray | None = None


def _bbox_overlap(px: np.ndarray, image_size: tuple) -> float:
    """Fraction of the projected bounding box inside the image rectangle."""
    lo, hi = px.min(axis=0), px.max(axis=0)
    area = (hi[0] - lo[0]) * (hi[1] - lo[1])
    if area <= 0.0:
        return 0.0
    ix = max(0.0, min(hi[0], float(image_size[0])) - max(lo[0], 0.0))
    iy = max(0.0, min(hi[1], float(image_size[1])) - max(lo[1], 0.0))
    return ix * iy / area


def render_sample(
    model: BodyModel,
    params: BodyParams,
    cam: CameraIntrinsics,
    image_size: tuple,
    seed,
    depth_band: tuple = (1.0, 8.0),
) -> SyntheticSample:
    """Flat-shaded part-colored render with keypoints and a hard part map.

    If the body is not visible enough (projected bbox overlapping the image
    below 70%, or vertices too close to the camera), the translation is
    resampled from ``depth_band`` up to 100 times before giving up.
    """
    rng = np.random.default_rng(seed)
    params = copy.deepcopy(params)
    verts = None
    for _ in range(PLACEMENT_ATTEMPTS):
        cand = pose_mesh(model, params)
        if cand[:, 2].min() >= MIN_VERTEX_Z:
            if _bbox_overlap(project(cand, cam), image_size) >= BBOX_OVERLAP_MIN:
                verts = cand
                break
        z = rng.uniform(depth_band[0], depth_band[1])
        xy = rng.uniform(-0.25, 0.25, size=2) * z
        params.trans = np.array([xy[0], xy[1], z])
    if verts is None:
        raise PlacementError(
            f"no visible placement after {PLACEMENT_ATTEMPTS} translation resamples"
        )

    px = project(verts, cam)
    label, depth = rasterize_hard(
        px, verts[:, 2], model.triangles, model.triangle_parts(), image_size
    )
    part_map = part_map_onehot(label, N_PARTS)

    w_img, h_img = int(image_size[0]), int(image_size[1])
    image = rng.uniform(0.0, 1.0, size=3) + rng.normal(
        0.0, BACKGROUND_NOISE, size=(h_img, w_img, 3)
    )
    fg = label > 0
    image[fg] = PART_COLORS[label[fg] - 1]
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    joints = regress_joints(model, verts)
    keypoints = project(joints, cam)
    confidence = np.full(len(joints), OCCLUDED_CONFIDENCE)
    ji = np.floor(keypoints).astype(np.int64)
    inside = (
        (ji[:, 0] >= 0) & (ji[:, 0] < w_img) & (ji[:, 1] >= 0) & (ji[:, 1] < h_img)
    )
    vis = inside.copy()
    vis[inside] = joints[inside, 2] <= (
        depth[ji[inside, 1], ji[inside, 0]] + JOINT_DEPTH_SLACK
    )
    confidence[vis] = 1.0

    return SyntheticSample(
        image=image,
        cam=cam,
        keypoints=keypoints,
        confidence=confidence,
        part_map=part_map,
        has_3d=True,
        params=params,
        vertices=verts,
        joints=joints,
    )


def strip_3d(sample: SyntheticSample) -> SyntheticSample:
    """Weak-supervision view of a sample: 2d annotations only."""
    return SyntheticSample(
        image=sample.image,
        cam=sample.cam,
        keypoints=sample.keypoints,
        confidence=sample.confidence,
        part_map=sample.part_map,
        has_3d=False,
    )


def _crop_around(px: np.ndarray, frame_size: int, out_size: int,
                 rng: np.random.Generator) -> CropSpec:
    """Square crop covering the projected body with a jittered margin."""
    lo, hi = px.min(axis=0), px.max(axis=0)
    side = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    side = side * rng.uniform(1.05, 1.25)
    center = 0.5 * (lo + hi) + rng.uniform(-0.03, 0.03, size=2) * side
    x0 = float(np.clip(center[0] - side / 2, -0.25 * side, frame_size - 0.75 * side))
    y0 = float(np.clip(center[1] - side / 2, -0.25 * side, frame_size - 0.75 * side))
    return CropSpec(x0=x0, y0=y0, size=side, out_size=out_size)


def _sample_seed(seed: int, index: int):
    return [np.uint32(seed), np.uint32(index)]


def make_sample(model: BodyModel, config: GenDataConfig, index: int) -> SyntheticSample:
    """Sample number ``index`` of the dataset described by ``config``.

    A pure function of (config, index): placement, crop, and render noise
    all come from an index-keyed RNG stream.
    """
    rng = np.random.default_rng(_sample_seed(config.seed, index))
    frame_cam = CameraIntrinsics(
        fx=config.frame_focal,
        fy=config.frame_focal,
        cx=config.frame_size / 2.0,
        cy=config.frame_size / 2.0,
    )
    band = (config.depth_min, config.depth_max)
    params = sample_params(rng, 1, depth_band=band)
    params = BodyParams(
        theta=params.theta[0], beta=params.beta[0],
        rot6d=params.rot6d[0], trans=params.trans[0],
    )
    verts = pose_mesh(model, params)
    crop = _crop_around(project(verts, frame_cam), config.frame_size,
                        config.image_size, rng)
    cam = adapt_intrinsics_to_crop(frame_cam, crop)
    sample = render_sample(
        model, params, cam, (config.image_size, config.image_size), rng,
        depth_band=band,
    )
    n_ws = int(round(config.ws_fraction * config.count))
    if index < n_ws:
        sample = strip_3d(sample)
    return sample


# -- persistence --------------------------------------------------------------------

MANIFEST_NAME = "dataset.json"
BLOB_NAME = "dataset.blob"


def _sample_tensors(sample: SyntheticSample) -> dict:
    # label 0 = background, part + 1 elsewhere (one-hot rows sum to 0 or 1)
    label = np.argmax(sample.part_map, axis=-1) + sample.part_map.sum(axis=-1)
    out = {
        "cam": sample.cam.as_array(),
        "keypoints": np.asarray(sample.keypoints, dtype=np.float64),
        "confidence": np.asarray(sample.confidence, dtype=np.float64),
        "part_label": label.astype(np.float64),
        "has_3d": np.array(1.0 if sample.has_3d else 0.0),
    }
    if sample.has_3d:
        out["params.theta"] = np.asarray(sample.params.theta, dtype=np.float64)
        out["params.beta"] = np.asarray(sample.params.beta, dtype=np.float64)
        out["params.rot6d"] = np.asarray(sample.params.rot6d, dtype=np.float64)
        out["params.trans"] = np.asarray(sample.params.trans, dtype=np.float64)
        out["vertices"] = np.asarray(sample.vertices, dtype=np.float64)
        out["joints"] = np.asarray(sample.joints, dtype=np.float64)
    return out


def encode_sample(sample: SyntheticSample) -> bytes:
    """One CRC-framed record: image as raw f32 plus a tensor block."""
    h, w, _ = sample.image.shape
    img = np.ascontiguousarray(sample.image, dtype="<f4").tobytes()
    tens = tensorio.pack_tensors(_sample_tensors(sample))
    payload = struct.pack("<III", h, w, len(img)) + img + tens
    return tensorio.frame_record(payload)


def decode_sample(payload: bytes) -> SyntheticSample:
    h, w, img_len = struct.unpack_from("<III", payload, 0)
    img = np.frombuffer(payload, dtype="<f4", count=h * w * 3, offset=12)
    image = img.reshape(h, w, 3).copy()
    tens = tensorio.unpack_tensors(payload[12 + img_len:])
    label = tens["part_label"].astype(np.int64)
    has_3d = bool(tens["has_3d"])
    params = vertices = joints = None
    if has_3d:
        params = BodyParams(
            theta=tens["params.theta"], beta=tens["params.beta"],
            rot6d=tens["params.rot6d"], trans=tens["params.trans"],
        )
        vertices = tens["vertices"]
        joints = tens["joints"]
    return SyntheticSample(
        image=image,
        cam=CameraIntrinsics(*tens["cam"]),
        keypoints=tens["keypoints"],
        confidence=tens["confidence"],
        part_map=part_map_onehot(label, N_PARTS),
        has_3d=has_3d,
        params=params,
        vertices=vertices,
        joints=joints,
    )


def generate_dataset(model: BodyModel, config: GenDataConfig, out_dir) -> dict:
    """Write the blob + manifest for ``config``; returns the manifest dict."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    offsets = []
    with open(out / BLOB_NAME, "wb") as fh:
        for index in range(config.count):
            offsets.append(fh.tell())
            fh.write(encode_sample(make_sample(model, config, index)))
    manifest = {
        "count": config.count,
        "image_size": config.image_size,
        "seed": config.seed,
        "split": config.split,
        "ws_fraction": config.ws_fraction,
        "offsets": offsets,
    }
    with open(out / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(dataset_dir) -> dict:
    from pathlib import Path

    with open(Path(dataset_dir) / MANIFEST_NAME) as fh:
        return json.load(fh)


def load_sample(dataset_dir, manifest: dict, index: int) -> SyntheticSample:
    """Read one record back; checksum mismatches raise CorruptRecordError."""
    from pathlib import Path

    if not 0 <= index < manifest["count"]:
        raise IndexError(f"sample index {index} out of range [0, {manifest['count']})")
    with open(Path(dataset_dir) / BLOB_NAME, "rb") as fh:
        payload = tensorio.read_record(fh, manifest["offsets"][index])
    return decode_sample(payload)

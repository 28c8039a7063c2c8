"""Binary tensor container and mesh/body persistence.

The weight container starts with the magic bytes ``THND`` and a u32 format
version, followed by one record per tensor: u32 name length, UTF-8 name,
u32 rank, rank u64 dims, then the float64 payload. All integers and floats
are little-endian. Writers emit names in sorted order so identical contents
produce identical bytes.
"""

import json
import os
import struct
import zlib

import numpy as np

from .body import BodyModel

MAGIC = b"THND"
FORMAT_VERSION = 1


class CheckpointFormatError(Exception):
    """Raised when a tensor file is malformed or truncated."""


class CheckpointShapeError(Exception):
    """Raised when loaded tensors do not match the expected shapes."""


def pack_tensors(tensors: dict) -> bytes:
    """Serialize {name: ndarray} to the container byte string."""
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack("<" + "Q" * arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def unpack_tensors(blob: bytes) -> dict:
    """Inverse of :func:`pack_tensors`."""
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {version}")
    pos = 8
    tensors = {}
    total = len(blob)
    while pos < total:
        try:
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from("<" + "Q" * rank, blob, pos)
            pos += 8 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            end = pos + 8 * count
            if end > total:
                raise struct.error("payload past end of file")
            arr = np.frombuffer(blob[pos:end], dtype="<f8").reshape(shape).copy()
            pos = end
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointFormatError(f"truncated or corrupt record at byte {pos}: {exc}") from exc
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor name {name!r}")
        tensors[name] = arr
    return tensors


def save_tensors(path, tensors: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(pack_tensors(tensors))


def load_tensors(path) -> dict:
    with open(path, "rb") as fh:
        return unpack_tensors(fh.read())


def load_checkpoint(path, expected_shapes: dict) -> dict:
    """Load and validate against {name: shape tuple}.

    Extra tensors whose names are not in ``expected_shapes`` are returned
    untouched (optimizer state rides along under its own names).
    """
    tensors = load_tensors(path)
    problems = []
    for name, shape in expected_shapes.items():
        if name not in tensors:
            problems.append(f"missing {name} {tuple(shape)}")
        elif tensors[name].shape != tuple(shape):
            problems.append(f"{name}: file has {tensors[name].shape}, model needs {tuple(shape)}")
    if problems:
        raise CheckpointShapeError("; ".join(problems))
    return tensors


# -- OBJ mesh + body sidecar ------------------------------------------------------


def write_obj(path, vertices: np.ndarray, triangles: np.ndarray) -> None:
    """Minimal OBJ writer; %.17g keeps float64 round trips exact."""
    lines = []
    for v in np.asarray(vertices, dtype=np.float64):
        lines.append("v %.17g %.17g %.17g" % (v[0], v[1], v[2]))
    for t in np.asarray(triangles, dtype=np.int64):
        lines.append("f %d %d %d" % (t[0] + 1, t[1] + 1, t[2] + 1))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path):
    verts, tris = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                # keep only the vertex index of each corner token
                tris.append([int(tok.split("/")[0]) - 1 for tok in parts[1:4]])
    return np.array(verts, dtype=np.float64), np.array(tris, dtype=np.int64)


BODY_JSON = "body.json"
BODY_OBJ = "body.obj"
BODY_TENSORS = "body.tensors"


def save_body(directory, model: BodyModel) -> str:
    """Persist a body model as OBJ + sidecar JSON + tensor container.

    Returns the path of the sidecar JSON, which references the other files.
    """
    os.makedirs(directory, exist_ok=True)
    write_obj(os.path.join(directory, BODY_OBJ), model.template, model.triangles)
    save_tensors(
        os.path.join(directory, BODY_TENSORS),
        {
            "blendshapes": model.blendshapes,
            "joint_regressor": model.joint_regressor,
            "skin_weights": model.skin_weights,
            "part_labels": model.part_labels.astype(np.float64),
        },
    )
    sidecar = {
        "obj": BODY_OBJ,
        "tensors": BODY_TENSORS,
        "parents": [int(p) for p in model.parents],
        "joint_names": list(model.joint_names),
        "part_names": list(model.part_names),
        "theta_scale": model.theta_scale,
        "n_vertices": int(model.n_vertices),
        "n_triangles": int(len(model.triangles)),
    }
    path = os.path.join(directory, BODY_JSON)
    with open(path, "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_body(directory) -> BodyModel:
    with open(os.path.join(directory, BODY_JSON)) as fh:
        sidecar = json.load(fh)
    template, triangles = read_obj(os.path.join(directory, sidecar["obj"]))
    tensors = load_tensors(os.path.join(directory, sidecar["tensors"]))
    if template.shape[0] != sidecar["n_vertices"]:
        raise CheckpointFormatError(
            f"obj has {template.shape[0]} vertices, sidecar says {sidecar['n_vertices']}"
        )
    return BodyModel(
        template=template,
        triangles=triangles,
        blendshapes=tensors["blendshapes"],
        joint_regressor=tensors["joint_regressor"],
        skin_weights=tensors["skin_weights"],
        parents=np.array(sidecar["parents"], dtype=np.int64),
        joint_names=list(sidecar["joint_names"]),
        part_labels=tensors["part_labels"].astype(np.int64),
        part_names=list(sidecar["part_names"]),
        theta_scale=float(sidecar["theta_scale"]),
    )


# -- length + checksum framing for record streams ---------------------------------


class CorruptRecordError(Exception):
    """Raised when a framed record fails its CRC32 check."""


def frame_record(payload: bytes) -> bytes:
    """u64 length + u32 crc32 + payload."""
    return struct.pack("<QI", len(payload), zlib.crc32(payload)) + payload


def read_record(fh, offset: int) -> bytes:
    fh.seek(offset)
    head = fh.read(12)
    if len(head) != 12:
        raise CorruptRecordError(f"truncated record header at offset {offset}")
    length, crc = struct.unpack("<QI", head)
    payload = fh.read(length)
    if len(payload) != length:
        raise CorruptRecordError(f"truncated record payload at offset {offset}")
    if zlib.crc32(payload) != crc:
        raise CorruptRecordError(f"checksum mismatch at offset {offset}")
    return payload

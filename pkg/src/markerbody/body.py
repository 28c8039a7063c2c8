"""Procedural stand-in parametric body: capsule humanoid with linear blend skinning.

The model is a light-weight analogue of a statistical body model: a template
mesh (~1000 vertices), 8 linear blendshapes driven by ``beta``, a 16-joint
kinematic tree posed by per-joint 6d rotation residuals ``theta`` plus a
global 6d rotation and translation, skinned with at most 4 weights per
vertex, and a convex joint regressor so joints can be recovered from any
posed mesh. Every vertex carries one of 15 body part labels.

Frame convention matches the camera (x right, y down, z forward): the
template stands upright in image space, head toward -y, facing the camera
(front of the body toward -z), pelvis at the origin.

Posing is differentiable end-to-end: all functions accept plain ndarrays or
autodiff Tensors and support an optional leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .camera import CameraIntrinsics, project

N_JOINTS = 16
N_SHAPE = 8
N_POSE = 6 * (N_JOINTS - 1)  # 90: per-joint 6d residuals, root handled separately
ROT6D_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

JOINT_NAMES = [
    "pelvis", "spine", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
]
PARENTS = np.array([-1, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14])

PART_NAMES = [
    "head", "torso", "pelvis",
    "l_upper_arm", "l_forearm", "l_hand",
    "r_upper_arm", "r_forearm", "r_hand",
    "l_thigh", "l_shin", "l_foot",
    "r_thigh", "r_shin", "r_foot",
]
N_PARTS = 15


class DegenerateRotationError(ValueError):
    pass


@dataclass
class BodyParams:
    """Pose/shape/placement parameters; fields may be ndarrays or Tensors.

    theta: (90,) or (B, 90) per-joint 6d residuals, scaled by model.theta_scale
    beta:  (8,)  or (B, 8) blendshape coefficients
    rot6d: (6,)  or (B, 6) global rotation (6d representation)
    trans: (3,)  or (B, 3) global translation in meters
    """

    theta: object
    beta: object
    rot6d: object
    trans: object

    @staticmethod
    def default() -> "BodyParams":
        return BodyParams(
            theta=np.zeros(N_POSE),
            beta=np.zeros(N_SHAPE),
            rot6d=ROT6D_IDENTITY.copy(),
            trans=np.zeros(3),
        )


@dataclass
class BodyModel:
    template: np.ndarray  # (Nv, 3)
    triangles: np.ndarray  # (Nt, 3) int
    blendshapes: np.ndarray  # (8, Nv, 3)
    joint_regressor: np.ndarray  # (16, Nv) convex rows
    skin_weights: np.ndarray  # (Nv, 16) convex rows, <= 4 nonzeros
    parents: np.ndarray = field(default_factory=lambda: PARENTS.copy())
    joint_names: list = field(default_factory=lambda: list(JOINT_NAMES))
    part_labels: np.ndarray = None  # (Nv,) int in [0, 15)
    part_names: list = field(default_factory=lambda: list(PART_NAMES))
    theta_scale: float = 0.3

    @property
    def n_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def rest_joints(self) -> np.ndarray:
        return self.joint_regressor @ self.template

    def triangle_parts(self) -> np.ndarray:
        """Part label per triangle (vertices of a triangle share one part)."""
        return self.part_labels[self.triangles[:, 0]]


# -- rotations ------------------------------------------------------------------


def rot6d_to_matrix(r6, eps: float = 1e-8):
    """Map a (..., 6) continuous rotation representation to (..., 3, 3).

    The first three entries give the first column after normalization, the
    second triple is orthogonalized against it, and the third column is the
    cross product. Near-zero or near-parallel inputs raise
    :class:`DegenerateRotationError`.
    """
    vals = ad.values_of(r6)
    if vals.shape[-1] != 6:
        raise ad.ShapeError("rot6d_to_matrix", vals.shape, ("...", 6))
    a = r6[..., 0:3]
    b = r6[..., 3:6]

    a_norm2 = ad.tsum(a * a, axis=-1, keepdims=True)
    if np.any(ad.values_of(a_norm2) < eps * eps):
        raise DegenerateRotationError("rot6d: first vector has near-zero norm")
    c1 = a / ad.sqrt(a_norm2)
    dot = ad.tsum(c1 * b, axis=-1, keepdims=True)
    u = b - dot * c1
    u_norm2 = ad.tsum(u * u, axis=-1, keepdims=True)
    if np.any(ad.values_of(u_norm2) < eps * eps):
        raise DegenerateRotationError("rot6d: second vector is parallel to the first")
    c2 = u / ad.sqrt(u_norm2)
    c3 = _cross(c1, c2)
    return ad.stack([c1, c2, c3], axis=-1)  # columns


def _cross(p, q):
    px, py, pz = p[..., 0], p[..., 1], p[..., 2]
    qx, qy, qz = q[..., 0], q[..., 1], q[..., 2]
    return ad.stack([py * qz - pz * qy, pz * qx - px * qz, px * qy - py * qx], axis=-1)


def matrix_to_rot6d(rot: np.ndarray) -> np.ndarray:
    """First two columns of a rotation matrix, flattened (..., 6)."""
    rot = np.asarray(rot, dtype=np.float64)
    return np.concatenate([rot[..., :, 0], rot[..., :, 1]], axis=-1)


# -- posing ----------------------------------------------------------------------


def shape_template(model: BodyModel, beta):
    """Template plus the linear blendshape offsets: (..., Nv, 3)."""
    batched = getattr(beta, "ndim", 1) == 2
    b2 = beta if batched else ad.reshape(beta, (1, N_SHAPE)) if ad.is_tensor(beta) else np.asarray(beta)[None]
    nv = model.n_vertices
    offsets = ad.matmul(b2, model.blendshapes.reshape(N_SHAPE, nv * 3))
    shaped = ad.reshape(offsets, (b2.shape[0], nv, 3)) + model.template
    if not batched:
        shaped = ad.reshape(shaped, (nv, 3))
    return shaped


def _joint_rotations(model: BodyModel, theta, rot6d):
    """Per-joint world-relative rotation matrices (B, 16, 3, 3)."""
    b = theta.shape[0]
    theta6 = ad.reshape(theta, (b, N_JOINTS - 1, 6))
    local6 = theta6 * model.theta_scale + ROT6D_IDENTITY
    body_rots = rot6d_to_matrix(local6)  # (B, 15, 3, 3)
    root_rot = ad.reshape(rot6d_to_matrix(rot6d), (b, 1, 3, 3))
    return ad.concat([root_rot, body_rots], axis=1)


def pose_mesh(model: BodyModel, params: BodyParams):
    """Pose the body: blendshapes, forward kinematics, skinning, translation.

    Accepts unbatched parameters (shapes (90,), (8,), (6,), (3,)) or batched
    ones with a shared leading axis. Returns (Nv, 3) or (B, Nv, 3).
    """
    batched = getattr(params.theta, "ndim", 1) == 2

    def lift(x, d):
        if batched:
            return x
        return ad.reshape(x, (1, d)) if ad.is_tensor(x) else np.asarray(x, dtype=np.float64)[None]

    theta = lift(params.theta, N_POSE)
    beta = lift(params.beta, N_SHAPE)
    rot6d = lift(params.rot6d, 6)
    trans = lift(params.trans, 3)

    shaped = shape_template(model, beta if batched else params.beta)
    if not batched:
        shaped = ad.reshape(shaped, (1,) + tuple(shaped.shape))
    rest_j = ad.matmul(model.joint_regressor, shaped)  # (B, 16, 3)

    rots = _joint_rotations(model, theta, rot6d)  # (B, 16, 3, 3)
    world_rot = [rots[:, 0]]
    world_pos = [rest_j[:, 0]]
    for j in range(1, N_JOINTS):
        p = int(model.parents[j])
        offset = rest_j[:, j] - rest_j[:, p]  # (B, 3)
        wr = ad.matmul(world_rot[p], rots[:, j])
        wp = world_pos[p] + ad.reshape(
            ad.matmul(world_rot[p], ad.reshape(offset, (-1, 3, 1))), (-1, 3)
        )
        world_rot.append(wr)
        world_pos.append(wp)
    wrot = ad.stack(world_rot, axis=1)  # (B, 16, 3, 3)
    wpos = ad.stack(world_pos, axis=1)  # (B, 16, 3)

    # skinning transforms: x -> R (x - j_rest) + p
    shift = wpos - ad.reshape(
        ad.matmul(wrot, ad.reshape(rest_j, (-1, N_JOINTS, 3, 1))), (-1, N_JOINTS, 3)
    )
    flat = ad.concat(
        [ad.reshape(wrot, (-1, N_JOINTS, 9)), ad.reshape(shift, (-1, N_JOINTS, 3))], axis=2
    )  # (B, 16, 12)
    blended = ad.matmul(model.skin_weights, flat)  # (B, Nv, 12)
    rot_v = ad.reshape(blended[:, :, 0:9], (-1, model.n_vertices, 3, 3))
    t_v = blended[:, :, 9:12]
    posed = (
        ad.reshape(ad.matmul(rot_v, ad.reshape(shaped, (-1, model.n_vertices, 3, 1))),
                   (-1, model.n_vertices, 3))
        + t_v
    )
    posed = posed + ad.reshape(trans, (-1, 1, 3))
    if not batched:
        posed = ad.reshape(posed, (model.n_vertices, 3))
    return posed


def regress_joints(model: BodyModel, verts):
    """Joint locations as convex combinations of mesh vertices."""
    return ad.matmul(model.joint_regressor, verts)


# -- optimal center translation ----------------------------------------------------


def optimal_center_translation(
    model: BodyModel,
    cam: CameraIntrinsics,
    image_size: tuple,
    height_fraction: float = 0.9,
) -> np.ndarray:
    """Translation placing the default-posed body centered in the image.

    Solves for t such that the projected mesh centroid lands on the image
    center with the projected height covering ``height_fraction`` of the
    image. The closed-form pinhole solve (depth from similar triangles,
    x/y by back-projecting the center) is followed by fixed-point
    corrections that absorb perspective spread, so the solved depth scales
    with the focal length only up to that spread (a couple of percent at
    body-filling distances).
    """
    w_img, h_img = float(image_size[0]), float(image_size[1])
    verts = pose_mesh(model, BodyParams.default())
    height = float(verts[:, 1].max() - verts[:, 1].min())
    if height <= 1e-9:
        raise ValueError("optimal_center_translation: mesh has zero height")
    z0 = cam.fy * height / (height_fraction * h_img)
    centroid = verts.mean(axis=0)
    t = np.array(
        [
            (0.5 * w_img - cam.cx) * z0 / cam.fx - centroid[0],
            (0.5 * h_img - cam.cy) * z0 / cam.fy - centroid[1],
            z0 - centroid[2],
        ]
    )
    for _ in range(3):
        px = project(verts + t, cam)
        lo, hi = px.min(axis=0), px.max(axis=0)
        z = centroid[2] + t[2]
        t[2] = z * ((hi[1] - lo[1]) / (height_fraction * h_img)) + (t[2] - z)
        z = centroid[2] + t[2]
        mid = project(verts + t, cam).mean(axis=0)
        t[0] += (0.5 * w_img - mid[0]) * z / cam.fx
        t[1] += (0.5 * h_img - mid[1]) * z / cam.fy
    return t


# -- procedural construction ----------------------------------------------------------


def _smoothstep(x):
    t = np.clip(x, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


class _MeshBuilder:
    def __init__(self):
        self.verts: list = []
        self.tris: list = []
        self.parts: list = []
        self.weights: list = []  # (vertex, {joint: w})
        self.anchors: dict[str, np.ndarray] = {}

    def add_vertex(self, p, part: int, jw: dict) -> int:
        self.verts.append(np.asarray(p, dtype=np.float64))
        self.parts.append(part)
        total = sum(jw.values())
        self.weights.append({j: w / total for j, w in jw.items() if w > 1e-9})
        return len(self.verts) - 1

    def add_tri(self, a: int, b: int, c: int):
        self.tris.append((a, b, c))

    def tube(
        self,
        p0,
        p1,
        r0: float,
        r1: float,
        rings: int,
        segs: int,
        part: int,
        joint_knots,  # list of (t, {joint: weight})
        rz_scale: float = 1.0,
        u_hint=(0.0, 0.0, -1.0),
        cap0: bool = False,
        cap1: bool = False,
        markers=None,  # list of (name, t, angle_deg, radial_scale)
    ):
        p0 = np.asarray(p0, dtype=np.float64)
        p1 = np.asarray(p1, dtype=np.float64)
        axis = p1 - p0
        n = axis / np.linalg.norm(axis)
        u = np.asarray(u_hint, dtype=np.float64)
        u = u - (u @ n) * n
        if np.linalg.norm(u) < 1e-6:
            u = np.array([1.0, 0.0, 0.0]) - n[0] * n
        u /= np.linalg.norm(u)
        v = np.cross(n, u)

        def weights_at(t: float) -> dict:
            ts = np.array([k[0] for k in joint_knots])
            joints = sorted({j for _, jw in joint_knots for j in jw})
            out = {}
            for j in joints:
                ys = np.array([jw.get(j, 0.0) for _, jw in joint_knots])
                w = float(np.interp(t, ts, ys))
                if w > 1e-9:
                    out[j] = w
            return out

        def surface_point(t: float, ang: float, rscale: float = 1.0) -> np.ndarray:
            c = p0 + t * axis
            r = (r0 + (r1 - r0) * t) * rscale
            return c + r * (np.cos(ang) * u + np.sin(ang) * v * rz_scale)

        ring_ids = []
        for i in range(rings):
            t = i / (rings - 1)
            jw = weights_at(t)
            row = []
            for k in range(segs):
                ang = 2.0 * np.pi * k / segs
                row.append(self.add_vertex(surface_point(t, ang), part, jw))
            ring_ids.append(row)
        for i in range(rings - 1):
            for k in range(segs):
                a, b = ring_ids[i][k], ring_ids[i][(k + 1) % segs]
                c, d = ring_ids[i + 1][k], ring_ids[i + 1][(k + 1) % segs]
                self.add_tri(a, b, c)
                self.add_tri(b, d, c)
        if cap0:
            cid = self.add_vertex(p0, part, weights_at(0.0))
            for k in range(segs):
                self.add_tri(ring_ids[0][(k + 1) % segs], ring_ids[0][k], cid)
        if cap1:
            cid = self.add_vertex(p1, part, weights_at(1.0))
            for k in range(segs):
                self.add_tri(ring_ids[-1][k], ring_ids[-1][(k + 1) % segs], cid)
        for name, t, ang_deg, rscale in markers or []:
            self.anchors[name] = surface_point(t, np.deg2rad(ang_deg), rscale)

    def ellipsoid(
        self,
        center,
        radii,
        lats: int,
        lons: int,
        part: int,
        jw: dict,
        markers=None,  # list of (name, unit_direction)
    ):
        center = np.asarray(center, dtype=np.float64)
        radii = np.asarray(radii, dtype=np.float64)
        top = self.add_vertex(center + radii * np.array([0.0, -1.0, 0.0]), part, jw)
        rows = []
        for i in range(1, lats + 1):
            phi = np.pi * i / (lats + 1)
            row = []
            for k in range(lons):
                lam = 2.0 * np.pi * k / lons
                d = np.array([np.sin(phi) * np.cos(lam), -np.cos(phi), np.sin(phi) * np.sin(lam)])
                row.append(self.add_vertex(center + radii * d, part, jw))
            rows.append(row)
        bottom = self.add_vertex(center + radii * np.array([0.0, 1.0, 0.0]), part, jw)
        for k in range(lons):
            self.add_tri(top, rows[0][k], rows[0][(k + 1) % lons])
        for i in range(lats - 1):
            for k in range(lons):
                a, b = rows[i][k], rows[i][(k + 1) % lons]
                c, d = rows[i + 1][k], rows[i + 1][(k + 1) % lons]
                self.add_tri(a, c, b)
                self.add_tri(b, c, d)
        for k in range(lons):
            self.add_tri(rows[-1][(k + 1) % lons], rows[-1][k], bottom)
        for name, direction in markers or []:
            d = np.asarray(direction, dtype=np.float64)
            d = d / np.linalg.norm(d)
            self.anchors[name] = center + radii * d


def _rest_skeleton() -> np.ndarray:
    j = np.zeros((N_JOINTS, 3))
    j[0] = (0.0, 0.0, 0.0)  # pelvis
    j[1] = (0.0, -0.18, 0.0)  # spine
    j[2] = (0.0, -0.46, 0.0)  # neck
    j[3] = (0.0, -0.56, 0.0)  # head
    j[4] = (+0.19, -0.42, 0.0)  # l_shoulder
    j[5] = (+0.46, -0.42, 0.0)  # l_elbow
    j[6] = (+0.71, -0.42, 0.0)  # l_wrist
    j[7] = (-0.19, -0.42, 0.0)  # r_shoulder
    j[8] = (-0.46, -0.42, 0.0)  # r_elbow
    j[9] = (-0.71, -0.42, 0.0)  # r_wrist
    j[10] = (+0.095, +0.04, 0.0)  # l_hip
    j[11] = (+0.10, +0.47, 0.0)  # l_knee
    j[12] = (+0.105, +0.88, 0.0)  # l_ankle
    j[13] = (-0.095, +0.04, 0.0)  # r_hip
    j[14] = (-0.10, +0.47, 0.0)  # r_knee
    j[15] = (-0.105, +0.88, 0.0)  # r_ankle
    return j


def _scaled(n: int, density: float) -> int:
    return max(3, int(round(n * density)))


def build_standin_body(density: float = 1.0) -> tuple:
    """Construct the stand-in body model and its marker anchor points.

    Returns ``(model, anchors)`` where ``anchors`` maps each of the 53 marker
    names to a 3d point near the template surface (the marker module snaps
    these onto the mesh). ``density`` scales tessellation; 1.0 gives roughly
    a thousand vertices.
    """
    J = _rest_skeleton()
    part = {name: i for i, name in enumerate(PART_NAMES)}
    jid = {name: i for i, name in enumerate(JOINT_NAMES)}
    mb = _MeshBuilder()

    # torso: pelvis-top up to the neck, elliptical cross-section
    mb.tube(
        (0.0, 0.02, 0.0), (0.0, -0.46, 0.0), 0.14, 0.155,
        rings=_scaled(11, density), segs=_scaled(16, density), part=part["torso"],
        joint_knots=[
            (0.0, {jid["pelvis"]: 0.75, jid["spine"]: 0.25}),
            (0.4, {jid["spine"]: 1.0}),
            (1.0, {jid["spine"]: 0.2, jid["neck"]: 0.8}),
        ],
        rz_scale=0.66, cap1=True,
        markers=[
            ("CLAV", 0.93, 0.0, 1.03), ("STRN", 0.62, 0.0, 1.03), ("NAVL", 0.12, 0.0, 1.03),
            ("C7", 0.97, 180.0, 1.03), ("T10", 0.55, 180.0, 1.03), ("BWT", 0.07, 180.0, 1.03),
            ("RBAK", 0.72, 215.0, 1.03),
            ("LSHO", 1.0, 55.0, 1.12), ("RSHO", 1.0, 125.0, 1.12),
        ],
    )
    # pelvis block
    mb.tube(
        (0.0, 0.19, 0.0), (0.0, 0.02, 0.0), 0.145, 0.142,
        rings=_scaled(5, density), segs=_scaled(14, density), part=part["pelvis"],
        joint_knots=[(0.0, {jid["pelvis"]: 1.0}), (1.0, {jid["pelvis"]: 0.9, jid["spine"]: 0.1})],
        rz_scale=0.66, cap0=True,
        markers=[
            ("LASI", 0.75, 33.0, 1.04), ("RASI", 0.75, 147.0, 1.04),
            ("LPSI", 0.85, 158.0, 1.04), ("RPSI", 0.85, 22.0, 1.04),
        ],
    )
    # neck stump
    mb.tube(
        (0.0, -0.46, 0.0), (0.0, -0.58, 0.0), 0.05, 0.046,
        rings=_scaled(3, density), segs=_scaled(10, density), part=part["torso"],
        joint_knots=[(0.0, {jid["neck"]: 1.0}), (1.0, {jid["neck"]: 0.4, jid["head"]: 0.6})],
    )
    # head
    mb.ellipsoid(
        (0.0, -0.68, 0.0), (0.085, 0.115, 0.095),
        lats=_scaled(8, density), lons=_scaled(12, density), part=part["head"],
        jw={jid["head"]: 1.0},
        markers=[
            ("LFHD", (+0.45, -0.35, -0.82)), ("RFHD", (-0.45, -0.35, -0.82)),
            ("LBHD", (+0.45, -0.30, +0.84)), ("RBHD", (-0.45, -0.30, +0.84)),
        ],
    )

    def arm(side: str, sx: float, upa_t: float, frm_t: float):
        sh, el, wr = jid[f"{side}_shoulder"], jid[f"{side}_elbow"], jid[f"{side}_wrist"]
        pre = side.upper()
        mb.tube(
            J[sh], J[el], 0.05, 0.042,
            rings=_scaled(6, density), segs=_scaled(10, density), part=part[f"{side}_upper_arm"],
            joint_knots=[(0.0, {sh: 1.0}), (0.55, {sh: 1.0}), (1.0, {sh: 0.5, el: 0.5})],
            markers=[(f"{pre}UPA", upa_t, 0.0, 1.05)],
        )
        mb.tube(
            J[el], J[wr], 0.042, 0.032,
            rings=_scaled(6, density), segs=_scaled(10, density), part=part[f"{side}_forearm"],
            joint_knots=[(0.0, {el: 1.0}), (0.6, {el: 1.0}), (1.0, {el: 0.5, wr: 0.5})],
            markers=[
                (f"{pre}ELB", 0.04, 180.0, 1.25),
                (f"{pre}ELB2", 0.06, 0.0, 1.2),
                (f"{pre}FRM", frm_t, 180.0, 1.05),
                (f"{pre}FRA", 0.82, 0.0, 1.05),
                (f"{pre}WRA", 0.98, 0.0, 1.1),
                (f"{pre}WRB", 0.98, 180.0, 1.1),
            ],
        )
        hand_c = J[wr] + np.array([sx * 0.08, 0.0, 0.0])
        mb.ellipsoid(
            hand_c, (0.085, 0.028, 0.045),
            lats=_scaled(4, density), lons=_scaled(8, density), part=part[f"{side}_hand"],
            jw={wr: 1.0},
            markers=[(f"{pre}FIN", (sx, 0.0, 0.0))],
        )

    # slight left/right placement asymmetry on purpose (UPA/FRM parameters)
    arm("l", +1.0, upa_t=0.45, frm_t=0.50)
    arm("r", -1.0, upa_t=0.55, frm_t=0.42)

    def leg(side: str, sx: float, thi_t: float, tib_t: float):
        hp, kn, an = jid[f"{side}_hip"], jid[f"{side}_knee"], jid[f"{side}_ankle"]
        pre = side.upper()
        out_deg = 0.0 if sx > 0 else 180.0  # lateral direction per side
        mb.tube(
            J[hp], J[kn], 0.082, 0.058,
            rings=_scaled(7, density), segs=_scaled(10, density), part=part[f"{side}_thigh"],
            joint_knots=[(0.0, {hp: 1.0}), (0.55, {hp: 1.0}), (1.0, {hp: 0.5, kn: 0.5})],
            u_hint=(sx, 0.0, 0.0),
            markers=[(f"{pre}THI", thi_t, -50.0 * sx, 1.05), (f"{pre}THI2", 0.70, 160.0 * sx, 1.05)],
        )
        mb.tube(
            J[kn], J[an], 0.058, 0.04,
            rings=_scaled(7, density), segs=_scaled(10, density), part=part[f"{side}_shin"],
            joint_knots=[(0.0, {kn: 1.0}), (0.6, {kn: 1.0}), (1.0, {kn: 0.5, an: 0.5})],
            u_hint=(sx, 0.0, 0.0),
            markers=[
                (f"{pre}KNE", 0.04, 0.0, 1.25), (f"{pre}KNE2", 0.06, 180.0, 1.2),
                (f"{pre}TIB", tib_t, -55.0 * sx, 1.05), (f"{pre}SHN", 0.82, -45.0 * sx, 1.05),
                (f"{pre}ANK", 0.97, 0.0, 1.2), (f"{pre}ANK2", 0.97, 180.0, 1.15),
            ],
        )
        heel = J[an] + np.array([0.0, 0.05, +0.045])
        toe = J[an] + np.array([0.0, 0.065, -0.17])
        mb.tube(
            heel, toe, 0.044, 0.035,
            rings=_scaled(5, density), segs=_scaled(10, density), part=part[f"{side}_foot"],
            joint_knots=[(0.0, {an: 1.0}), (1.0, {an: 1.0})],
            u_hint=(sx, 0.0, 0.0), cap0=True, cap1=True,
            markers=[(f"{pre}HEE", 0.02, 90.0, 1.15), (f"{pre}TOE", 0.96, 90.0, 1.1)],
        )

    leg("l", +1.0, thi_t=0.50, tib_t=0.45)
    leg("r", -1.0, thi_t=0.42, tib_t=0.55)

    verts = np.array(mb.verts)
    tris = np.array(mb.tris, dtype=np.int64)
    parts = np.array(mb.parts, dtype=np.int64)
    nv = len(verts)

    skin = np.zeros((nv, N_JOINTS))
    for i, jw in enumerate(mb.weights):
        for j, w in jw.items():
            skin[i, j] = w

    regressor = _build_joint_regressor(verts, J)
    blend = _build_blendshapes(verts)

    model = BodyModel(
        template=verts,
        triangles=tris,
        blendshapes=blend,
        joint_regressor=regressor,
        skin_weights=skin,
        part_labels=parts,
    )
    return model, mb.anchors


def _build_joint_regressor(verts: np.ndarray, joints: np.ndarray, k: int = 12) -> np.ndarray:
    """Convex rows: inverse-distance weights over each joint's k nearest vertices."""
    reg = np.zeros((N_JOINTS, len(verts)))
    for j in range(N_JOINTS):
        d = np.linalg.norm(verts - joints[j], axis=1)
        nearest = np.argsort(d)[:k]
        w = 1.0 / (d[nearest] + 1e-3)
        reg[j, nearest] = w / w.sum()
    return reg


def _build_blendshapes(verts: np.ndarray) -> np.ndarray:
    """Eight linear displacement fields (unit coefficient = one sigma)."""
    nv = len(verts)
    x, y, z = verts[:, 0], verts[:, 1], verts[:, 2]
    rho = np.hypot(x, z)
    shapes = np.zeros((N_SHAPE, nv, 3))

    # 0 stature: scale along y about the pelvis
    shapes[0, :, 1] = 0.05 * y
    # 1 girth: radial scaling from the vertical axis
    shapes[1, :, 0] = 0.025 * x
    shapes[1, :, 2] = 0.025 * z
    # 2 torso volume: radial, restricted to a smooth torso band
    band = _smoothstep((y + 0.60) / 0.12) * _smoothstep((0.16 - y) / 0.12)
    near_axis = _smoothstep((0.30 - rho) / 0.12)
    m = band * near_axis
    shapes[2, :, 0] = 0.06 * m * x
    shapes[2, :, 2] = 0.06 * m * z
    # 3 leg length: stretch below the hips
    m = _smoothstep((y - 0.04) / 0.45)
    shapes[3, :, 1] = 0.06 * m
    # 4 arm length: stretch outward beyond the shoulders
    m = _smoothstep((np.abs(x) - 0.19) / 0.5)
    shapes[4, :, 0] = 0.05 * np.sign(x) * m
    # 5 shoulder width: rigid outward shift of everything past the upper chest
    m = np.exp(-(((y + 0.42) / 0.14) ** 2)) * _smoothstep((np.abs(x) - 0.05) / 0.1)
    shapes[5, :, 0] = 0.03 * np.sign(x) * m
    # 6 head size: radial inflation about the head center
    c = np.array([0.0, -0.68, 0.0])
    d = verts - c
    m = np.exp(-(d * d).sum(axis=1) / (2 * 0.12**2))
    shapes[6] = 0.4 * m[:, None] * d
    # 7 belly: front-only bulge low on the torso (breaks front/back symmetry)
    m = np.exp(-(((y + 0.08) / 0.18) ** 2)) * _smoothstep((-z) / 0.08)
    shapes[7, :, 2] = -0.045 * m
    shapes[7, :, 0] = 0.01 * m * np.sign(x)
    return shapes

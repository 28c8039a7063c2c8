"""Sparse surface markers: placement, extraction, noise and sampling.

A marker is a point attached to the body surface as a convex combination of
mesh vertices (barycentric coordinates inside one triangle), so the marker
matrix W (53 x Nv) has nonnegative rows summing to one with at most three
nonzero entries. Markers are extracted from any posed mesh by M = W V,
which keeps extraction linear and differentiable.

Placement is intentionally asymmetric: a few markers sit at different
parameters on the left and right limbs and one back marker has no mirrored
counterpart, so left/right and front/back are distinguishable from marker
geometry alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import special_ortho_group

from . import autodiff as ad
from .body import BodyModel, BodyParams, matrix_to_rot6d, pose_mesh

N_MARKERS = 53


@dataclass
class MarkerSet:
    names: list
    triangle_index: np.ndarray  # (M,) int
    barycentric: np.ndarray  # (M, 3) convex rows
    n_vertices: int
    weights: np.ndarray = field(init=False)  # (M, Nv)

    def __post_init__(self):
        tri = np.asarray(self.triangle_index, dtype=np.int64)
        bary = np.asarray(self.barycentric, dtype=np.float64)
        self.triangle_index = tri
        self.barycentric = bary
        self.weights = np.zeros((len(self.names), self.n_vertices))
        self._tri_vertices = None

    def attach(self, triangles: np.ndarray) -> "MarkerSet":
        """Fill W given the mesh triangle list (call once after construction)."""
        tv = triangles[self.triangle_index]  # (M, 3) vertex ids
        self.weights[:] = 0.0
        for i in range(len(self.names)):
            for k in range(3):
                self.weights[i, tv[i, k]] += self.barycentric[i, k]
        return self

    @property
    def n_markers(self) -> int:
        return len(self.names)


def extract_markers(marker_set: MarkerSet, verts):
    """M = W V for (Nv, 3) or (B, Nv, 3) vertices."""
    return ad.matmul(marker_set.weights, verts)


def center_markers(markers):
    """Subtract the marker centroid; returns (centered, centroid)."""
    centroid = ad.tmean(markers, axis=-2, keepdims=True)
    return markers - centroid, centroid


def add_marker_noise(markers: np.ndarray, noise_mm: float, rng: np.random.Generator) -> np.ndarray:
    """Isotropic Gaussian jitter with per-coordinate std of ``noise_mm`` millimeters."""
    if noise_mm == 0.0:
        return np.asarray(markers, dtype=np.float64).copy()
    return markers + rng.normal(scale=noise_mm * 1e-3, size=np.shape(markers))


# -- placement -----------------------------------------------------------------


def _closest_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Closest point to ``p`` on each triangle (a, b, c); returns (points, bary).

    Vectorized region-based closest-point-on-triangle (vertex / edge / face
    cases resolved in order).
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    n = len(a)
    bary = np.zeros((n, 3))
    done = np.zeros(n, dtype=bool)

    def put(mask, u, v, w):
        m = mask & ~done
        bary[m, 0] = np.broadcast_to(u, (n,))[m]
        bary[m, 1] = np.broadcast_to(v, (n,))[m]
        bary[m, 2] = np.broadcast_to(w, (n,))[m]
        done[m] = True

    put((d1 <= 0) & (d2 <= 0), 1.0, 0.0, 0.0)
    put((d3 >= 0) & (d4 <= d3), 0.0, 1.0, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1.0 - v_ab, v_ab, 0.0)
        put((d6 >= 0) & (d5 <= d6), 0.0, 0.0, 1.0)
        w_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1.0 - w_ac, 0.0, w_ac)
        denom_bc = (d4 - d3) + (d5 - d6)
        w_bc = np.where(denom_bc != 0, (d4 - d3) / denom_bc, 0.0)
        put((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), 0.0, 1.0 - w_bc, w_bc)
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
        put(np.ones(n, dtype=bool), 1.0 - v_in - w_in, v_in, w_in)

    points = bary[:, 0:1] * a + bary[:, 1:2] * b + bary[:, 2:3] * c
    return points, bary


def build_marker_set(model: BodyModel, anchors: dict) -> MarkerSet:
    """Snap anchor points onto the template surface and record barycentrics."""
    tris = model.triangles
    va = model.template[tris[:, 0]]
    vb = model.template[tris[:, 1]]
    vc = model.template[tris[:, 2]]
    names, tri_idx, barys = [], [], []
    for name, p in anchors.items():
        pts, bary = _closest_on_triangles(np.asarray(p, dtype=np.float64), va, vb, vc)
        d = np.linalg.norm(pts - p, axis=1)
        best = int(np.argmin(d))
        names.append(name)
        tri_idx.append(best)
        barys.append(bary[best])
    mset = MarkerSet(
        names=names,
        triangle_index=np.array(tri_idx, dtype=np.int64),
        barycentric=np.array(barys),
        n_vertices=model.n_vertices,
    )
    return mset.attach(tris)


# -- serialization ----------------------------------------------------------------


def marker_set_to_json(mset: MarkerSet) -> str:
    return json.dumps(
        {
            "names": list(mset.names),
            "triangle_index": mset.triangle_index.tolist(),
            "barycentric": mset.barycentric.tolist(),
            "n_vertices": int(mset.n_vertices),
        },
        sort_keys=True,
        indent=1,
    )


def marker_set_from_json(text: str, triangles: np.ndarray) -> MarkerSet:
    d = json.loads(text)
    mset = MarkerSet(
        names=list(d["names"]),
        triangle_index=np.array(d["triangle_index"], dtype=np.int64),
        barycentric=np.array(d["barycentric"], dtype=np.float64),
        n_vertices=int(d["n_vertices"]),
    )
    return mset.attach(triangles)


# -- sampling protocol ---------------------------------------------------------------


def sample_params(
    rng: np.random.Generator,
    n: int,
    trans_range: float = 20.0,
    depth_band: tuple | None = None,
) -> BodyParams:
    """Draw n parameter sets: theta, beta ~ N(0, I); rotation Haar-uniform on
    SO(3); translation uniform in [-trans_range, trans_range]^3 unless a
    frontal ``depth_band`` (z_lo, z_hi) is given, which keeps x/y in a narrow
    range and z inside the band (camera-facing placement)."""
    theta = rng.standard_normal((n, 90))
    beta = rng.standard_normal((n, 8))
    rots = special_ortho_group.rvs(3, size=n, random_state=rng).reshape(n, 3, 3)
    rot6d = matrix_to_rot6d(rots)
    if depth_band is None:
        trans = rng.uniform(-trans_range, trans_range, size=(n, 3))
    else:
        z = rng.uniform(depth_band[0], depth_band[1], size=n)
        xy = rng.uniform(-0.25, 0.25, size=(n, 2)) * z[:, None]
        trans = np.concatenate([xy, z[:, None]], axis=1)
    return BodyParams(theta=theta, beta=beta, rot6d=rot6d, trans=trans)


def sample_synthetic_batch(
    model: BodyModel,
    mset: MarkerSet,
    rng: np.random.Generator,
    n: int,
    noise_mm: float = 0.0,
    trans_range: float = 20.0,
):
    """(markers, vertices, params) for n independent draws.

    ``markers`` carry the requested jitter; ``vertices`` are clean.
    """
    params = sample_params(rng, n, trans_range=trans_range)
    verts = pose_mesh(model, params)
    markers = add_marker_noise(extract_markers(mset, verts), noise_mm, rng)
    return markers, verts, params


def sample_synthetic_pair(
    model: BodyModel,
    mset: MarkerSet,
    rng: np.random.Generator,
    noise_mm: float = 0.0,
    trans_range: float = 20.0,
):
    markers, verts, params = sample_synthetic_batch(
        model, mset, rng, 1, noise_mm=noise_mm, trans_range=trans_range
    )
    single = BodyParams(
        theta=params.theta[0], beta=params.beta[0], rot6d=params.rot6d[0], trans=params.trans[0]
    )
    return markers[0], verts[0], single

"""Central finite-difference verification of reverse-mode gradients.

This is the package's universal gradient oracle: a scalar-valued function is
evaluated through the tape, backward() produces analytic gradients, and each
probed input entry is perturbed by +/- step to form a central difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward


@dataclass
class GradEntry:
    """Outcome for one named input of a checked function."""

    name: str
    max_rel_err: float
    max_abs_err: float
    checked: int
    ok: bool


@dataclass
class GradReport:
    func: str
    tolerance: float
    entries: list[GradEntry] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def summary(self) -> str:
        lines = [f"gradcheck {self.func}: tol={self.tolerance:g}"]
        for e in self.entries:
            status = "ok" if e.ok else "FAIL"
            lines.append(
                f"  {e.name:<24s} rel={e.max_rel_err:.3e} abs={e.max_abs_err:.3e} "
                f"n={e.checked} {status}"
            )
        return "\n".join(lines)


def check_gradient(
    f,
    inputs: dict[str, np.ndarray],
    tolerance: float = 1e-3,
    *,
    step: float = 1e-5,
    floor: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    name: str | None = None,
) -> GradReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    Inputs may be arrays or live ``Tensor`` leaves. Array inputs are wrapped
    fresh and handed to ``f`` as a dict, so ``f`` must read them from its
    argument. Tensor inputs are the leaves of whatever graph ``f`` builds
    internally (e.g. network weights captured by closure): they are
    perturbed in place for the numeric side and their ``.grad`` is the
    analytic side. The relative error for an entry is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``. With
    ``max_entries`` set, a random subset of entries per input is probed
    (all entries otherwise).
    """
    live = {k: v for k, v in inputs.items() if isinstance(v, Tensor)}
    arrays = {
        k: v.values if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
        for k, v in inputs.items()
    }
    tensors = {
        k: live[k] if k in live else Tensor(arrays[k].copy(), requires_grad=True)
        for k in inputs
    }
    for t in live.values():
        t.grad = None
    out = f(tensors)
    if not isinstance(out, Tensor) or out.values.size != 1:
        raise ValueError("check_gradient: function must return a scalar Tensor")
    backward(out)

    def eval_at(key: str, flat_idx: int, delta: float) -> float:
        if key in live:
            leaf = live[key].values
            saved = leaf.flat[flat_idx]
            leaf.flat[flat_idx] = saved + delta
            try:
                return float(f(tensors).values)
            finally:
                leaf.flat[flat_idx] = saved
        probe = {k: live[k] if k in live else Tensor(arrays[k]) for k in inputs}
        bumped = arrays[key].copy()
        bumped.flat[flat_idx] += delta
        probe[key] = Tensor(bumped)
        return float(f(probe).values)

    report = GradReport(func=name or getattr(f, "__name__", "<fn>"), tolerance=tolerance)
    for key, arr in arrays.items():
        analytic = tensors[key].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        n = arr.size
        if max_entries is not None and n > max_entries:
            gen = rng if rng is not None else np.random.default_rng(0)
            picks = gen.choice(n, size=max_entries, replace=False)
        else:
            picks = np.arange(n)
        max_rel = 0.0
        max_abs = 0.0
        for i in picks:
            plus = eval_at(key, int(i), step)
            minus = eval_at(key, int(i), -step)
            numeric = (plus - minus) / (2.0 * step)
            a = float(analytic.flat[i])
            abs_err = abs(a - numeric)
            rel_err = abs_err / max(abs(a), abs(numeric), floor)
            max_abs = max(max_abs, abs_err)
            max_rel = max(max_rel, rel_err)
        report.entries.append(
            GradEntry(
                name=key,
                max_rel_err=max_rel,
                max_abs_err=max_abs,
                checked=len(picks),
                ok=max_rel <= tolerance,
            )
        )
    return report


def run_gradcheck_suite(
    tolerance: float = 1e-3,
    geometric_tolerance: float = 1e-5,
    seed: int = 0,
) -> list[GradReport]:
    """Canned verification battery: every loss and network block on tiny instances.

    Purely geometric ops (projection, rotation construction, mesh posing) are
    held to ``geometric_tolerance``; network and loss checks, whose values
    pass through softmax/sigmoid chains, to ``tolerance``. Deterministic for
    a fixed seed.
    """
    from . import autodiff as ad
    from . import nn
    from .body import BodyParams, ROT6D_IDENTITY, build_standin_body, pose_mesh, rot6d_to_matrix
    from .camera import CameraIntrinsics, project
    from .config import GenDataConfig
    from .losses import (
        LossWeights,
        loss_fullsup,
        loss_keypoints,
        loss_markers,
        loss_param_prior,
        loss_parts,
    )
    from .markers import build_marker_set, sample_synthetic_batch
    from .poser import poser_forward, poser_init, poser_loss, poser_param_tensors
    from .rasterizer import soft_rasterize_parts
    from .refiner import (
        backbone_forward,
        refine_step,
        thundr_forward,
        thundr_init,
        thundr_param_tensors,
        tokenize_with_camera,
    )
    from .synth import make_sample
    from .trainer import thundr_sample_loss

    rng = np.random.default_rng(seed)
    reports = []

    def run(name, f, inputs, tol, max_entries=4):
        reports.append(
            check_gradient(f, inputs, tol, max_entries=max_entries, rng=rng, name=name)
        )

    cam = CameraIntrinsics(36.0, 36.0, 16.0, 16.0)

    # geometric ops
    pts = rng.normal(size=(6, 3)) * 0.3 + np.array([0.0, 0.0, 2.0])
    probe_px = rng.normal(size=(6, 2))
    run(
        "project",
        lambda t: ad.tsum(project(t["points"], cam) * probe_px),
        {"points": pts},
        geometric_tolerance,
        max_entries=8,
    )

    r6 = ROT6D_IDENTITY + 0.3 * rng.normal(size=6)
    probe_r = rng.normal(size=(3, 3))
    run(
        "rot6d_to_matrix",
        lambda t: ad.tsum(rot6d_to_matrix(t["rot6d"]) * probe_r),
        {"rot6d": r6},
        geometric_tolerance,
        max_entries=6,
    )

    model, anchors = build_standin_body(density=0.5)
    mset = build_marker_set(model, anchors)
    probe_v = rng.normal(size=(model.n_vertices, 3))
    pose_inputs = {
        "theta": 0.5 * rng.normal(size=90),
        "beta": 0.5 * rng.normal(size=8),
        "rot6d": ROT6D_IDENTITY + 0.2 * rng.normal(size=6),
        "trans": rng.normal(size=3),
    }
    run(
        "pose_mesh",
        lambda t: ad.tsum(
            pose_mesh(model, BodyParams(theta=t["theta"], beta=t["beta"],
                                        rot6d=t["rot6d"], trans=t["trans"])) * probe_v
        ),
        pose_inputs,
        geometric_tolerance,
        max_entries=4,
    )

    # network blocks
    weights = thundr_init(rng, image_size=32, d_model=8, heads=2, n_stages=2,
                          backbone_channels=(4, 4, 4, 4, 8))
    img = rng.uniform(size=(32, 32, 3))
    conv_params = {}
    for i, (conv, gn) in enumerate(weights.convs):
        conv_params.update(nn.collect_params(conv, f"c{i}"))
        conv_params.update(nn.collect_params(gn, f"g{i}"))
    run(
        "backbone",
        lambda t: ad.tsum(backbone_forward(weights, img) ** 2),
        conv_params,
        tolerance,
        max_entries=2,
    )

    z0 = ad.values_of(tokenize_with_camera(weights, backbone_forward(weights, img), cam, (32, 32)))
    enc_params = {
        k: v for k, v in thundr_param_tensors(weights).items() if k.startswith("encoder.")
    }
    run(
        "transformer_encoder",
        lambda t: ad.tsum(refine_step(weights, z0)[0] ** 2),
        enc_params,
        tolerance,
        max_entries=2,
    )

    poser_weights = poser_init(rng, mset.n_markers, model.n_vertices, hidden=8)
    markers, verts, _ = sample_synthetic_batch(model, mset, rng, 2, noise_mm=5.0)
    run(
        "mp_forward",
        lambda t: poser_loss(poser_forward(model, mset, poser_weights, markers), verts)[0],
        poser_param_tensors(poser_weights),
        tolerance,
        max_entries=2,
    )

    gt_v = rng.normal(size=(model.n_vertices, 3)) * 0.2
    gt_j = rng.normal(size=(16, 3)) * 0.2
    thundr_picked = {
        k: v for k, v in thundr_param_tensors(weights).items()
        if k in ("backbone.0.conv.w", "embed.w", "markers_token", "pos_embed",
                 "encoder.attn.wq.w", "head.layers.1.w")
    }

    def f_thundr(t):
        out = thundr_forward(weights, poser_weights, model, mset, img, cam)
        joints = ad.matmul(model.joint_regressor, out.poser.v_d)
        return loss_fullsup(out.poser.v_d, gt_v, joints, gt_j)

    run("thundr_forward", f_thundr, thundr_picked, tolerance, max_entries=2)

    # losses
    run(
        "loss_param_prior",
        lambda t: loss_param_prior(t["theta"], t["beta"]),
        {"theta": rng.normal(size=90), "beta": rng.normal(size=8)},
        tolerance,
        max_entries=6,
    )

    gt_m = rng.normal(size=(mset.n_markers, 3))
    run(
        "loss_markers",
        lambda t: loss_markers(t["pred"], gt_m),
        {"pred": gt_m + 0.05 * rng.normal(size=gt_m.shape)},
        tolerance,
        max_entries=8,
    )

    joints = rng.normal(size=(16, 3)) * 0.3 + np.array([0.0, 0.0, 2.5])
    kp = rng.uniform(4.0, 28.0, size=(16, 2))
    conf = rng.uniform(0.2, 1.0, size=16)
    run(
        "loss_keypoints",
        lambda t: loss_keypoints(t["joints"], cam, kp, conf),
        {"joints": joints},
        tolerance,
        max_entries=8,
    )

    tri = np.array([[0, 1, 2], [2, 3, 0], [3, 4, 5]])
    tri_parts = np.array([0, 1, 2])
    tverts = rng.normal(size=(6, 3)) * 0.4 + np.array([0.0, 0.0, 2.0])
    run(
        "soft_rasterizer",
        lambda t: ad.tmean(
            soft_rasterize_parts(t["verts"], tri, tri_parts, cam, (8, 8),
                                 sigma=1e-2, gamma=1e-1)
        ),
        {"verts": tverts},
        tolerance,
        max_entries=8,
    )

    target = rng.uniform(size=(8, 8, 15))
    run(
        "loss_parts",
        lambda t: loss_parts(
            target,
            soft_rasterize_parts(t["verts"], tri, tri_parts, cam, (8, 8),
                                 sigma=1e-2, gamma=1e-1),
        ),
        {"verts": tverts},
        tolerance,
        max_entries=8,
    )

    run(
        "loss_fullsup",
        lambda t: loss_fullsup(t["verts"], gt_v, t["joints"], gt_j),
        {"verts": gt_v + 0.1 * rng.normal(size=gt_v.shape),
         "joints": gt_j + 0.1 * rng.normal(size=gt_j.shape)},
        tolerance,
        max_entries=4,
    )

    sample = make_sample(model, GenDataConfig(seed=seed, count=1, image_size=32), 0)
    lw = LossWeights(k=1e-2)
    mixed_picked = dict(thundr_picked)
    mixed_picked["mp.direct.layers.0.w"] = poser_param_tensors(poser_weights)["direct.layers.0.w"]
    run(
        "total_loss",
        lambda t: thundr_sample_loss(weights, poser_weights, model, mset, sample, lw)[0],
        mixed_picked,
        tolerance,
        max_entries=2,
    )

    return reports

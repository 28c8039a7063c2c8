"""THUNDR training loop: synthetic samples in, refined-marker network out.

Each sample contributes the marker-alignment, keypoint-reprojection,
part-alignment, and parameter-prior terms; samples carrying 3d ground truth
add the full-supervision term. The regime gates that term: ``ws`` drops it
everywhere, ``fs`` requires it everywhere, ``mixed`` follows each sample's
own flag. The marker poser runs frozen by default (one detached copy shared
across the run); a flag joins its weights to the optimized set instead.
"""

import numpy as np

from . import autodiff as ad
from . import nn
from .body import BodyModel, regress_joints
from .losses import (
    LossWeights,
    combine_losses,
    loss_fullsup,
    loss_keypoints,
    loss_markers,
    loss_param_prior,
    loss_parts,
)
from .markers import MarkerSet, extract_markers
from .poser import PoserWeights, TrainingDiverged, TrainLogEntry
from .rasterizer import GAMMA_DEFAULT, SIGMA_DEFAULT, soft_rasterize_parts
from .refiner import ThundrWeights, detached_poser, thundr_forward, thundr_param_tensors
from .synth import SyntheticSample

REGIMES = ("ws", "fs", "mixed")


def effective_has_3d(sample: SyntheticSample, regime: str) -> bool:
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}, expected one of {REGIMES}")
    if regime == "ws":
        return False
    if regime == "fs":
        if not sample.has_3d:
            raise ValueError("fs regime requires 3d ground truth on every sample")
        return True
    return sample.has_3d


def thundr_sample_loss(
    weights: ThundrWeights,
    poser_weights: PoserWeights,
    model: BodyModel,
    mset: MarkerSet,
    sample: SyntheticSample,
    loss_weights: LossWeights,
    regime: str = "mixed",
    sigma: float = SIGMA_DEFAULT,
    gamma: float = GAMMA_DEFAULT,
):
    """Total loss on one sample; returns (total Tensor, component log dict)."""
    has_3d = effective_has_3d(sample, regime)
    h, w = sample.image.shape[:2]
    # freezing policy lives in train_thundr (it hands over a detached copy),
    # so the forward must not detach again
    out = thundr_forward(
        weights, poser_weights, model, mset, np.asarray(sample.image, dtype=np.float64),
        sample.cam, freeze_poser=False,
    )
    if not np.all(np.isfinite(ad.values_of(out.markers))):
        raise TrainingDiverged("non-finite marker prediction")
    v_d = out.poser.v_d
    joints = regress_joints(model, v_d)
    rendered = soft_rasterize_parts(
        v_d, model.triangles, model.triangle_parts(), sample.cam, (w, h),
        sigma=sigma, gamma=gamma,
    )
    components = {
        "param_prior": loss_param_prior(out.poser.params.theta, out.poser.params.beta),
        "markers": loss_markers(out.markers, extract_markers(mset, out.poser.v_p)),
        "keypoints": loss_keypoints(joints, sample.cam, sample.keypoints, sample.confidence),
        "parts": loss_parts(sample.part_map, rendered),
    }
    if sample.has_3d:
        components["fullsup"] = loss_fullsup(
            v_d, sample.vertices, joints, sample.joints,
            loss_weights.v, loss_weights.j,
        )
    return combine_losses(components, loss_weights, has_3d)


def train_thundr(
    weights: ThundrWeights,
    poser_weights: PoserWeights,
    model: BodyModel,
    mset: MarkerSet,
    samples: list,
    *,
    steps: int,
    batch: int = 16,
    lr: float = 1e-4,
    lr_decay: float = 0.99,
    steps_per_epoch: int = 500,
    regime: str = "mixed",
    freeze_mp: bool = True,
    loss_weights: LossWeights | None = None,
    sigma: float = SIGMA_DEFAULT,
    gamma: float = GAMMA_DEFAULT,
    seed: int = 0,
    log_every: int = 100,
    start_step: int = 0,
    opt: nn.OptimizerState | None = None,
    log: list | None = None,
) -> tuple:
    """Minibatch Adam over the dataset; returns (poser_weights, opt, log).

    ``poser_weights`` come back detached when ``freeze_mp`` (the copy the
    run actually used), or trained in place otherwise. The learning rate
    decays by ``lr_decay`` per ``steps_per_epoch``. Non-finite loss aborts.
    """
    if not samples:
        raise ValueError("train_thundr: empty sample list")
    if loss_weights is None:
        loss_weights = LossWeights()
    rng = np.random.default_rng(seed)
    if freeze_mp:
        poser_weights = detached_poser(poser_weights)
    trained = thundr_param_tensors(weights)
    if not freeze_mp:
        for name, t in nn.collect_params(poser_weights).items():
            trained[f"mp.{name}"] = t
    if opt is None:
        opt = nn.adam_init(trained)
    if log is None:
        log = []

    batch = min(batch, len(samples))
    for step in range(start_step, start_step + steps):
        picked = rng.choice(len(samples), size=batch, replace=False)
        total = None
        sums: dict = {}
        for idx in picked:
            try:
                one, logged = thundr_sample_loss(
                    weights, poser_weights, model, mset, samples[idx],
                    loss_weights, regime, sigma=sigma, gamma=gamma,
                )
            except TrainingDiverged as e:
                raise TrainingDiverged(f"{e} at step {step}") from None
            total = one if total is None else total + one
            for k, v in logged.items():
                sums[k] = sums.get(k, 0.0) + v / batch
        total = total * (1.0 / batch)
        loss_val = float(ad.values_of(total))
        if not np.isfinite(loss_val):
            raise TrainingDiverged(f"non-finite loss {loss_val} at step {step}")
        nn.clear_grads(trained)
        total.backward()
        cur_lr = lr * lr_decay ** (step // steps_per_epoch)
        nn.adam_step(trained, nn.gradients_of(trained), opt, cur_lr)
        if step % log_every == 0 or step == start_step + steps - 1:
            log.append(TrainLogEntry(step=step, loss=loss_val, components=sums))
    return poser_weights, opt, log

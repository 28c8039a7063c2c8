"""Image-to-markers refinement network.

A small stride-32 convolutional backbone produces a feature grid; the grid
tokens (with the camera intrinsics appended) plus a learnable markers token
pass L times through one shared transformer encoder layer. After each pass
a shared MLP head reads the markers token into a marker update; the updates
accumulate onto the default marker frame with step size lambda. The frozen
marker poser then maps the refined markers to meshes.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .body import BodyModel, BodyParams, optimal_center_translation, pose_mesh
from .camera import CameraIntrinsics
from .markers import MarkerSet, extract_markers
from .poser import PoserOutput, PoserWeights, poser_forward

STRIDE = 32


@dataclass
class ThundrWeights:
    convs: list  # [(ConvWeights, GroupNormWeights), ...], stride 2 each
    embed: nn.LinearWeights  # (D+4) -> D'
    markers_token: ad.Tensor  # (1, D')
    pos_embed: ad.Tensor  # (N+1, D')
    encoder: nn.EncoderLayerWeights  # the one shared layer
    head: nn.MLPWeights  # D' -> N_m*3
    n_stages: int
    lambda_step: float
    n_markers: int


def thundr_init(
    rng: np.random.Generator,
    *,
    image_size: int = 64,
    d_model: int = 64,
    heads: int = 4,
    n_stages: int = 4,
    lambda_step: float = 0.1,
    n_markers: int = 53,
    backbone_channels: tuple = (16, 32, 48, 64, 64),
) -> ThundrWeights:
    if image_size % STRIDE != 0:
        raise ValueError(f"image size {image_size} not a multiple of {STRIDE}")
    if len(backbone_channels) != 5 or backbone_channels[-1] != d_model:
        raise ValueError("backbone needs 5 stages ending at d_model channels")
    convs = []
    c_in = 3
    for c_out in backbone_channels:
        convs.append((
            nn.conv_init(rng, c_in, c_out, k=3, stride=2, pad=1),
            nn.group_norm_init(c_out, min(8, c_out)),
        ))
        c_in = c_out
    n_tokens = (image_size // STRIDE) ** 2
    return ThundrWeights(
        convs=convs,
        embed=nn.linear_init(rng, d_model + 4, d_model),
        markers_token=nn.normal_embedding(rng, (1, d_model)),
        pos_embed=nn.normal_embedding(rng, (n_tokens + 1, d_model)),
        encoder=nn.encoder_layer_init(rng, d_model, heads),
        head=nn.mlp_init(rng, [d_model, d_model, n_markers * 3]),
        n_stages=n_stages,
        lambda_step=lambda_step,
        n_markers=n_markers,
    )


def backbone_forward(weights: ThundrWeights, image):
    """(H, W, 3) image in [0,1] to a (h/32, w/32, D) feature grid."""
    shape = ad.values_of(image).shape
    if len(shape) != 3 or shape[2] != 3 or shape[0] % STRIDE or shape[1] % STRIDE:
        raise ad.ShapeError("backbone_forward", shape, ("32k", "32k", 3))
    x = ad.reshape(ad.transpose(image, (2, 0, 1)), (1, 3) + shape[:2])
    for conv, gn in weights.convs:
        x = ad.gelu(nn.group_norm(nn.conv2d(x, conv), gn))
    _, d, gh, gw = ad.values_of(x).shape
    return ad.transpose(ad.reshape(x, (d, gh, gw)), (1, 2, 0))


def tokenize_with_camera(weights: ThundrWeights, feats, cam: CameraIntrinsics,
                         image_size: tuple):
    """Flatten the grid, append normalized intrinsics, embed, prepend the
    markers token, add positional embeddings. Returns (N+1, D')."""
    gh, gw, d = ad.values_of(feats).shape
    n = gh * gw
    if n + 1 != weights.pos_embed.shape[0]:
        raise ad.ShapeError("tokenize_with_camera", (n + 1,), weights.pos_embed.shape)
    w_img, h_img = float(image_size[0]), float(image_size[1])
    intr = np.array([cam.fx / w_img, cam.fy / h_img, cam.cx / w_img, cam.cy / h_img])
    flat = ad.reshape(feats, (n, d))
    with_cam = ad.concat([flat, np.broadcast_to(intr, (n, 4)).copy()], axis=1)
    tokens = nn.linear(with_cam, weights.embed)
    z0 = ad.concat([weights.markers_token, tokens], axis=0)
    return z0 + weights.pos_embed


def refine_step(weights: ThundrWeights, z_prev):
    """One shared-encoder pass; reads the markers token into an update."""
    z_next, attn = nn.transformer_encoder_layer(z_prev, weights.encoder)
    token = z_next[0:1]  # the markers token row, kept 2-d for the MLP
    delta = ad.reshape(nn.mlp(token, weights.head, activation="gelu"),
                       (weights.n_markers, 3))
    return z_next, delta, attn


def default_markers(model: BodyModel, mset: MarkerSet, cam: CameraIntrinsics,
                    image_size: tuple) -> np.ndarray:
    """Markers of the default body translated to the image center (M_0)."""
    t0 = optimal_center_translation(model, cam, image_size)
    params = BodyParams.default()
    params.trans = t0
    return extract_markers(mset, pose_mesh(model, params))


@dataclass
class RefinementTrace:
    token_states: list  # L entries, each (N+1, D')
    deltas: list  # L entries, each (N_m, 3)
    attention: list  # L entries, each (heads, N+1, N+1)


@dataclass
class ThundrOutput:
    markers: object  # M_L, (N_m, 3)
    m0: np.ndarray
    poser: PoserOutput
    trace: RefinementTrace


def thundr_forward(
    weights: ThundrWeights,
    poser_weights: PoserWeights,
    model: BodyModel,
    mset: MarkerSet,
    image,
    cam: CameraIntrinsics,
    *,
    freeze_poser: bool = True,
) -> ThundrOutput:
    shape = ad.values_of(image).shape
    image_size = (shape[1], shape[0])
    feats = backbone_forward(weights, image)
    z = tokenize_with_camera(weights, feats, cam, image_size)
    m0 = default_markers(model, mset, cam, image_size)

    states, deltas, attns = [], [], []
    total = None
    for _ in range(weights.n_stages):
        z, delta, attn = refine_step(weights, z)
        states.append(z)
        deltas.append(delta)
        attns.append(attn)
        total = delta if total is None else total + delta
    markers = m0 + weights.lambda_step * total

    pw = poser_weights
    if freeze_poser:
        pw = detached_poser(poser_weights)
    out = poser_forward(model, mset, pw, markers)
    return ThundrOutput(
        markers=markers,
        m0=m0,
        poser=out,
        trace=RefinementTrace(token_states=states, deltas=deltas, attention=attns),
    )


def detached_poser(weights: PoserWeights) -> PoserWeights:
    """Same values, but backward never descends into the poser parameters.

    Gradients still flow through the poser's ops back to its marker input;
    only the weight leaves are pruned (requires_grad=False).
    """
    import copy

    clone = copy.deepcopy(weights)
    for t in nn.collect_params(clone).values():
        t.requires_grad = False
        t.grad = None
    return clone


def markers_attention_map(trace: RefinementTrace, image_size: tuple) -> np.ndarray:
    """Average markers-token attention over heads and stages, upsampled.

    The self-attention entry is dropped and each stage's remaining weights
    renormalized before averaging; output is (H, W) scaled to [0, 1].
    """
    w_img, h_img = int(image_size[0]), int(image_size[1])
    per_stage = []
    for attn in trace.attention:
        a = ad.values_of(attn)  # (heads, N+1, N+1)
        row = a[:, 0, 1:].mean(axis=0)  # markers token row, self entry dropped
        row = row / max(row.sum(), 1e-12)
        per_stage.append(row)
    grid = np.mean(per_stage, axis=0)
    side = int(round(np.sqrt(grid.size)))
    heat = _bilinear_upsample(grid.reshape(side, side), h_img, w_img)
    lo, hi = heat.min(), heat.max()
    return (heat - lo) / (hi - lo) if hi > lo else np.zeros_like(heat)


def _bilinear_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    gh, gw = grid.shape
    ys = (np.arange(h) + 0.5) * gh / h - 0.5
    xs = (np.arange(w) + 0.5) * gw / w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, gh - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, gw - 1)
    y1 = np.clip(y0 + 1, 0, gh - 1)
    x1 = np.clip(x0 + 1, 0, gw - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bot = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


# -- checkpoint plumbing ------------------------------------------------------------


def thundr_param_tensors(weights: ThundrWeights) -> dict:
    out = {}
    for i, (conv, gn) in enumerate(weights.convs):
        out.update(nn.collect_params(conv, f"backbone.{i}.conv"))
        out.update(nn.collect_params(gn, f"backbone.{i}.gn"))
    out.update(nn.collect_params(weights.embed, "embed"))
    out["markers_token"] = weights.markers_token
    out["pos_embed"] = weights.pos_embed
    out.update(nn.collect_params(weights.encoder, "encoder"))
    out.update(nn.collect_params(weights.head, "head"))
    return out


def thundr_state_dict(weights: ThundrWeights, opt: nn.OptimizerState | None = None,
                      step: int = 0) -> dict:
    params = thundr_param_tensors(weights)
    out = {name: t.values for name, t in params.items()}
    out["train.step"] = np.array(float(step))
    out["arch.n_stages"] = np.array(float(weights.n_stages))
    out["arch.lambda_step"] = np.array(weights.lambda_step)
    if opt is not None:
        for name in params:
            out[f"opt.m.{name}"] = opt.m[name]
            out[f"opt.v.{name}"] = opt.v[name]
        out["opt.step"] = np.array(float(opt.step))
    return out


def thundr_expected_shapes(weights: ThundrWeights) -> dict:
    return {name: t.values.shape for name, t in thundr_param_tensors(weights).items()}


def thundr_load_state(weights: ThundrWeights, tensors: dict) -> tuple:
    params = thundr_param_tensors(weights)
    for name, t in params.items():
        t.values[...] = tensors[name]
    weights.n_stages = int(tensors.get("arch.n_stages", np.array(float(weights.n_stages))))
    weights.lambda_step = float(tensors.get("arch.lambda_step", np.array(weights.lambda_step)))
    step = int(tensors.get("train.step", np.array(0.0)))
    opt = None
    if "opt.step" in tensors:
        opt = nn.adam_init(params)
        opt.step = int(tensors["opt.step"])
        for name in params:
            opt.m[name][...] = tensors[f"opt.m.{name}"]
            opt.v[name][...] = tensors[f"opt.v.{name}"]
    return opt, step

"""Neural network layers, initializers and the Adam optimizer.

All layers are plain functions over weight dataclasses whose fields are
``Tensor`` leaves; :func:`collect_params` flattens any nested weight object
into a name -> Tensor dict for optimizers and checkpoints. Initialization is
deterministic given an explicit ``np.random.Generator``: linear layers use
uniform fan-in scaling, embeddings use N(0, 0.02).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


# -- initializers ---------------------------------------------------------------


def uniform_fan_in(rng: np.random.Generator, n_in: int, shape) -> Tensor:
    bound = 1.0 / np.sqrt(float(n_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def normal_embedding(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


# -- parameter flattening ---------------------------------------------------------


def collect_params(obj, prefix: str = "") -> dict[str, Tensor]:
    """Flatten a nested weight structure into ``{dotted.name: Tensor}``.

    Supports Tensors, dataclasses, lists/tuples and dicts. Order is
    deterministic (field order, index order, sorted dict keys).
    """
    out: dict[str, Tensor] = {}
    if isinstance(obj, Tensor):
        out[prefix or "param"] = obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            child = getattr(obj, f.name)
            key = f"{prefix}.{f.name}" if prefix else f.name
            out.update(collect_params(child, key))
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            out.update(collect_params(child, f"{prefix}.{i}" if prefix else str(i)))
    elif isinstance(obj, dict):
        for k in sorted(obj):
            out.update(collect_params(obj[k], f"{prefix}.{k}" if prefix else str(k)))
    elif obj is None or isinstance(obj, (int, float, str, bool, np.ndarray)):
        pass
    else:
        raise TypeError(f"collect_params: unsupported node type {type(obj)!r} at '{prefix}'")
    return out


def set_requires_grad(weights, flag: bool) -> None:
    for p in collect_params(weights).values():
        p.requires_grad = flag


# -- linear / mlp -----------------------------------------------------------------


@dataclass
class LinearWeights:
    w: Tensor  # (n_in, n_out)
    b: Tensor  # (n_out,)


def linear_init(rng: np.random.Generator, n_in: int, n_out: int) -> LinearWeights:
    return LinearWeights(w=uniform_fan_in(rng, n_in, (n_in, n_out)), b=zeros_param((n_out,)))


def linear(x, lw: LinearWeights):
    return ad.matmul(x, lw.w) + lw.b


@dataclass
class MLPWeights:
    layers: list[LinearWeights]


def mlp_init(rng: np.random.Generator, sizes: list[int]) -> MLPWeights:
    layers = [linear_init(rng, sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]
    return MLPWeights(layers=layers)


def mlp(x, w: MLPWeights, activation: str = "relu"):
    """Plain MLP: `activation` between layers, linear output."""
    act = {"relu": ad.relu, "gelu": ad.gelu, "tanh": ad.tanh}[activation]
    h = x
    for i, lw in enumerate(w.layers):
        h = linear(h, lw)
        if i + 1 < len(w.layers):
            h = act(h)
    return h


# -- layer norm -------------------------------------------------------------------


@dataclass
class LayerNormWeights:
    gamma: Tensor  # (d,)
    beta: Tensor  # (d,)


def layer_norm_init(d: int) -> LayerNormWeights:
    return LayerNormWeights(gamma=Tensor(np.ones(d), requires_grad=True), beta=zeros_param((d,)))


def layer_norm(x, w: LayerNormWeights, eps: float = 1e-5):
    """Normalize over the last axis, then apply a learned affine map."""
    m = ad.tmean(x, axis=-1, keepdims=True)
    centered = x - m
    var = ad.tmean(centered * centered, axis=-1, keepdims=True)
    return centered / ad.sqrt(var + eps) * w.gamma + w.beta


# -- multi-head self attention ------------------------------------------------------


@dataclass
class AttentionWeights:
    wq: LinearWeights
    wk: LinearWeights
    wv: LinearWeights
    wo: LinearWeights
    n_heads: int


def attention_init(rng: np.random.Generator, d: int, n_heads: int) -> AttentionWeights:
    if d % n_heads != 0:
        raise ValueError(f"attention: model dim {d} not divisible by {n_heads} heads")
    return AttentionWeights(
        wq=linear_init(rng, d, d),
        wk=linear_init(rng, d, d),
        wv=linear_init(rng, d, d),
        wo=linear_init(rng, d, d),
        n_heads=n_heads,
    )


def _split_heads(x, n_heads: int):
    b, t, d = x.shape
    dh = d // n_heads
    return ad.transpose(ad.reshape(x, (b, t, n_heads, dh)), (0, 2, 1, 3))  # (b, h, t, dh)


def multihead_attention(z, w: AttentionWeights):
    """Scaled dot-product self attention.

    ``z`` is (T, D) or (B, T, D). Returns ``(out, attn)`` where ``attn`` has
    shape (B, heads, T, T) (leading batch axis dropped if the input was 2-d);
    rows of ``attn`` sum to one.
    """
    squeeze = False
    if z.ndim == 2:
        z = ad.reshape(z, (1,) + tuple(z.shape))
        squeeze = True
    b, t, d = z.shape
    dh = d // w.n_heads
    q = _split_heads(linear(z, w.wq), w.n_heads)
    k = _split_heads(linear(z, w.wk), w.n_heads)
    v = _split_heads(linear(z, w.wv), w.n_heads)
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)  # (b, h, t, t)
    ctx = ad.matmul(attn, v)  # (b, h, t, dh)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
    out = linear(ctx, w.wo)
    if squeeze:
        out = ad.reshape(out, (t, d))
        attn = ad.reshape(attn, (w.n_heads, t, t))
    return out, attn


# -- transformer encoder layer --------------------------------------------------------


@dataclass
class EncoderLayerWeights:
    ln1: LayerNormWeights
    attn: AttentionWeights
    ln2: LayerNormWeights
    ff1: LinearWeights
    ff2: LinearWeights


def encoder_layer_init(rng: np.random.Generator, d: int, n_heads: int) -> EncoderLayerWeights:
    """Pre-norm encoder layer; feed-forward hidden width is 2*d with GELU."""
    return EncoderLayerWeights(
        ln1=layer_norm_init(d),
        attn=attention_init(rng, d, n_heads),
        ln2=layer_norm_init(d),
        ff1=linear_init(rng, d, 2 * d),
        ff2=linear_init(rng, 2 * d, d),
    )


def transformer_encoder_layer(z, w: EncoderLayerWeights):
    """Pre-norm residual block: attention then GELU feed-forward.

    Returns ``(z_out, attn)`` with ``z_out

    .shape == z.shape``.
    """
    att_out, attn = multihead_attention(layer_norm(z, w.ln1), w.attn)
    h = z + att_out
    ff = linear(ad.gelu(linear(layer_norm(h, w.ln2), w.ff1)), w.ff2)
    return h + ff, attn


# -- convolution / group norm (backbone support) -----------------------------------------


@dataclass
class ConvWeights:
    w: Tensor  # (c_out, c_in, k, k)
    b: Tensor  # (c_out,)
    stride: int
    pad: int


def conv_init(rng: np.random.Generator, c_in: int, c_out: int, k: int, stride: int, pad: int) -> ConvWeights:
    fan_in = c_in * k * k
    return ConvWeights(
        w=uniform_fan_in(rng, fan_in, (c_out, c_in, k, k)),
        b=zeros_param((c_out,)),
        stride=stride,
        pad=pad,
    )


def conv2d(x, cw: ConvWeights):
    """2-d convolution over (B, C, H, W) via im2col + matmul."""
    bsz, c_in, h, w_ = (x.shape if hasattr(x, "shape") else np.shape(x))
    c_out, _, k, _ = cw.w.shape
    ho = (h + 2 * cw.pad - k) // cw.stride + 1
    wo = (w_ + 2 * cw.pad - k) // cw.stride + 1
    cols = ad.im2col(x, k, cw.stride, cw.pad)  # (B, Ho*Wo, C*k*k)
    wmat = ad.reshape(cw.w, (c_out, c_in * k * k)).T  # (C*k*k, C_out)
    out = ad.matmul(cols, wmat) + cw.b  # (B, Ho*Wo, C_out)
    return ad.transpose(ad.reshape(out, (bsz, ho, wo, c_out)), (0, 3, 1, 2))


@dataclass
class GroupNormWeights:
    gamma: Tensor  # (c,)
    beta: Tensor  # (c,)
    groups: int


def group_norm_init(c: int, groups: int) -> GroupNormWeights:
    if c % groups != 0:
        raise ValueError(f"group_norm: {c} channels not divisible into {groups} groups")
    return GroupNormWeights(
        gamma=Tensor(np.ones(c), requires_grad=True), beta=zeros_param((c,)), groups=groups
    )


def group_norm(x, w: GroupNormWeights, eps: float = 1e-5):
    b, c, h, wd = x.shape
    g = w.groups
    xg = ad.reshape(x, (b, g, (c // g) * h * wd))
    m = ad.tmean(xg, axis=2, keepdims=True)
    centered = xg - m
    var = ad.tmean(centered * centered, axis=2, keepdims=True)
    xn = ad.reshape(centered / ad.sqrt(var + eps), (b, c, h, wd))
    gamma = ad.reshape(w.gamma, (1, c, 1, 1))
    beta = ad.reshape(w.beta, (1, c, 1, 1))
    return xn * gamma + beta


# -- Adam --------------------------------------------------------------------------------


class MissingGradientError(RuntimeError):
    """Raised when adam_step is asked to update parameters without gradients."""

    def __init__(self, names):
        self.names = list(names)
        super().__init__(f"missing gradients for parameters: {', '.join(self.names)}")


@dataclass
class OptimizerState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(
        step=0,
        m={k: np.zeros_like(p.values) for k, p in params.items()},
        v={k: np.zeros_like(p.values) for k, p in params.items()},
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def gradients_of(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Collect ``.grad`` of every parameter; error listing any missing ones."""
    missing = [k for k, p in params.items() if p.grad is None]
    if missing:
        raise MissingGradientError(sorted(missing))
    return {k: p.grad for k, p in params.items()}


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
) -> OptimizerState:
    """One Adam update with bias correction; mutates params and state in place."""
    missing = sorted(set(params) - set(grads))
    if missing:
        raise MissingGradientError(missing)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.values.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != param shape {p.values.shape} for '{k}'")
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


def clear_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None

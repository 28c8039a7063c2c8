"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A :class:`Tensor` wraps an ``np.ndarray`` (always float64) together with an
optional gradient buffer and a record of the operation that produced it.
Calling :func:`backward` on a scalar tensor walks the recorded graph in
reverse topological order and accumulates ``d loss / d tensor`` into the
``grad`` attribute of every reachable tensor with ``requires_grad=True``.
Tensors never reached by the backward sweep keep ``grad = None``, which
readers should treat as an exact zero.

Broadcasting follows numpy semantics everywhere; backward passes sum
gradients over broadcast axes so shapes always round-trip. Shape mismatches
raise :class:`ShapeError` naming the operation and both operand shapes.

Most functions in this module are polymorphic: given plain ndarrays (or
scalars) they return plain ndarrays with no graph recording, given at least
one Tensor they record the operation. Geometry code elsewhere in the package
is written once against this API and runs either traced (training) or
untraced (data generation) depending on its inputs.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp_special


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' and '.join(map(str, self.shapes))}")


def _broadcast_shape(op: str, sa, sb):
    try:
        return np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(op, sa, sb) from None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.reshape(g, shape)


class Tensor:
    """A float64 array plus the tape entry that produced it."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "_op")

    # Let `ndarray <op> Tensor` defer to Tensor's reflected operators instead
    # of numpy trying to broadcast over the Tensor object.
    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(values: np.ndarray, parents: tuple, backward, op: str) -> "Tensor":
        out = Tensor(values)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
            out._op = op
        return out

    # -- basic protocol --------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return len(self.values)

    def __float__(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def numpy(self) -> np.ndarray:
        return self.values

    # -- operators -------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    # -- method mirrors of the functional API ----------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 0:
            axes = None
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)

    def backward(self, grad=None) -> None:
        backward(self, grad)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def _traced(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def _value(x) -> np.ndarray:
    return x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def constant(x) -> Tensor:
    return as_tensor(x)


# -- backward engine ----------------------------------------------------------


def _toposort(root: Tensor) -> list:
    """Iterative post-order over the op graph (no recursion limits)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of reachable tensors.

    ``loss`` must be scalar unless an explicit seed ``grad`` of matching
    shape is given. Gradients accumulate across calls (``+=``); clear with
    :func:`zero_grad` or by setting ``.grad = None``.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if grad is None:
        if loss.values.size != 1:
            raise ShapeError("backward", loss.shape, ())
        seed = np.ones_like(loss.values)
    else:
        seed = np.asarray(grad, dtype=np.float64)
        if seed.shape != loss.values.shape:
            raise ShapeError("backward", seed.shape, loss.values.shape)
    if not loss.requires_grad:
        return
    flowing: dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(_toposort(loss)):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._backward is None:
            # leaf (or explicitly retained) tensor: accumulate
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = flowing.get(id(p))
            flowing[id(p)] = pg if acc is None else acc + pg


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


# -- elementwise binary -------------------------------------------------------


def add(a, b):
    if not _traced(a, b):
        return np.add(_value(a), _value(b))
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    out_vals = a.values + b.values

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out_vals, (a, b), bwd, "add")


def sub(a, b):
    if not _traced(a, b):
        return np.subtract(_value(a), _value(b))
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)
    out_vals = a.values - b.values

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(out_vals, (a, b), bwd, "sub")


def mul(a, b):
    if not _traced(a, b):
        return np.multiply(_value(a), _value(b))
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    out_vals = a.values * b.values

    def bwd(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return Tensor._from_op(out_vals, (a, b), bwd, "mul")


def div(a, b):
    if not _traced(a, b):
        return np.divide(_value(a), _value(b))
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    out_vals = a.values / b.values

    def bwd(g):
        ga = _unbroadcast(g / b.values, a.shape)
        gb = _unbroadcast(-g * a.values / (b.values * b.values), b.shape)
        return ga, gb

    return Tensor._from_op(out_vals, (a, b), bwd, "div")


def maximum(a, b):
    """Elementwise max; on ties the gradient routes to the first argument."""
    if not _traced(a, b):
        return np.maximum(_value(a), _value(b))
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("maximum", a.shape, b.shape)
    take_a = a.values >= b.values
    out_vals = np.where(take_a, a.values, b.values)

    def bwd(g):
        ga = _unbroadcast(np.where(take_a, g, 0.0), a.shape)
        gb = _unbroadcast(np.where(take_a, 0.0, g), b.shape)
        return ga, gb

    return Tensor._from_op(out_vals, (a, b), bwd, "maximum")


def minimum(a, b):
    """Elementwise min; on ties the gradient routes to the first argument."""
    if not _traced(a, b):
        return np.minimum(_value(a), _value(b))
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("minimum", a.shape, b.shape)
    take_a = a.values <= b.values
    out_vals = np.where(take_a, a.values, b.values)

    def bwd(g):
        ga = _unbroadcast(np.where(take_a, g, 0.0), a.shape)
        gb = _unbroadcast(np.where(take_a, 0.0, g), b.shape)
        return ga, gb

    return Tensor._from_op(out_vals, (a, b), bwd, "minimum")


# -- elementwise unary --------------------------------------------------------


def neg(a):
    if not _traced(a):
        return -_value(a)
    out_vals = -a.values
    return Tensor._from_op(out_vals, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float):
    """``a ** c`` for a python scalar exponent."""
    if isinstance(exponent, Tensor):
        raise TypeError("power: exponent must be a python scalar")
    c = float(exponent)
    if not _traced(a):
        return _value(a) ** c
    out_vals = a.values**c

    def bwd(g):
        return (g * c * a.values ** (c - 1.0),)

    return Tensor._from_op(out_vals, (a,), bwd, "power")


def exp(a):
    if not _traced(a):
        return np.exp(_value(a))
    out_vals = np.exp(a.values)
    return Tensor._from_op(out_vals, (a,), lambda g: (g * out_vals,), "exp")


def log(a):
    if not _traced(a):
        return np.log(_value(a))
    out_vals = np.log(a.values)
    return Tensor._from_op(out_vals, (a,), lambda g: (g / a.values,), "log")


def sqrt(a):
    if not _traced(a):
        return np.sqrt(_value(a))
    out_vals = np.sqrt(a.values)

    def bwd(g):
        return (g * 0.5 / out_vals,)

    return Tensor._from_op(out_vals, (a,), bwd, "sqrt")


def tanh(a):
    if not _traced(a):
        return np.tanh(_value(a))
    out_vals = np.tanh(a.values)
    return Tensor._from_op(out_vals, (a,), lambda g: (g * (1.0 - out_vals * out_vals),), "tanh")


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # numerically stable two-sided formulation
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    if not _traced(a):
        return _sigmoid_values(_value(a))
    out_vals = _sigmoid_values(a.values)
    return Tensor._from_op(out_vals, (a,), lambda g: (g * out_vals * (1.0 - out_vals),), "sigmoid")


def _softplus_values(x: np.ndarray) -> np.ndarray:
    # max(x, 0) + log1p(exp(-|x|)) avoids overflow on both sides
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus(a):
    if not _traced(a):
        return _softplus_values(_value(a))
    out_vals = _softplus_values(a.values)
    sig = _sigmoid_values(a.values)
    return Tensor._from_op(out_vals, (a,), lambda g: (g * sig,), "softplus")


def erf(a):
    if not _traced(a):
        return _sp_special.erf(_value(a))
    out_vals = _sp_special.erf(a.values)
    two_over_sqrt_pi = 2.0 / np.sqrt(np.pi)

    def bwd(g):
        return (g * two_over_sqrt_pi * np.exp(-a.values * a.values),)

    return Tensor._from_op(out_vals, (a,), bwd, "erf")


def relu(a):
    return maximum(a, 0.0)


def gelu(a):
    """Exact Gaussian error linear unit: x * Phi(x)."""
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    return mul(a, mul(add(erf(mul(a, inv_sqrt2)), 1.0), 0.5))


def where(cond, a, b):
    """Select by a boolean mask. ``cond`` is data, never differentiated."""
    mask = cond.values.astype(bool) if isinstance(cond, Tensor) else np.asarray(cond, dtype=bool)
    if not _traced(a, b):
        return np.where(mask, _value(a), _value(b))
    a, b = as_tensor(a), as_tensor(b)
    out_vals = np.where(mask, a.values, b.values)

    def bwd(g):
        ga = _unbroadcast(np.where(mask, g, 0.0), a.shape)
        gb = _unbroadcast(np.where(mask, 0.0, g), b.shape)
        return ga, gb

    return Tensor._from_op(out_vals, (a, b), bwd, "where")


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False):
    if not _traced(a):
        return np.sum(_value(a), axis=axis, keepdims=keepdims)
    out_vals = a.values.sum(axis=axis, keepdims=keepdims)
    in_shape = a.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, in_shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, in_shape).copy(),)

    return Tensor._from_op(out_vals, (a,), bwd, "sum")


def tmean(a, axis=None, keepdims: bool = False):
    if not _traced(a):
        return np.mean(_value(a), axis=axis, keepdims=keepdims)
    n = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def softmax(a, axis: int = -1):
    """Numerically stable softmax along ``axis`` with a fused backward."""
    if not _traced(a):
        v = _value(a)
        shifted = v - v.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=axis, keepdims=True)
    v = a.values
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return Tensor._from_op(s, (a,), bwd, "softmax")


# -- shape manipulation -------------------------------------------------------


def reshape(a, shape):
    shape = tuple(int(d) for d in shape)
    if not _traced(a):
        return np.reshape(_value(a), shape)
    try:
        out_vals = a.values.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    in_shape = a.shape
    return Tensor._from_op(out_vals, (a,), lambda g: (g.reshape(in_shape),), "reshape")


def transpose(a, axes=None):
    if not _traced(a):
        return np.transpose(_value(a), axes)
    out_vals = np.transpose(a.values, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return Tensor._from_op(out_vals, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int):
    nd = a.ndim
    axes = list(range(nd))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def concat(parts, axis: int = 0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate([_value(p) for p in parts], axis=axis)
    parts = [as_tensor(p) for p in parts]
    out_vals = np.concatenate([p.values for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return Tensor._from_op(out_vals, tuple(parts), bwd, "concat")


def stack(parts, axis: int = 0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.stack([_value(p) for p in parts], axis=axis)
    expanded = []
    for p in parts:
        p = as_tensor(p)
        shape = list(p.shape)
        shape.insert(axis if axis >= 0 else axis + p.ndim + 1, 1)
        expanded.append(reshape(p, shape))
    return concat(expanded, axis=axis)


def getitem(a, key):
    if not _traced(a):
        return _value(a)[key]
    out_vals = a.values[key]
    in_shape = a.shape

    def bwd(g):
        acc = np.zeros(in_shape, dtype=np.float64)
        # basic indexing produces disjoint views, advanced indexing may repeat
        np.add.at(acc, key, g)
        return (acc,)

    return Tensor._from_op(out_vals, (a,), bwd, "getitem")


def take(a, indices, axis: int = 0):
    """Gather along an axis by an integer index array (repeats allowed)."""
    indices = np.asarray(indices)
    if not _traced(a):
        return np.take(_value(a), indices, axis=axis)
    out_vals = np.take(a.values, indices, axis=axis)
    in_shape = a.shape

    def bwd(g):
        if axis == 0 and indices.ndim == 1 and g.ndim == 1 and len(in_shape) == 1:
            return (_scatter_add(indices, g, in_shape[0]),)
        acc = np.zeros(in_shape, dtype=np.float64)
        if axis == 0:
            np.add.at(acc, indices, g)
        else:
            acc_m = np.moveaxis(acc, axis, 0)
            g_m = np.moveaxis(g, axis, 0) if indices.ndim == 1 else g
            np.add.at(acc_m, indices, g_m)
        return (acc,)

    return Tensor._from_op(out_vals, (a,), bwd, "take")


# -- segment ops (scatter reductions) -----------------------------------------


def _scatter_add(segment_ids, v, num_segments: int):
    # bincount beats ufunc.at by a wide margin on the 1-d fast path
    if v.ndim == 1:
        out = np.bincount(segment_ids, weights=v, minlength=num_segments)
        if out.shape[0] != num_segments:
            raise IndexError(
                f"segment id {int(segment_ids.max())} out of range for {num_segments} segments"
            )
        return out
    out = np.zeros((num_segments,) + v.shape[1:], dtype=np.float64)
    np.add.at(out, segment_ids, v)
    return out


def segment_sum(a, segment_ids, num_segments: int):
    """Sum rows of ``a`` into ``num_segments`` buckets given by ``segment_ids``."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if not _traced(a):
        return _scatter_add(segment_ids, _value(a), num_segments)
    out = _scatter_add(segment_ids, a.values, num_segments)

    def bwd(g):
        return (g[segment_ids],)

    return Tensor._from_op(out, (a,), bwd, "segment_sum")


def segment_max(a, segment_ids, num_segments: int, empty_value: float = 0.0):
    """Per-segment max of a 1-d array; empty segments get ``empty_value``.

    The backward pass routes the gradient to the first element attaining the
    segment maximum (strict argmax routing keeps finite differences honest).
    """
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    v = _value(a)
    if v.ndim != 1:
        raise ShapeError("segment_max", v.shape, (len(segment_ids),))
    out = np.full(num_segments, -np.inf, dtype=np.float64)
    np.maximum.at(out, segment_ids, v)
    empty = ~np.isin(np.arange(num_segments), segment_ids)
    out[empty] = empty_value
    if not _traced(a):
        return out

    hit = v == out[segment_ids]
    # first element per segment among the maxima
    idx_hit = np.nonzero(hit)[0]
    _, first = np.unique(segment_ids[idx_hit], return_index=True)
    winners = idx_hit[first]

    def bwd(g):
        acc = np.zeros_like(v)
        acc[winners] = g[segment_ids[winners]]
        return (acc,)

    return Tensor._from_op(out, (a,), bwd, "segment_max")


# -- matmul -------------------------------------------------------------------


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes.

    Operands must have ``ndim >= 2``; vectors should be reshaped explicitly.
    """
    if not _traced(a, b):
        va, vb = _value(a), _value(b)
        if va.ndim < 2 or vb.ndim < 2 or va.shape[-1] != vb.shape[-2]:
            raise ShapeError("matmul", va.shape, vb.shape)
        return np.matmul(va, vb)
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.ndim > 2 or b.ndim > 2:
        _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])
    out_vals = np.matmul(a.values, b.values)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2))
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(out_vals, (a, b), bwd, "matmul")


# -- im2col / col2im (convolution support) -------------------------------------


def _im2col_indices(c: int, h: int, w: int, k: int, stride: int):
    """Flat indices into a (C, H, W) volume for each output-position patch."""
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    i0 = np.repeat(np.arange(k), k)
    j0 = np.tile(np.arange(k), k)
    i1 = stride * np.repeat(np.arange(ho), wo)
    j1 = stride * np.tile(np.arange(wo), ho)
    rows = i0[None, :] + i1[:, None]  # (Ho*Wo, k*k)
    cols = j0[None, :] + j1[:, None]
    flat = rows * w + cols  # index into H*W
    chan = (np.arange(c) * h * w)[None, None, :]  # (1, 1, C)
    # (Ho*Wo, C*k*k) with channel-major patch layout
    return (flat[:, None, :] + chan.transpose(0, 2, 1)).reshape(ho * wo, c * k * k), ho, wo


_IM2COL_CACHE: dict = {}


def im2col(a, ksize: int, stride: int, pad: int):
    """Extract k x k patches from a (B, C, H, W) tensor.

    Returns a (B, Ho*Wo, C*k*k) tensor so a convolution is a single matmul
    against a (C*k*k, C_out) weight. Zero padding is applied symmetrically.
    """
    v = _value(a)
    if v.ndim != 4:
        raise ShapeError("im2col", v.shape, ("B", "C", "H", "W"))
    bsz, c, h, w = v.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    key = (c, hp, wp, ksize, stride)
    cached = _IM2COL_CACHE.get(key)
    if cached is None:
        cached = _im2col_indices(c, hp, wp, ksize, stride)
        if len(_IM2COL_CACHE) > 64:
            _IM2COL_CACHE.clear()
        _IM2COL_CACHE[key] = cached
    idx, ho, wo = cached

    def fwd(vals):
        if pad:
            vals = np.pad(vals, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        return vals.reshape(bsz, -1)[:, idx]

    if not _traced(a):
        return fwd(v)
    out_vals = fwd(a.values)

    def bwd(g):
        acc = np.zeros((bsz, c * hp * wp), dtype=np.float64)
        for n in range(bsz):
            np.add.at(acc[n], idx.ravel(), g[n].ravel())
        acc = acc.reshape(bsz, c, hp, wp)
        if pad:
            acc = acc[:, :, pad:-pad, pad:-pad]
        return (acc,)

    return Tensor._from_op(out_vals, (a,), bwd, "im2col")


# -- polymorphic helpers used by geometry code ---------------------------------


def values_of(x) -> np.ndarray:
    """Plain ndarray view of either a Tensor or an array-like."""
    return _value(x)


def stop_gradient(x):
    """Identity that blocks gradient flow (no-op on plain arrays)."""
    return x.detach() if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)

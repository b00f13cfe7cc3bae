"""Dense-tensor engine with reverse-mode automatic differentiation.

Every differentiable primitive the forecaster needs lives here: matmul,
softmax, layer norm, the elementwise family, attention, and dropout. A
Tensor wraps a numpy array together with an optional gradient buffer and a
closure that knows how to push gradients to its inputs; ``backward`` walks
the recorded graph once, in reverse topological order.

Tensors are value-semantic and safe to hand between threads; a graph built
by a forward pass is confined to one logical thread from forward through
backward.

Broadcasting is deliberately restricted to leading batch dimensions (a
lower-rank operand must match the trailing dims of the other exactly).
Anything fancier must go through an explicit ``expand``, which keeps shape
bugs loud.

Values are float32 by default; pass float64 arrays when running gradient
checks so central differences are meaningful.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

__all__ = [
    "Tensor",
    "tensor",
    "constant",
    "parameter",
    "matmul",
    "softmax",
    "layer_norm",
    "relu",
    "sigmoid",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "pow_scalar",
    "absolute",
    "transpose",
    "swap_last_axes",
    "reshape",
    "concat",
    "take",
    "expand",
    "mean",
    "tsum",
    "scaled_dot_attention",
    "dropout",
    "backward",
    "finite_diff_check",
    "spawn_generators",
    "glorot_uniform",
]

_FLOAT_DTYPES = (np.float32, np.float64)


def _as_array(values, dtype) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if arr.dtype.type not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A dense real-valued array that can participate in a backward pass.

    Fields: ``data`` (numpy array), ``requires_grad``, and ``grad`` (filled
    by :func:`backward`, always the same shape as ``data``). Non-leaf
    tensors additionally carry the closure and inputs recorded during the
    forward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "_op")

    def __init__(self, values, requires_grad: bool = False, dtype=np.float32):
        self.data = _as_array(values, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # Operator sugar used throughout the model code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(values, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(values, requires_grad=requires_grad, dtype=dtype)


def constant(values, dtype=np.float32) -> Tensor:
    return Tensor(values, requires_grad=False, dtype=dtype)


def parameter(values, dtype=None) -> Tensor:
    arr = np.asarray(values)
    return Tensor(arr, requires_grad=True, dtype=dtype or arr.dtype)


def _make(out_data, prev: tuple[Tensor, ...], op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in prev)
    out._prev = prev if out.requires_grad else ()
    out._backward = None
    out._op = op
    return out


def _check_leading_broadcast(a: tuple[int, ...], b: tuple[int, ...], op: str) -> None:
    """Shapes must match exactly after aligning on trailing dimensions."""
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if small != big[len(big) - len(small):]:
        raise DimensionError(f"{op}: shapes {a} and {b} are not leading-broadcast compatible")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape` (leading dims only)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# ---------------------------------------------------------------------------
# binary / unary elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_leading_broadcast(a.shape, b.shape, "add")
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def bwd():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad, b.shape))
        out._backward = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_leading_broadcast(a.shape, b.shape, "sub")
    out = _make(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def bwd():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(-out.grad, b.shape))
        out._backward = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_leading_broadcast(a.shape, b.shape, "mul")
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def bwd():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad * a.data, b.shape))
        out._backward = bwd
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = _make(a.data * c, (a,), "scale")
    if out.requires_grad:
        def bwd():
            a.accumulate_grad(out.grad * c)
        out._backward = bwd
    return out


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = _make(a.data + c, (a,), "add_scalar")
    if out.requires_grad:
        def bwd():
            a.accumulate_grad(out.grad)
        out._backward = bwd
    return out


def pow_scalar(a: Tensor, p: float) -> Tensor:
    out = _make(a.data ** p, (a,), "pow_scalar")
    if out.requires_grad:
        def bwd():
            a.accumulate_grad(out.grad * p * a.data ** (p - 1.0))
        out._backward = bwd
    return out


def absolute(a: Tensor) -> Tensor:
    out = _make(np.abs(a.data), (a,), "abs")
    if out.requires_grad:
        def bwd():
            a.accumulate_grad(out.grad * np.sign(a.data))
        out._backward = bwd
    return out


def relu(a: Tensor) -> Tensor:
    out = _make(np.maximum(a.data, 0.0), (a,), "relu")
    if out.requires_grad:
        mask = a.data > 0
        def bwd():
            a.accumulate_grad(out.grad * mask)
        out._backward = bwd
    return out


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign so neither exp overflows.
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, 0, None))),
                 np.exp(np.clip(x, None, 0)) / (1.0 + np.exp(np.clip(x, None, 0))))
    out = _make(s.astype(x.dtype), (a,), "sigmoid")
    if out.requires_grad:
        def bwd():
            a.accumulate_grad(out.grad * out.data * (1.0 - out.data))
        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = _make(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), "transpose")
    if out.requires_grad:
        inverse = tuple(np.argsort(axes))
        def bwd():
            a.accumulate_grad(np.transpose(out.grad, inverse))
        out._backward = bwd
    return out


def swap_last_axes(a: Tensor) -> Tensor:
    axes = list(range(a.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = _make(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        def bwd():
            a.accumulate_grad(out.grad.reshape(a.shape))
        out._backward = bwd
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ContractError("concat: empty tensor list")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != (axis % len(base)) and other[i] != base[i] for i in range(len(base))
        ):
            raise DimensionError(
                f"concat: shape {tuple(other)} incompatible with {tuple(base)} on axis {axis}"
            )
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        def bwd():
            offset = 0
            for t, n in zip(tensors, sizes):
                if t.requires_grad:
                    index = [slice(None)] * out.grad.ndim
                    index[axis] = slice(offset, offset + n)
                    t.accumulate_grad(out.grad[tuple(index)])
                offset += n
        out._backward = bwd
    return out


def take(a: Tensor, index) -> Tensor:
    """Basic slicing (the `slice` primitive); `index` is anything numpy
    basic indexing accepts, e.g. a tuple of slices/ints."""
    out = _make(np.ascontiguousarray(a.data[index]), (a,), "slice")
    if out.requires_grad:
        def bwd():
            g = np.zeros_like(a.data)
            g[index] = out.grad.reshape(g[index].shape)
            a.accumulate_grad(g)
        out._backward = bwd
    return out


def expand(a: Tensor, axis: int, n: int) -> Tensor:
    """Tile a size-1 axis up to length `n` (the one sanctioned escape from
    leading-only broadcasting). Backward sums over the tiled axis."""
    if a.shape[axis] != 1:
        raise DimensionError(f"expand: axis {axis} of shape {a.shape} is not 1")
    reps = [1] * a.data.ndim
    reps[axis] = n
    out = _make(np.tile(a.data, reps), (a,), "expand")
    if out.requires_grad:
        def bwd():
            a.accumulate_grad(out.grad.sum(axis=axis, keepdims=True))
        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# reductions


def _axis_tuple(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.data.ndim)
    out = _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), "sum")
    if out.requires_grad:
        def bwd():
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axes)
            a.accumulate_grad(np.broadcast_to(g, a.shape))
        out._backward = bwd
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.data.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    out = _make(a.data.mean(axis=axes, keepdims=keepdims), (a,), "mean")
    if out.requires_grad:
        def bwd():
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axes)
            a.accumulate_grad(np.broadcast_to(g, a.shape) / count)
        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# linear algebra and attention


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul: operands must be >=2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dims disagree between {a.shape} and {b.shape}")
    if a.data.ndim > 2 and b.data.ndim > 2:
        _check_leading_broadcast(a.shape[:-2], b.shape[:-2], "matmul")
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def bwd():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(np.swapaxes(a.data, -1, -2) @ out.grad, b.shape))
        out._backward = bwd
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = axis % a.data.ndim
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _make(s, (a,), "softmax")
    if out.requires_grad:
        def bwd():
            dot = (out.grad * out.data).sum(axis=axis, keepdims=True)
            a.accumulate_grad(out.data * (out.grad - dot))
        out._backward = bwd
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, axis: int = -1,
               eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance over `axis`, then affine.

    Built from differentiable primitives so its backward needs no bespoke
    rule; gain and bias must match the normalized axis length.
    """
    axis = axis % a.data.ndim
    if a.shape[axis] != gain.shape[-1] or a.shape[axis] != bias.shape[-1]:
        raise DimensionError(
            f"layer_norm: axis length {a.shape[axis]} vs gain {gain.shape} / bias {bias.shape}"
        )
    if axis != a.data.ndim - 1:
        order = [i for i in range(a.data.ndim) if i != axis] + [axis]
        return transpose(layer_norm(transpose(a, order), gain, bias, -1, eps),
                         tuple(np.argsort(order)))
    n = a.shape[-1]
    mu = expand(mean(a, axis=-1, keepdims=True), -1, n)
    centered = sub(a, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv_std = expand(pow_scalar(add_scalar(var, eps), -0.5), -1, n)
    return add(mul(mul(centered, inv_std), gain), bias)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         weight_dropout: "Callable[[Tensor], Tensor] | None" = None) -> Tensor:
    """softmax(q @ k^T / sqrt(d)) @ v over the last two axes.

    q: [..., T_q, d], k: [..., T_k, d], v: [..., T_k, d_v]. The optional
    `weight_dropout` hook is applied to the attention weights (used by the
    transformer blocks in training mode).
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: query dim {q.shape} vs key dim {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: key count {k.shape} vs value count {v.shape}")
    scores = scale(matmul(q, swap_last_axes(k)), 1.0 / float(np.sqrt(q.shape[-1])))
    weights = softmax(scores, axis=-1)
    if weight_dropout is not None:
        weights = weight_dropout(weights)
    return matmul(weights, v)


def dropout(a: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ContractError("dropout in training mode needs an explicit generator")
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return mul(a, constant(keep, dtype=a.data.dtype))


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for prev in node._prev:
            if id(prev) not in seen:
                stack.append((prev, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate gradients of `loss` w.r.t. every reachable requires_grad leaf.

    `loss` must be scalar. Gradients accumulate across calls; reset them
    explicitly (``zero_grad``) before reusing leaves in a new graph.
    """
    if loss.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(_topo_order(loss)):
        if node._backward is not None and node.grad is not None:
            node._backward()


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-4) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    `f` must be scalar-valued and deterministic; non-determinism is flagged
    by evaluating twice and comparing.
    """
    probe_a = f(x.detach())
    probe_b = f(x.detach())
    if not np.array_equal(probe_a.data, probe_b.data):
        raise ContractError("finite_diff_check: function is not deterministic")

    leaf = Tensor(x.data.astype(np.float64), requires_grad=True, dtype=np.float64)
    out = f(leaf)
    backward(out)
    analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad

    flat = leaf.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(Tensor(leaf.data, dtype=np.float64)).item()
        flat[i] = orig - step
        lo = f(Tensor(leaf.data, dtype=np.float64)).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * step)
    numeric = numeric.reshape(leaf.shape)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


# ---------------------------------------------------------------------------
# randomness and initialization


def spawn_generators(seed: int, n: int) -> list[np.random.Generator]:
    """Split one run seed into independent counter-based (Philox) streams."""
    seqs = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.Philox(s)) for s in seqs]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: Iterable[int], dtype=np.float32) -> np.ndarray:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-limit, limit, size=tuple(shape)).astype(dtype)

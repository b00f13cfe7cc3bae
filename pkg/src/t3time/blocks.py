"""Shared neural building blocks: parameter bookkeeping, linear layers, and
the pre-normalization transformer block used by every encoder and the
decoder."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .tensor import (
    Tensor,
    add,
    dropout,
    glorot_uniform,
    layer_norm,
    matmul,
    relu,
    reshape,
    scaled_dot_attention,
    transpose,
)


class ParamGroup:
    """Ordered name -> Tensor mapping for one architectural unit.

    The model stitches groups together into its registry; names are
    slash-separated paths so ablation bookkeeping can count whole subsystems.
    """

    def __init__(self, prefix: str):
        self.prefix = prefix
        self._params: dict[str, Tensor] = {}

    def new(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {self.prefix}/{name}")
        t = Tensor(values, requires_grad=True, dtype=values.dtype)
        self._params[name] = t
        return t

    def items(self):
        for name, t in self._params.items():
            yield f"{self.prefix}/{name}", t

    def size(self) -> int:
        return sum(t.size for t in self._params.values())


class Linear:
    """y = x @ w + b. Bias optional; the gating/alignment layers from the
    architecture's equations are bias-free while block internals keep one."""

    def __init__(self, group: ParamGroup, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, dtype, bias: bool = True):
        self.w = group.new(f"{name}.w", glorot_uniform(rng, d_in, d_out, (d_in, d_out), dtype))
        self.b = group.new(f"{name}.b", np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.w)
        return add(out, self.b) if self.b is not None else out


class LayerNorm:
    def __init__(self, group: ParamGroup, name: str, dim: int, dtype):
        self.gain = group.new(f"{name}.gain", np.ones(dim, dtype=dtype))
        self.bias = group.new(f"{name}.bias", np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class EncoderBlock:
    """Pre-norm transformer block: x + Attn(LN(x)), then x + FFN(LN(x)).

    Multi-head self-attention over the second-to-last axis; dropout hits the
    attention weights and the FFN hidden activations in training mode.
    """

    def __init__(self, group: ParamGroup, name: str, dim: int, heads: int,
                 ffn_hidden: int, rng: np.random.Generator, dtype):
        if dim % heads != 0:
            raise ConfigError(f"model dim {dim} not divisible by {heads} attention heads")
        self.dim = dim
        self.heads = heads
        self.norm_attn = LayerNorm(group, f"{name}.norm_attn", dim, dtype)
        self.q = Linear(group, f"{name}.q", dim, dim, rng, dtype)
        self.k = Linear(group, f"{name}.k", dim, dim, rng, dtype)
        self.v = Linear(group, f"{name}.v", dim, dim, rng, dtype)
        self.out = Linear(group, f"{name}.out", dim, dim, rng, dtype)
        self.norm_ffn = LayerNorm(group, f"{name}.norm_ffn", dim, dtype)
        self.ffn_in = Linear(group, f"{name}.ffn_in", dim, ffn_hidden, rng, dtype)
        self.ffn_out = Linear(group, f"{name}.ffn_out", ffn_hidden, dim, rng, dtype)

    def _split_heads(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return transpose(reshape(x, (b, t, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def _merge_heads(self, x: Tensor) -> Tensor:
        b, h, t, dh = x.shape
        return reshape(transpose(x, (0, 2, 1, 3)), (b, t, h * dh))

    def __call__(self, x: Tensor, drop) -> Tensor:
        """x: [B, T, dim]; `drop` is the model's dropout hook (tensor -> tensor)."""
        normed = self.norm_attn(x)
        q, k, v = self._split_heads(self.q(normed)), self._split_heads(self.k(normed)), \
            self._split_heads(self.v(normed))
        attended = scaled_dot_attention(q, k, v, weight_dropout=drop)
        x = add(x, self.out(self._merge_heads(attended)))
        normed = self.norm_ffn(x)
        return add(x, self.ffn_out(drop(relu(self.ffn_in(normed)))))


def make_dropout_hook(p: float, training: bool, rng: np.random.Generator | None):
    """Bind the configured rate / mode / stream into a tensor -> tensor hook."""
    def hook(t: Tensor) -> Tensor:
        return dropout(t, p, training, rng)
    return hook

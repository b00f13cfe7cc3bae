"""Fusion stages: horizon-aware gating between the spectral and temporal
embeddings, per-head cross-modal attention against the prompt stream,
feature-adaptive head mixing, and the channel-wise residual blend."""

from __future__ import annotations

import numpy as np

from .blocks import LayerNorm, Linear, ParamGroup
from .errors import ConfigError, ContractError, DimensionError
from .tensor import (
    Tensor,
    add,
    concat,
    constant,
    expand,
    mean,
    mul,
    relu,
    reshape,
    scale,
    scaled_dot_attention,
    sigmoid,
    softmax,
    sub,
    swap_last_axes,
    transpose,
    tsum,
)


def _ones_minus(t: Tensor) -> Tensor:
    return sub(constant(np.ones(t.shape, dtype=t.data.dtype), dtype=t.data.dtype), t)


class HorizonGate:
    """Per-(sample, channel) sigmoid weights blending the spectral and
    temporal embeddings, conditioned on the normalized forecast length.

    The temporal embedding is mean-pooled over variables to a per-sample
    summary; the horizon, divided by `norm_constant`, is appended as one
    extra input feature. A bias-free two-layer MLP produces the gate.
    """

    def __init__(self, channels: int, hidden: int, norm_constant: float,
                 rng: np.random.Generator, dtype):
        if norm_constant <= 0:
            raise ConfigError(f"horizon norm constant must be positive, got {norm_constant}")
        self.group = ParamGroup("gate")
        self.norm_constant = float(norm_constant)
        self.hidden = Linear(self.group, "hidden", channels + 1, hidden, rng, dtype, bias=False)
        self.out = Linear(self.group, "out", hidden, channels, rng, dtype, bias=False)

    def weights(self, time_emb: Tensor, horizon: int) -> Tensor:
        """[B, N, C] temporal embedding -> gate in (0, 1), shape [B, C]."""
        pooled = mean(time_emb, axis=1)
        ratio = horizon / self.norm_constant
        cond = constant(np.full((time_emb.shape[0], 1), ratio, dtype=time_emb.data.dtype),
                        dtype=time_emb.data.dtype)
        gate_in = concat([pooled, cond], axis=1)
        return sigmoid(self.out(relu(self.hidden(gate_in))))

    def __call__(self, freq_emb: Tensor, time_emb: Tensor, horizon: int,
                 forced_gate: float | None = None) -> Tensor:
        """Blend [B, N, C] branches into [B, C, N].

        `forced_gate` pins the gate to a constant (test hook for the
        saturation boundaries and the fixed 0.5 mix of the no-gating variant).
        """
        if freq_emb.shape != time_emb.shape:
            raise DimensionError(
                f"gate operands disagree: {freq_emb.shape} vs {time_emb.shape}")
        b, n, c = time_emb.shape
        if forced_gate is None:
            gate = self.weights(time_emb, horizon)
            gate = expand(reshape(gate, (b, 1, c)), 1, n)
        else:
            gate = constant(np.full((b, n, c), forced_gate, dtype=time_emb.data.dtype),
                            dtype=time_emb.data.dtype)
        mixed = add(mul(gate, freq_emb), mul(_ones_minus(gate), time_emb))
        return transpose(mixed, (0, 2, 1))


def fixed_mix(freq_emb: Tensor, time_emb: Tensor) -> Tensor:
    """Equal-weight blend used when the gating mechanism is ablated."""
    mixed = add(scale(freq_emb, 0.5), scale(time_emb, 0.5))
    return transpose(mixed, (0, 2, 1))


class CmaHead:
    """One cross-modal alignment head: queries from the gated time-spectral
    features, keys/values from the encoded prompt stream, variables as
    tokens."""

    def __init__(self, index: int, channels: int, kv_dim: int, attn_dim: int,
                 rng: np.random.Generator, dtype):
        self.group = ParamGroup(f"cma/head{index}")
        self.query = Linear(self.group, "query", channels, attn_dim, rng, dtype, bias=False)
        self.key = Linear(self.group, "key", kv_dim, attn_dim, rng, dtype, bias=False)
        self.value = Linear(self.group, "value", kv_dim, channels, rng, dtype, bias=False)

    def __call__(self, fused: Tensor, prompt: Tensor, drop) -> Tensor:
        """fused: [B, C, N], prompt: [B, E_p, N] -> aligned [B, C, N]."""
        if fused.shape[-1] != prompt.shape[-1]:
            raise DimensionError(
                f"variable counts disagree between fused {fused.shape} and "
                f"prompt {prompt.shape}")
        q = self.query(swap_last_axes(fused))
        k = self.key(swap_last_axes(prompt))
        v = self.value(swap_last_axes(prompt))
        return swap_last_axes(drop(scaled_dot_attention(q, k, v)))


class AdaptiveHeadFusion:
    """Blend head outputs with per-(sample, variable) softmax scores from a
    two-layer gating network over the concatenated head features."""

    HIDDEN = 128  # fixed hidden width of the head-scoring network

    def __init__(self, heads: int, channels: int, rng: np.random.Generator, dtype):
        self.group = ParamGroup("headgate")
        self.heads = heads
        self.score_hidden = Linear(self.group, "hidden", heads * channels, self.HIDDEN,
                                   rng, dtype, bias=False)
        self.norm = LayerNorm(self.group, "norm", self.HIDDEN, dtype)
        self.score_out = Linear(self.group, "out", self.HIDDEN, heads, rng, dtype, bias=False)

    def scores(self, head_outputs: list[Tensor]) -> Tensor:
        """Head importance simplex per (sample, variable): [B, N, H]."""
        stacked = concat([swap_last_axes(h) for h in head_outputs], axis=2)
        hidden = relu(self.norm(self.score_hidden(stacked)))
        return softmax(self.score_out(hidden), axis=-1)

    def __call__(self, head_outputs: list[Tensor]) -> Tensor:
        if not head_outputs:
            raise ContractError("adaptive head fusion needs at least one head output")
        first = head_outputs[0]
        for h in head_outputs[1:]:
            if h.shape != first.shape:
                raise DimensionError(
                    f"head outputs disagree: {h.shape} vs {first.shape}")
        b, c, n = first.shape
        weights = self.scores(head_outputs)  # [B, N, H]
        stacked = concat([reshape(swap_last_axes(h), (b, n, 1, c)) for h in head_outputs],
                         axis=2)  # [B, N, H, C]
        weights = expand(reshape(weights, (b, n, len(head_outputs), 1)), 3, c)
        return transpose(tsum(mul(weights, stacked), axis=2), (0, 2, 1))


def fuse_single_head(head_outputs: list[Tensor]) -> Tensor:
    """Head fusion degenerate case: one head passes through untouched."""
    if len(head_outputs) != 1:
        raise ContractError(f"expected exactly one head, got {len(head_outputs)}")
    return head_outputs[0]


class ChannelResidual:
    """Trainable per-channel convex blend between the aligned features and
    the pre-alignment gated features. The blend weight is sigmoid of an
    unconstrained parameter, initialized at zero (weight 0.5)."""

    def __init__(self, channels: int, dtype):
        self.group = ParamGroup("residual")
        self.mix_raw = self.group.new("mix_raw", np.zeros(channels, dtype=dtype))

    def mix(self) -> Tensor:
        return sigmoid(self.mix_raw)

    def __call__(self, aligned: Tensor, fused: Tensor) -> Tensor:
        """aligned, fused: [B, C, N] -> [B, C, N]."""
        if aligned.shape != fused.shape:
            raise DimensionError(
                f"residual operands disagree: {aligned.shape} vs {fused.shape}")
        n = aligned.shape[-1]
        gamma = expand(reshape(self.mix(), (-1, 1)), 1, n)  # [C, N]
        return add(mul(gamma, aligned), mul(_ones_minus(gamma), fused))

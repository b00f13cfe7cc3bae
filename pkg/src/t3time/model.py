"""Model assembly: tri-modal forward pass, decoder, forecast head,
ablation switches, parameter registry, and checkpoint serialization.

Checkpoint layout (little-endian):

    magic   6 bytes  b"T3CKPT"
    version u16
    config  u32 length + utf-8 key=value lines
    tensors, in registration order:
        u32 name length, utf-8 name,
        u32 ndim, u32 dims...,
        float32 payload
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass

import numpy as np

from .blocks import EncoderBlock, ParamGroup, make_dropout_hook
from .encoders import PromptBranch, TimeBranch
from .errors import CheckpointError, ConfigError, DimensionError
from .fusion import (
    AdaptiveHeadFusion,
    ChannelResidual,
    CmaHead,
    HorizonGate,
    fixed_mix,
    fuse_single_head,
)
from .spectral import FrequencyBranch
from .tensor import Tensor, add, matmul, spawn_generators, transpose

CKPT_MAGIC = b"T3CKPT"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    """Architectural and training hyperparameters plus ablation flags."""

    lookback: int = 96
    horizon: int = 96
    num_variables: int = 7
    channels: int = 64
    cma_heads: int = 4
    encoder_layers: int = 1
    decoder_layers: int = 1
    attn_heads: int = 4
    dropout: float = 0.1
    prompt_proj_dim: int = 0        # 0 -> channels
    prompt_emb_dim: int = 768
    gate_hidden: int = 0            # 0 -> channels
    pool_hidden: int = 0            # 0 -> channels
    ffn_hidden: int = 0             # 0 -> 4 * channels
    horizon_norm_constant: float = 720.0
    use_frequency: bool = True
    use_multihead_cma: bool = True
    use_residual: bool = True
    use_gating: bool = True
    variable_pos_encoding: bool = False
    seed: int = 1

    def validate(self) -> "ModelConfig":
        positive = {
            "lookback": self.lookback, "horizon": self.horizon,
            "num_variables": self.num_variables, "channels": self.channels,
            "encoder_layers": self.encoder_layers, "decoder_layers": self.decoder_layers,
            "attn_heads": self.attn_heads, "prompt_emb_dim": self.prompt_emb_dim,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.lookback < 2:
            raise ConfigError(f"lookback must be >= 2, got {self.lookback}")
        if self.cma_heads < 1:
            raise ConfigError(f"cma_heads must be >= 1, got {self.cma_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.channels % self.attn_heads:
            raise ConfigError(
                f"channels {self.channels} not divisible by attn_heads {self.attn_heads}")
        return self

    # resolved defaults
    @property
    def e_p(self) -> int:
        return self.prompt_proj_dim or self.channels

    @property
    def d_gate(self) -> int:
        return self.gate_hidden or self.channels

    @property
    def d_pool(self) -> int:
        return self.pool_hidden or self.channels

    @property
    def d_ffn(self) -> int:
        return self.ffn_hidden or 4 * self.channels

    @property
    def effective_cma_heads(self) -> int:
        return self.cma_heads if self.use_multihead_cma else 1

    def to_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line: {raw!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in values:
                continue
            raw = values[f.name]
            if f.type == "bool":
                kwargs[f.name] = raw.lower() in ("1", "true", "yes")
            elif f.type == "float":
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = int(raw)
        unknown = set(values) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs).validate()

    def ablated(self, **flags) -> "ModelConfig":
        return dataclasses.replace(self, **flags).validate()


class T3TimeModel:
    """The tri-modal forecaster.

    Structure: spectral branch and time branch blended by the horizon gate,
    prompt branch feeding cross-modal attention heads, adaptive head fusion,
    channel-wise residual, pre-norm decoder stack, and a direct multi-horizon
    linear head. Ablation flags in the config prune whole subsystems and
    their parameters.
    """

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config.validate()
        self.dtype = dtype
        init_rng, self.dropout_rng = spawn_generators(config.seed, 2)
        c = config.channels

        self.frequency = (
            FrequencyBranch(c, config.attn_heads, config.d_ffn, config.d_pool,
                            init_rng, dtype)
            if config.use_frequency else None
        )
        self.time = TimeBranch(config.lookback, c, config.attn_heads, config.d_ffn,
                               config.encoder_layers, init_rng, dtype,
                               positional_variables=config.num_variables
                               if config.variable_pos_encoding else None)
        self.prompt = PromptBranch(config.prompt_emb_dim, config.e_p, config.attn_heads,
                                   config.d_ffn, init_rng, dtype)
        self.gate = (
            HorizonGate(c, config.d_gate, config.horizon_norm_constant, init_rng, dtype)
            if (config.use_frequency and config.use_gating) else None
        )
        self.cma_heads = [
            CmaHead(i, c, config.e_p, c, init_rng, dtype)
            for i in range(config.effective_cma_heads)
        ]
        self.head_fusion = (
            AdaptiveHeadFusion(config.effective_cma_heads, c, init_rng, dtype)
            if config.use_multihead_cma else None
        )
        self.residual = ChannelResidual(c, dtype) if config.use_residual else None
        self.decoder_group = ParamGroup("decoder")
        self.decoder = [
            EncoderBlock(self.decoder_group, f"block{i}", c, config.attn_heads,
                         config.d_ffn, init_rng, dtype)
            for i in range(config.decoder_layers)
        ]
        self.head_group = ParamGroup("head")
        self.forecast_w = self.head_group.new(
            "forecast.w",
            _glorot(init_rng, c, config.horizon, (config.horizon, c), dtype))
        self.forecast_b = self.head_group.new(
            "forecast.b", np.zeros(config.horizon, dtype=dtype))

        self._registry: list[tuple[str, Tensor]] = []
        for group in self._groups():
            self._registry.extend(group.items())
        names = [n for n, _ in self._registry]
        if len(names) != len(set(names)):
            raise ConfigError("duplicate names in parameter registry")

    def _groups(self) -> list[ParamGroup]:
        groups = []
        if self.frequency is not None:
            groups.append(self.frequency.group)
        groups.append(self.time.group)
        groups.append(self.prompt.group)
        if self.gate is not None:
            groups.append(self.gate.group)
        groups.extend(head.group for head in self.cma_heads)
        if self.head_fusion is not None:
            groups.append(self.head_fusion.group)
        if self.residual is not None:
            groups.append(self.residual.group)
        groups.append(self.decoder_group)
        groups.append(self.head_group)
        return groups

    # ------------------------------------------------------------------
    # parameter registry

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self._registry)

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self._registry)

    def subsystem_sizes(self) -> dict[str, int]:
        """Element counts keyed by registry name prefix (e.g. 'spectral')."""
        sizes: dict[str, int] = {}
        for name, t in self._registry:
            prefix = name.split("/", 1)[0]
            sizes[prefix] = sizes.get(prefix, 0) + t.size
        return sizes

    def zero_grad(self) -> None:
        for _, t in self._registry:
            t.zero_grad()

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, t.data.copy()) for name, t in self._registry]

    def load_state_arrays(self, arrays: list[tuple[str, np.ndarray]]) -> None:
        current = dict(self._registry)
        if set(current) != {name for name, _ in arrays}:
            raise CheckpointError("parameter names do not match this model's registry")
        for name, values in arrays:
            target = current[name]
            if tuple(values.shape) != target.shape:
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {values.shape} vs "
                    f"model {target.shape}")
            target.data = values.astype(self.dtype)

    # ------------------------------------------------------------------
    # forward

    def forward(self, x_norm: np.ndarray, prompt_emb: np.ndarray,
                training: bool = False, forced_gate: float | None = None) -> Tensor:
        """x_norm: [B, N, L] normalized windows, prompt_emb: [B, N, d_LLM]
        frozen embeddings -> forecasts [B, horizon, N] on the normalized
        scale."""
        cfg = self.config
        b, n, length = x_norm.shape
        if length != cfg.lookback:
            raise DimensionError(
                f"input stage: lookback {length} does not match config {cfg.lookback}")
        if n != cfg.num_variables:
            raise DimensionError(
                f"input stage: {n} variables do not match config {cfg.num_variables}")
        if prompt_emb.shape != (b, n, cfg.prompt_emb_dim):
            raise DimensionError(
                f"prompt stage: embeddings {prompt_emb.shape} do not match "
                f"({b}, {n}, {cfg.prompt_emb_dim})")
        x_norm = np.asarray(x_norm, dtype=self.dtype)
        prompt_emb = np.asarray(prompt_emb, dtype=self.dtype)
        drop = make_dropout_hook(cfg.dropout, training, self.dropout_rng)

        time_emb = self.time(Tensor(x_norm, dtype=self.dtype), drop)
        if self.frequency is not None:
            freq_emb = self.frequency(x_norm, drop)
            if self.gate is not None:
                fused = self.gate(freq_emb, time_emb, cfg.horizon, forced_gate=forced_gate)
            else:
                fused = fixed_mix(freq_emb, time_emb)
        else:
            fused = transpose(time_emb, (0, 2, 1))

        prompt_stream = self.prompt(prompt_emb, drop)
        head_outputs = [head(fused, prompt_stream, drop) for head in self.cma_heads]
        aligned = (self.head_fusion(head_outputs) if self.head_fusion is not None
                   else fuse_single_head(head_outputs))
        blended = self.residual(aligned, fused) if self.residual is not None else aligned

        decoded = transpose(blended, (0, 2, 1))
        for block in self.decoder:
            decoded = block(decoded, drop)
        forecast = add(matmul(decoded, transpose(self.forecast_w, (1, 0))), self.forecast_b)
        return transpose(forecast, (0, 2, 1))

    __call__ = forward


def _glorot(rng, fan_in, fan_out, shape, dtype):
    from .tensor import glorot_uniform

    return glorot_uniform(rng, fan_in, fan_out, shape, dtype)


# ---------------------------------------------------------------------------
# ablation helpers

ABLATION_VARIANTS = {
    "full": {},
    "w/o Frequency Module": {"use_frequency": False},
    "w/o Multihead CMA": {"use_multihead_cma": False},
    "w/o Residual Connection": {"use_residual": False},
    "w/o Gating Mechanism": {"use_gating": False},
}


def ablate(config: ModelConfig, variant: str) -> ModelConfig:
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(
            f"unknown ablation variant {variant!r}; expected one of "
            f"{sorted(ABLATION_VARIANTS)}")
    return config.ablated(**ABLATION_VARIANTS[variant])


# ---------------------------------------------------------------------------
# checkpoint io


def save_checkpoint(path: str, model: T3TimeModel) -> None:
    config_blob = model.config.to_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<H", CKPT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        for name, values in model.state_arrays():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", values.ndim))
            fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
            fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def load_checkpoint(path: str, dtype=np.float32) -> T3TimeModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    offset = len(CKPT_MAGIC)
    (version,) = struct.unpack_from("<H", raw, offset)
    offset += 2
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (config_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    config = ModelConfig.from_text(raw[offset: offset + config_len].decode("utf-8"))
    offset += config_len
    arrays: list[tuple[str, np.ndarray]] = []
    while offset < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset: offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        arrays.append((name, values.copy()))
    model = T3TimeModel(config, dtype=dtype)
    model.load_state_arrays(arrays)
    return model

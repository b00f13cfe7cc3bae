"""Time-series encoding branch, prompt-embedding consumers, and the binary
embedding store shared with the exporter.

Store file layout (little-endian, bit-exact):

    magic   6 bytes  b"T3EMB\\0"
    version u16      currently 1
    num_windows u32  windows in split enumeration order (split, then
                     stride-1 sliding windows)
    num_variables u32
    dim u32          embedding width (768 for the GPT-2 exporter)
    payload          float32 values, row-major over (window, variable, dim)
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .blocks import EncoderBlock, Linear, ParamGroup
from .errors import ConfigError, DimensionError, StoreFormatError
from .tensor import Tensor, add, constant, matmul, transpose

STORE_MAGIC = b"T3EMB\x00"
STORE_VERSION = 1
_HEADER = struct.Struct("<6sHIII")


class TimeBranch:
    """Project each variable's lookback to the channel dim, then run pre-norm
    encoder blocks attending across variables.

    Variables are the tokens. By default no positional encoding is applied
    over them (they are unordered), keeping the branch permutation
    equivariant; `positional_variables` opts into a learned per-variable
    offset for data where slot identity matters.
    """

    def __init__(self, lookback: int, channels: int, heads: int, ffn_hidden: int,
                 depth: int, rng: np.random.Generator, dtype,
                 positional_variables: int | None = None):
        self.group = ParamGroup("time")
        self.lookback = lookback
        self.proj = Linear(self.group, "proj", lookback, channels, rng, dtype, bias=False)
        self.pos = (self.group.new("pos", np.zeros((positional_variables, channels),
                                                   dtype=dtype))
                    if positional_variables else None)
        self.blocks = [
            EncoderBlock(self.group, f"block{i}", channels, heads, ffn_hidden, rng, dtype)
            for i in range(depth)
        ]

    def __call__(self, x: Tensor, drop) -> Tensor:
        """x: [B, N, L] normalized windows -> [B, N, C]."""
        if x.shape[-1] != self.lookback:
            raise DimensionError(
                f"time branch expects lookback {self.lookback}, got input {x.shape}")
        out = matmul(x, self.proj.w)
        if self.pos is not None:
            out = add(out, self.pos)
        for block in self.blocks:
            out = block(out, drop)
        return out


class PromptBranch:
    """Project frozen prompt embeddings and encode across variable tokens.

    Output is transposed to [B, E_p, N] so the cross-modal attention heads can
    consume it as the key/value stream.
    """

    def __init__(self, emb_dim: int, proj_dim: int, heads: int, ffn_hidden: int,
                 rng: np.random.Generator, dtype):
        if proj_dim <= 0:
            raise ConfigError(f"prompt projection dim must be positive, got {proj_dim}")
        self.group = ParamGroup("prompt")
        self.emb_dim = emb_dim
        self.proj = Linear(self.group, "proj", emb_dim, proj_dim, rng, dtype, bias=False)
        self.encoder = EncoderBlock(self.group, "encoder", proj_dim, heads, ffn_hidden,
                                    rng, dtype)

    def __call__(self, embeddings: np.ndarray, drop) -> Tensor:
        """embeddings: [B, N, d_LLM] constants -> [B, E_p, N]."""
        if embeddings.shape[-1] != self.emb_dim:
            raise DimensionError(
                f"prompt branch expects embedding dim {self.emb_dim}, got {embeddings.shape}")
        tokens = matmul(constant(embeddings, dtype=embeddings.dtype), self.proj.w)
        return transpose(self.encoder(tokens, drop), (0, 2, 1))


# ---------------------------------------------------------------------------
# hermetic stub embedder

_STUB_SEED = 0x7335_E4B5
_STUB_STATS = 5  # first, last, min, max, trend
_STUB_MARKERS = 5


def stub_embed(window: np.ndarray, time_markers: np.ndarray | None, dim: int) -> np.ndarray:
    """Deterministic stand-in for language-model prompt embeddings.

    Summarizes each variable's raw lookback (first, last, min, max,
    trend = last - first) plus the mean calendar-marker row, then expands
    through a projection drawn once from a fixed counter-based stream. Pure:
    identical inputs give bit-identical vectors; an all-zero window with no
    markers returns the projection's bias row.
    """
    if dim <= 0:
        raise ConfigError(f"stub embedding dim must be positive, got {dim}")
    variables, length = window.shape
    stats = np.empty((variables, _STUB_STATS + _STUB_MARKERS), dtype=np.float64)
    stats[:, 0] = window[:, 0]
    stats[:, 1] = window[:, -1]
    stats[:, 2] = window.min(axis=1)
    stats[:, 3] = window.max(axis=1)
    stats[:, 4] = window[:, -1] - window[:, 0]
    if time_markers is None:
        stats[:, _STUB_STATS:] = 0.0
    else:
        marker_mean = np.asarray(time_markers, dtype=np.float64).mean(axis=0)
        stats[:, _STUB_STATS:] = np.resize(marker_mean, _STUB_MARKERS)
    proj, bias = _stub_projection(dim)
    return (stats @ proj + bias).astype(np.float32)


def _stub_projection(dim: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.Philox(_STUB_SEED))
    proj = rng.normal(size=(_STUB_STATS + _STUB_MARKERS, dim)) / np.sqrt(_STUB_STATS)
    bias = rng.normal(size=dim)
    return proj, bias


def stub_reference_vector(dim: int) -> np.ndarray:
    """What a zero window with no markers embeds to (the bias row)."""
    return _stub_projection(dim)[1].astype(np.float32)


# ---------------------------------------------------------------------------
# embedding store


class PromptEmbeddingStore:
    """Immutable (window, variable) -> float32 vector lookup, O(1) per query."""

    def __init__(self, values: np.ndarray):
        if values.ndim != 3:
            raise ConfigError(f"store values must be [windows, variables, dim], got {values.shape}")
        self.values = np.ascontiguousarray(values, dtype=np.float32)

    @property
    def num_windows(self) -> int:
        return self.values.shape[0]

    @property
    def num_variables(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def lookup(self, window_index: int, variable_index: int) -> np.ndarray:
        if not 0 <= window_index < self.num_windows:
            raise ConfigError(
                f"window index {window_index} out of range [0, {self.num_windows})")
        if not 0 <= variable_index < self.num_variables:
            raise ConfigError(
                f"variable index {variable_index} out of range [0, {self.num_variables})")
        return self.values[window_index, variable_index]

    def gather(self, window_indices) -> np.ndarray:
        """All variables for each listed window: [B, N, dim]."""
        idx = np.asarray(window_indices)
        if idx.size and (idx.min() < 0 or idx.max() >= self.num_windows):
            raise ConfigError(
                f"window indices {idx.min()}..{idx.max()} outside store range "
                f"[0, {self.num_windows})")
        return self.values[idx]


def load_embedding_store(path: str) -> PromptEmbeddingStore:
    """Read a T3EMB file; values come back bit-exact as written."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise StoreFormatError(f"truncated header in {path}", offset=len(raw))
    magic, version, windows, variables, dim = _HEADER.unpack_from(raw, 0)
    if magic != STORE_MAGIC:
        raise StoreFormatError(f"bad magic {magic!r} in {path}", offset=0)
    if version != STORE_VERSION:
        raise StoreFormatError(f"unsupported store version {version}", offset=6)
    expected = _HEADER.size + windows * variables * dim * 4
    if len(raw) != expected:
        raise StoreFormatError(
            f"payload length mismatch in {path}: header implies {expected} bytes, "
            f"file has {len(raw)}", offset=min(len(raw), expected))
    payload = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return PromptEmbeddingStore(payload.reshape(windows, variables, dim).copy())


def write_embedding_store(path: str, values: np.ndarray) -> None:
    """Write [windows, variables, dim] float32 values in the T3EMB layout."""
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 3:
        raise ConfigError(f"store values must be [windows, variables, dim], got {values.shape}")
    header = _HEADER.pack(STORE_MAGIC, STORE_VERSION, *values.shape)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes())
    os.replace(tmp, path)

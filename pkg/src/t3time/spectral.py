"""Frequency encoding branch.

Lookback windows go through a real FFT; only the magnitude spectrum is
kept. Each of the ``L_f = floor(L/2) + 1`` bins becomes a token, projected
to the channel dimension, run through one pre-norm transformer block over
the bin axis, and collapsed by learnable attention-weighted pooling.

The FFT is implemented here (iterative radix-2 for power-of-two lengths,
Bluestein's chirp-z rewrite otherwise) and is oracle-tested against a naive
O(L^2) DFT. No gradient flows through the transform: the window itself is a
graph leaf, so nothing trainable sits upstream of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import EncoderBlock, Linear, ParamGroup
from .errors import ConfigError
from .tensor import (
    Tensor,
    constant,
    expand,
    matmul,
    relu,
    reshape,
    softmax,
    tsum,
)

# ---------------------------------------------------------------------------
# FFT kernels (operate on the last axis, complex128 throughout)


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT; len must be a power of two."""
    n = x.shape[-1]
    out = x.astype(np.complex128).copy()
    if n == 1:
        return out
    # bit-reversal permutation
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    bits = n.bit_length() - 1
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    out = out[..., rev]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        out = out.reshape(*out.shape[:-1], n // size, size)
        even = out[..., :half]
        odd = out[..., half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1)
        out = out.reshape(*out.shape[:-2], n)
        size *= 2
    return out


def _ifft_pow2(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(x))) / x.shape[-1]


def _fft_bluestein(x: np.ndarray) -> np.ndarray:
    """Arbitrary-length DFT as a convolution, evaluated with radix-2 FFTs."""
    n = x.shape[-1]
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    chirp = np.exp(-1j * np.pi * k * k / n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    if n > 1:
        b[-(n - 1):] = np.conj(chirp)[1:][::-1]
    conv = _ifft_pow2(_fft_pow2(a) * _fft_pow2(b))
    return conv[..., :n] * chirp


def fft_complex(x: np.ndarray) -> np.ndarray:
    """DFT along the last axis for any length >= 1."""
    n = x.shape[-1]
    if n & (n - 1) == 0:
        return _fft_pow2(np.asarray(x, dtype=np.complex128))
    return _fft_bluestein(np.asarray(x, dtype=np.complex128))


def dft_naive(x: np.ndarray) -> np.ndarray:
    """O(L^2) reference DFT; the oracle the fast path is tested against."""
    n = x.shape[-1]
    j, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    w = np.exp(-2j * np.pi * j * k / n)
    return np.asarray(x, dtype=np.complex128) @ w


# ---------------------------------------------------------------------------
# spectrum extraction


@dataclass
class SpectrumBatch:
    """Magnitude spectra flattened to [(B*N), L_f] with the origin shape kept
    so the branch can fold back to [B, N, C] after pooling."""

    magnitudes: np.ndarray
    batch: int
    variables: int

    @property
    def bins(self) -> int:
        return self.magnitudes.shape[-1]


def spectrum_bins(lookback: int) -> int:
    return lookback // 2 + 1


def rfft_magnitude(x: np.ndarray) -> SpectrumBatch:
    """Magnitude spectrum of real windows x: [B, N, L] -> [(B*N), L_f].

    Raw magnitudes, no 1/L scaling; the learnable projection downstream
    absorbs scale. Computed in float64 and cast to the input dtype.
    """
    if x.ndim != 3:
        raise ConfigError(f"rfft_magnitude expects [B, N, L], got shape {x.shape}")
    b, n, length = x.shape
    if length < 2:
        raise ConfigError(f"lookback must be >= 2 for a spectrum, got {length}")
    spectrum = fft_complex(x.reshape(b * n, length).astype(np.float64))
    mags = np.abs(spectrum[..., : spectrum_bins(length)])
    return SpectrumBatch(mags.astype(x.dtype), b, n)


# ---------------------------------------------------------------------------
# trainable branch


class FrequencyBranch:
    """Bin tokenizer + one pre-norm encoder block + attention pooling."""

    def __init__(self, channels: int, heads: int, ffn_hidden: int, pool_hidden: int,
                 rng: np.random.Generator, dtype):
        self.group = ParamGroup("spectral")
        self.bin_proj = Linear(self.group, "bin_proj", 1, channels, rng, dtype, bias=False)
        self.encoder = EncoderBlock(self.group, "encoder", channels, heads, ffn_hidden,
                                    rng, dtype)
        self.pool_hidden = Linear(self.group, "pool_hidden", channels, pool_hidden,
                                  rng, dtype, bias=False)
        self.pool_score = Linear(self.group, "pool_score", pool_hidden, 1, rng, dtype, bias=False)

    def encode(self, spec: SpectrumBatch, drop) -> Tensor:
        """[(B*N), L_f] magnitudes -> [(B*N), L_f, C] encoded bin tokens."""
        rows, bins = spec.magnitudes.shape
        tokens = relu(matmul(constant(spec.magnitudes.reshape(rows, bins, 1),
                                      dtype=spec.magnitudes.dtype), self.bin_proj.w))
        return self.encoder(tokens, drop)

    def pool_weights(self, encoded: Tensor) -> Tensor:
        """Softmax scores over the bin axis: [(B*N), L_f, 1], a simplex per row."""
        return softmax(self.pool_score(relu(self.pool_hidden(encoded))), axis=1)

    def pool(self, encoded: Tensor, batch: int, variables: int) -> Tensor:
        """Attention-weighted sum over bins, folded back to [B, N, C]."""
        weights = expand(self.pool_weights(encoded), 2, encoded.shape[-1])
        pooled = tsum(weights * encoded, axis=1)
        return reshape(pooled, (batch, variables, encoded.shape[-1]))

    def __call__(self, x: np.ndarray, drop) -> Tensor:
        spec = rfft_magnitude(x)
        encoded = self.encode(spec, drop)
        return self.pool(encoded, spec.batch, spec.variables)

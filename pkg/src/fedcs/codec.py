"""Chunked, shuffled DCT sensing codec for model-update vectors.

A length-n update is zero-padded to the next multiple of P, passed through a
fixed seed-derived permutation, split into P equal chunks, and each chunk is
compressed to its first m/P orthonormal DCT-II coefficients. The permutation
spreads any coordinate structure uniformly across chunks so each chunk sees a
similar share of the signal support; it is generated once per experiment and
reused by every client and round.

The measurement operator per chunk is Theta = R_k D with D the orthonormal
DCT-II matrix and R_k the first-k row selector, so Theta^T r is the inverse
DCT of r zero-padded to the chunk length. Both directions are matrix-free via
scipy's FFT-based DCT.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, idct

__all__ = [
    "SensingConfig",
    "dct_forward",
    "dct_inverse",
    "make_permutation",
    "shuffle",
    "unshuffle",
    "compress",
    "lowpass_reconstruct",
    "freq_compress",
    "freq_reconstruct",
]


def dct_forward(x: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II along the last axis."""
    return dct(x, type=2, norm="ortho", axis=-1)


def dct_inverse(c: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct_forward` (orthonormal DCT-III)."""
    return idct(c, type=2, norm="ortho", axis=-1)


def _splitmix64(seed: int, counters: np.ndarray) -> np.ndarray:
    """SplitMix64 keyed by ``seed``, one output per counter value.

    Fixed published mixing constants; pure uint64 arithmetic, so the stream is
    identical on every platform and numpy version.
    """
    with np.errstate(over="ignore"):
        z = (np.uint64(seed) + (counters.astype(np.uint64) + np.uint64(1))
             * np.uint64(0x9E3779B97F4A7C15))
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def make_permutation(size: int, seed: int) -> np.ndarray:
    """Deterministic uniform permutation of ``range(size)`` derived from ``seed``.

    Each index gets a SplitMix64 key (counter = index); the permutation is the
    stable argsort of the keys. Counter-based, so the mapping depends only on
    (seed, size) and is reproducible across platforms.
    """
    if size <= 0:
        raise ValueError(f"permutation size must be positive, got {size}")
    keys = _splitmix64(seed, np.arange(size, dtype=np.uint64))
    return np.argsort(keys, kind="stable")


@dataclass(frozen=True)
class SensingConfig:
    """Geometry of the chunked sensing operator.

    n: original vector length; m: total retained coefficients; P: chunk count.
    P must divide m, and n_padded is the smallest multiple of P that is >= n.
    """

    n: int
    m: int
    P: int
    shuffle_seed: int
    n_padded: int = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.P < 1:
            raise ValueError(f"P must be positive, got {self.P}")
        n_padded = -(-self.n // self.P) * self.P
        object.__setattr__(self, "n_padded", n_padded)
        if not 1 <= self.m <= n_padded:
            raise ValueError(f"m must be in [1, {n_padded}], got {self.m}")
        if self.m % self.P:
            raise ValueError(f"P={self.P} must divide m={self.m}")

    @property
    def chunk_len(self) -> int:
        return self.n_padded // self.P

    @property
    def coeffs_per_chunk(self) -> int:
        return self.m // self.P

    @classmethod
    def from_ratio(cls, n: int, r: float, P: int, shuffle_seed: int) -> "SensingConfig":
        """Config with m ~= r*n rounded to a positive multiple of P."""
        if not 0.0 < r <= 1.0:
            raise ValueError(f"compression ratio must be in (0, 1], got {r}")
        n_padded = -(-n // P) * P
        m = int(round(r * n / P)) * P
        m = min(max(m, P), n_padded)
        return cls(n=n, m=m, P=P, shuffle_seed=shuffle_seed)

    def permutation(self) -> np.ndarray:
        return make_permutation(self.n_padded, self.shuffle_seed)


def shuffle(x: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Apply a permutation: out[i] = x[perm[i]]."""
    return np.asarray(x)[perm]


def unshuffle(y: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Invert :func:`shuffle` for the same ``perm``."""
    out = np.empty_like(np.asarray(y))
    out[perm] = y
    return out


def _check_length(x: np.ndarray, expected: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != expected:
        raise ValueError(f"{what} must be a 1-d vector of length {expected}, "
                         f"got shape {x.shape}")
    return x


def compress(x: np.ndarray, cfg: SensingConfig,
             perm: np.ndarray | None = None) -> np.ndarray:
    """Pad, shuffle, chunk, and keep the first m/P DCT coefficients per chunk.

    Returns the length-m coefficient vector (chunk-major order). Linear in x.
    """
    x = _check_length(x, cfg.n, "input")
    if perm is None:
        perm = cfg.permutation()
    padded = np.zeros(cfg.n_padded)
    padded[:cfg.n] = x
    chunks = shuffle(padded, perm).reshape(cfg.P, cfg.chunk_len)
    return dct_forward(chunks)[:, :cfg.coeffs_per_chunk].ravel()


def lowpass_reconstruct(y: np.ndarray, cfg: SensingConfig,
                        perm: np.ndarray | None = None) -> np.ndarray:
    """Adjoint-style reconstruction: zero-fill each chunk spectrum and invert.

    This is Theta^T y mapped back through the permutation; with m = n_padded
    it inverts :func:`compress` exactly.
    """
    y = _check_length(y, cfg.m, "coefficients")
    if perm is None:
        perm = cfg.permutation()
    spectra = np.zeros((cfg.P, cfg.chunk_len))
    spectra[:, :cfg.coeffs_per_chunk] = y.reshape(cfg.P, cfg.coeffs_per_chunk)
    padded = unshuffle(dct_inverse(spectra).ravel(), perm)
    return padded[:cfg.n]


def freq_compress(x: np.ndarray, m: int) -> np.ndarray:
    """First m orthonormal DCT-II coefficients of x (no shuffle, no chunking)."""
    x = np.asarray(x, dtype=np.float64)
    if not 1 <= m <= x.shape[0]:
        raise ValueError(f"m must be in [1, {x.shape[0]}], got {m}")
    return dct_forward(x)[:m]


def freq_reconstruct(y: np.ndarray, n: int) -> np.ndarray:
    """Zero-fill a truncated spectrum to length n and invert the DCT."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] > n:
        raise ValueError(f"got {y.shape[0]} coefficients for length-{n} output")
    spectrum = np.zeros(n)
    spectrum[:y.shape[0]] = y
    return dct_inverse(spectrum)

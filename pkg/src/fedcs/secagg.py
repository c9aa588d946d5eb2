"""Additive-mask aggregation over a fixed-point ring.

Clients quantize their real vectors to frac_bits fixed point, add a
pseudorandom mask, and publish the residues mod p*scale. Masks are dealt by
a trusted dealer (mask_seed) and sum to zero mod p*scale, so the server
recovers exactly the quantized sum of all vectors and learns nothing about
any proper subset (a partial sum is still uniformly masked).

The modulus M = p * scale is always a power of two <= 2^64, so uint64
arithmetic with wraparound is exact ring arithmetic after masking with M-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError

__all__ = [
    "RingParams",
    "MaskedVector",
    "derive_modulus",
    "gen_masks",
    "encrypt",
    "aggregate_residues",
    "aggregate",
]

DEFAULT_FRAC_BITS = 20


@dataclass(frozen=True)
class RingParams:
    """Power-of-two modulus p with frac_bits fixed-point fractional bits."""

    p: int
    frac_bits: int = DEFAULT_FRAC_BITS
    scale: int = field(init=False)

    def __post_init__(self):
        if self.p < 2 or (self.p & (self.p - 1)) != 0:
            raise ValueError(f"p must be a power of two >= 2, got {self.p}")
        if self.frac_bits < 0:
            raise ValueError(f"frac_bits must be nonnegative, got {self.frac_bits}")
        object.__setattr__(self, "scale", 1 << self.frac_bits)
        if self.p.bit_length() - 1 + self.frac_bits > 64:
            raise ValueError(
                f"p*scale exceeds the 64-bit residue word "
                f"(log2(p)={self.p.bit_length() - 1}, frac_bits={self.frac_bits}); "
                "use fewer frac_bits or a smaller modulus")

    @property
    def modulus(self) -> int:
        """The residue modulus M = p * scale."""
        return self.p * self.scale

    @property
    def _word_mask(self) -> int:
        return self.modulus - 1


@dataclass(frozen=True)
class MaskedVector:
    """Residues of one client's masked fixed-point vector.

    group_size (optional) records how many shares the mask set was dealt
    for, letting aggregate() detect missing shares in simulation.
    """

    residues: np.ndarray
    ring: RingParams
    group_size: int | None = None

    def __post_init__(self):
        if self.residues.dtype != np.uint64 or self.residues.ndim != 1:
            raise ValueError("residues must be a 1-d uint64 vector")


def derive_modulus(max_abs: float, num_clients: int,
                   frac_bits: int = DEFAULT_FRAC_BITS) -> RingParams:
    """Ring sized for |K| summands bounded by max_abs: p = 2^ceil(log2(max_abs*|K|)).

    Clamped to p >= 2. max_abs should already include any noise headroom.
    """
    if max_abs <= 0:
        raise ValueError(f"max_abs must be positive, got {max_abs}")
    if num_clients < 1:
        raise ValueError(f"num_clients must be >= 1, got {num_clients}")
    exponent = max(1, math.ceil(math.log2(max_abs * num_clients)))
    return RingParams(p=1 << exponent, frac_bits=frac_bits)


def gen_masks(num_clients: int, dim: int, ring: RingParams,
              mask_seed: int) -> list[np.ndarray]:
    """Trusted-dealer masks: uniform residues summing to 0 mod p*scale.

    The first num_clients-1 masks are uniform draws from a PRG keyed by
    mask_seed; the last is the negated partial sum, so cancellation is exact.
    """
    if num_clients < 1:
        raise ValueError(f"num_clients must be >= 1, got {num_clients}")
    if dim < 0:
        raise ValueError(f"dim must be nonnegative, got {dim}")
    word = np.uint64(ring._word_mask)
    rng = np.random.default_rng(mask_seed)
    masks = []
    partial = np.zeros(dim, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for _ in range(num_clients - 1):
            m = rng.integers(0, 1 << 64, size=dim, dtype=np.uint64) & word
            masks.append(m)
            partial = (partial + m) & word
        # modulus is a power of two <= 2^64: -x mod M == (0 - x) & (M-1) in uint64
        last = (np.uint64(0) - partial) & word
    masks.append(last)
    return masks


def encrypt(v: np.ndarray, mask: np.ndarray, ring: RingParams,
            group_size: int | None = None) -> MaskedVector:
    """Quantize v, add the mask, reduce mod p*scale."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape != mask.shape:
        raise ValueError(f"v and mask must be equal-length vectors, "
                         f"got {v.shape} vs {mask.shape}")
    if not np.isfinite(v).all():
        raise ValueError("vector contains NaN/Inf")
    limit = ring.p / 2.0
    vmax = float(np.abs(v).max(initial=0.0))
    if vmax >= limit:
        raise ValueError(
            f"||v||_inf = {vmax:g} >= p/2 = {limit:g}: modulus too small for "
            "these values (derive_modulus with a larger max_abs)")
    word = np.uint64(ring._word_mask)
    quantized = np.rint(v * ring.scale).astype(np.int64)
    with np.errstate(over="ignore"):
        residues = (quantized.astype(np.uint64) + mask.astype(np.uint64)) & word
    return MaskedVector(residues=residues, ring=ring, group_size=group_size)


def _check_group(masked: list[MaskedVector]) -> RingParams:
    if not masked:
        raise ValueError("nothing to aggregate")
    ring = masked[0].ring
    dim = masked[0].residues.shape[0]
    for mv in masked:
        if mv.ring != ring:
            raise ValueError("mixed ring parameters in one aggregation")
        if mv.residues.shape[0] != dim:
            raise ValueError("mixed vector lengths in one aggregation")
    sizes = {mv.group_size for mv in masked if mv.group_size is not None}
    if len(sizes) > 1:
        raise ProtocolError(f"shares from different mask groups: sizes {sorted(sizes)}")
    if sizes and sizes.pop() != len(masked):
        raise ProtocolError(
            f"aggregation needs the full mask group: expected "
            f"{[mv.group_size for mv in masked if mv.group_size][0]} shares, "
            f"got {len(masked)} (partial sums stay uniformly masked)")
    return ring


def aggregate_residues(masked: list[MaskedVector]) -> np.ndarray:
    """Ring sum of the residues (before re-centering and de-scaling)."""
    ring = _check_group(masked)
    word = np.uint64(ring._word_mask)
    total = np.zeros(masked[0].residues.shape[0], dtype=np.uint64)
    with np.errstate(over="ignore"):
        for mv in masked:
            total = (total + mv.residues) & word
    return total

def aggregate(masked: list[MaskedVector]) -> np.ndarray:
    """Sum of the plaintext vectors, exact up to fixed-point quantization.

    Requires the full mask group (masks cancel only over all shares) and a
    plaintext sum bounded by p/2 in infinity norm (no wraparound).
    """
    if not masked:
        raise ValueError("nothing to aggregate")
    ring = masked[0].ring
    total = aggregate_residues(masked)
    half = np.uint64(ring.modulus // 2)
    # shift the upper half of the ring to [-M/2, 0) via two's complement:
    # total - M == (total + (2^64 - M)) mod 2^64 reinterpreted as signed
    with np.errstate(over="ignore"):
        shifted = total + np.uint64(((1 << 64) - ring.modulus) % (1 << 64))
    signed = np.where(total >= half, shifted.view(np.int64), total.view(np.int64))
    return signed.astype(np.float64) / ring.scale

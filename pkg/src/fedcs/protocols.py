"""Federated round mechanics for all schemes and their private variants.

Scheme families:
  fl-std   full model-delta exchange
  fl-cs    compressed deltas, server-side sparse reconstruction with
           momentum and error feedback
  fl-rnd   coordinate subsampling from a per-round shared index set
  fl-freq  single-block low-frequency coefficients
Each has a -dp variant: clip to S, add Gaussian noise of per-client std
S*sigma/sqrt(|K|), and (optionally) additively mask for secure summation.

Server rounds never mutate the incoming state; they return a fresh one, so a
failed reconstruction leaves the previous round intact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import bpdn, codec, secagg
from .accountant import gaussian_vector

SCHEMES = (
    "fl-std",
    "fl-std-dp",
    "fl-cs",
    "fl-cs-dp",
    "fl-rnd",
    "fl-rnd-dp",
    "fl-freq",
    "fl-freq-dp",
)

# Per-algorithm averaging: the plain schemes weight clients by data size,
# every private variant uses the unweighted 1/|K| mean (noise calibration
# must not depend on |D_k|).  fl-cs averages uniformly in both variants.
DEFAULT_WEIGHTING = {
    "fl-std": "data_size",
    "fl-std-dp": "uniform",
    "fl-cs": "uniform",
    "fl-cs-dp": "uniform",
    "fl-rnd": "data_size",
    "fl-rnd-dp": "uniform",
    "fl-freq": "data_size",
    "fl-freq-dp": "uniform",
}


@dataclass(frozen=True)
class HyperParams:
    """Round-loop knobs shared by every scheme."""

    eta: float
    c: float
    t_cl: int
    t_gd: int
    batch_size: int
    eta_g: float = 1.0
    rho: float = 0.9
    s: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if not 0.0 < self.c <= 1.0:
            raise ValueError("sampling fraction must lie in (0, 1]")
        if self.t_cl < 0 or self.t_gd < 0:
            raise ValueError("round/epoch counts must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.s is not None and self.s <= 0:
            raise ValueError("sensitivity must be positive")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("noise multiplier must be nonnegative")


@dataclass(frozen=True)
class ServerState:
    """Global weights plus the compressed-domain momentum/error buffers.

    u and e live in measurement space (length m) and stay zero-length for
    schemes that do not use them.
    """

    w: np.ndarray
    u: np.ndarray
    e: np.ndarray
    round_index: int = 0

    @classmethod
    def initial(cls, w0: np.ndarray, m: int = 0) -> "ServerState":
        w0 = np.asarray(w0, dtype=np.float64)
        if not np.all(np.isfinite(w0)):
            raise ValueError("initial weights must be finite")
        return cls(w=w0.copy(), u=np.zeros(m), e=np.zeros(m), round_index=0)


def sample_clients(n_clients: int, c: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform subset of round(c*n) distinct client indices, sorted."""
    if not 0.0 < c <= 1.0:
        raise ValueError("sampling fraction must lie in (0, 1]")
    k = cohort_size(n_clients, c)
    if k < 1:
        raise ValueError("round(c * n_clients) must be at least 1")
    return np.sort(rng.choice(n_clients, size=k, replace=False))


def cohort_size(n_clients: int, c: float) -> int:
    """|K| = round(c * N); fixed per round."""
    return int(round(c * n_clients))


def clip(v: np.ndarray, s: float) -> np.ndarray:
    """Scale v so its l2 norm is at most s; direction preserved."""
    if s <= 0:
        raise ValueError("clip bound must be positive")
    v = np.asarray(v, dtype=np.float64)
    return v / max(1.0, float(np.linalg.norm(v)) / s)


def calibrate_sensitivity(norms) -> float:
    """Median of the observed update norms (even count: central-pair mean)."""
    norms = np.asarray(norms, dtype=np.float64)
    if norms.size == 0:
        raise ValueError("need at least one norm")
    return float(np.median(norms))


def make_weights(sizes, mode: str) -> np.ndarray:
    """Averaging weights for a cohort: data_size |D_k|/sum or uniform 1/|K|."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0:
        raise ValueError("empty cohort")
    if mode == "uniform":
        return np.full(sizes.size, 1.0 / sizes.size)
    if mode == "data_size":
        total = sizes.sum()
        if total <= 0:
            raise ValueError("data sizes must be positive")
        return sizes / total
    raise ValueError(f"unknown weighting {mode!r}")


def _weighted_mean(updates, weights) -> np.ndarray:
    stack = np.stack([np.asarray(u, dtype=np.float64) for u in updates])
    if weights is None:
        return stack.mean(axis=0)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (stack.shape[0],):
        raise ValueError("one weight per update required")
    return weights @ stack


def round_index_set(n: int, m: int, seed: int) -> np.ndarray:
    """The shared coordinate subset for one fl-rnd round (sorted, distinct)."""
    if not 1 <= m <= n:
        raise ValueError("need 1 <= m <= n")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=m, replace=False))


# ---------------------------------------------------------------------------
# client side


def local_delta(model, w, X, y, hp: HyperParams, rng) -> np.ndarray:
    """The plain fl-std payload: locally trained weights minus the broadcast."""
    from .ml.models import sgd

    trained = sgd(model, X, y, w, hp.t_gd, hp.eta, hp.batch_size, rng)
    return trained - w


client_update_std = local_delta


def client_update_cs(model, w, X, y, hp, cfg, rng, perm=None) -> np.ndarray:
    return codec.compress(local_delta(model, w, X, y, hp, rng), cfg, perm=perm)


def client_update_rnd(model, w, X, y, hp, idx, rng) -> np.ndarray:
    return local_delta(model, w, X, y, hp, rng)[idx]


def client_update_freq(model, w, X, y, hp, m, rng) -> np.ndarray:
    return codec.freq_compress(local_delta(model, w, X, y, hp, rng), m)


def privatize(payload, hp: HyperParams, k_round: int, noise_rng, mask=None, ring=None):
    """Clip to S, add per-client Gaussian noise, optionally mask.

    Noise std is S*sigma/sqrt(|K|) per coordinate so the decoded sum carries
    std S*sigma.  Without a ring the noisy clipped vector is returned in the
    clear (plaintext test mode); with one it is fixed-point encoded and masked.
    """
    if hp.s is None or hp.sigma is None:
        raise ValueError("private schemes need both s and sigma")
    if k_round < 1:
        raise ValueError("cohort size must be positive")
    clipped = clip(payload, hp.s)
    std = hp.s * hp.sigma / np.sqrt(k_round)
    noisy = clipped + gaussian_vector(clipped.size, std, noise_rng)
    if ring is None:
        return noisy
    if mask is None:
        raise ValueError("masking requires a per-client mask")
    return secagg.encrypt(noisy, mask, ring, group_size=k_round)


def client_update_std_dp(model, w, X, y, hp, k_round, rng, noise_rng, mask=None, ring=None):
    return privatize(local_delta(model, w, X, y, hp, rng), hp, k_round, noise_rng, mask, ring)


def client_update_cs_dp(model, w, X, y, hp, cfg, k_round, rng, noise_rng, mask=None, ring=None, perm=None):
    return privatize(
        client_update_cs(model, w, X, y, hp, cfg, rng, perm=perm),
        hp, k_round, noise_rng, mask, ring,
    )


def client_update_rnd_dp(model, w, X, y, hp, idx, k_round, rng, noise_rng, mask=None, ring=None):
    return privatize(
        client_update_rnd(model, w, X, y, hp, idx, rng), hp, k_round, noise_rng, mask, ring
    )


def client_update_freq_dp(model, w, X, y, hp, m, k_round, rng, noise_rng, mask=None, ring=None):
    return privatize(
        client_update_freq(model, w, X, y, hp, m, rng), hp, k_round, noise_rng, mask, ring
    )


# ---------------------------------------------------------------------------
# server side


def decode_mean(updates, ring) -> np.ndarray:
    """1/|K| mean of a cohort's private payloads, masked or plaintext."""
    if ring is not None:
        return secagg.aggregate(updates) / len(updates)
    return _weighted_mean(updates, None)


def server_round_std(state: ServerState, updates, weights=None) -> ServerState:
    avg = _weighted_mean(updates, weights)
    return replace(state, w=state.w + avg, round_index=state.round_index + 1)


def server_round_std_dp(state: ServerState, updates, ring=None) -> ServerState:
    return server_round_std(state, [decode_mean(updates, ring)])


def _cs_core(state: ServerState, y_mean, hp: HyperParams, cfg, solver_opts, perm=None):
    """Momentum, error feedback, reconstruction, error accumulation, update."""
    u = hp.rho * state.u + y_mean
    e_work = hp.eta_g * u + state.e
    s, report = bpdn.decompress(e_work, cfg, solver_opts, perm=perm)
    e = e_work - codec.compress(s, cfg, perm=perm)
    new = ServerState(w=state.w + s, u=u, e=e, round_index=state.round_index + 1)
    return new, report


def server_round_cs(state, updates, hp, cfg, solver_opts, weights=None, perm=None):
    """One fl-cs round; returns (new state, decode report).

    A solver numeric failure propagates before any state is built, so the
    caller's state is untouched.
    """
    y_mean = _weighted_mean(updates, weights)
    return _cs_core(state, y_mean, hp, cfg, solver_opts, perm=perm)


def server_round_cs_dp(state, updates, hp, cfg, solver_opts, ring=None, perm=None):
    return _cs_core(state, decode_mean(updates, ring), hp, cfg, solver_opts, perm=perm)


def server_round_rnd(state: ServerState, updates, idx, weights=None) -> ServerState:
    avg = _weighted_mean(updates, weights)
    if avg.shape != idx.shape:
        raise ValueError("payload length differs from the round index set")
    w = state.w.copy()
    w[idx] += avg
    return replace(state, w=w, round_index=state.round_index + 1)


def server_round_rnd_dp(state, updates, idx, ring=None) -> ServerState:
    return server_round_rnd(state, [decode_mean(updates, ring)], idx)


def server_round_freq(state: ServerState, updates, weights=None) -> ServerState:
    avg = _weighted_mean(updates, weights)
    x = codec.freq_reconstruct(avg, state.w.size)
    return replace(state, w=state.w + x, round_index=state.round_index + 1)


def server_round_freq_dp(state, updates, ring=None) -> ServerState:
    return server_round_freq(state, [decode_mean(updates, ring)])


def payload_length(scheme: str, n: int, m: int) -> int:
    """Entries per client update; drives the bandwidth accountant."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    return n if scheme.startswith("fl-std") else m


def mask_headroom(hp: HyperParams, k_round: int) -> float:
    """Per-entry magnitude bound used to size the masking ring.

    Clipped payloads satisfy |entry| <= S; the added noise has std
    S*sigma/sqrt(|K|), padded here by six sigmas.
    """
    if hp.s is None:
        raise ValueError("headroom needs the clip bound")
    sigma = hp.sigma or 0.0
    return hp.s * (1.0 + 6.0 * sigma / np.sqrt(k_round))

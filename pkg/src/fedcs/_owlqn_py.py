"""Pure-NumPy OWL-QN inner kernels (fallback backend).

Semantically identical to the compiled versions in ``_owlqn_native``; the
driver in :mod:`fedcs.bpdn` calls whichever set :mod:`fedcs.kernels` selected.
All vectors are float64, 1-d, C-contiguous; ``out`` arguments are written in
full.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def pseudo_gradient(s: np.ndarray, g: np.ndarray, lam: float,
                    out: np.ndarray) -> None:
    """Pseudo-gradient of f(s) + lam*||s||_1 given smooth gradient g.

    At s_i = 0 the subgradient interval is [g_i - lam, g_i + lam]; the
    pseudo-gradient is the interval endpoint closest to zero when zero is not
    inside, else zero.
    """
    np.copyto(out, g)
    out[s > 0] += lam
    out[s < 0] -= lam
    at_zero = s == 0
    lo = g[at_zero] - lam
    hi = g[at_zero] + lam
    out[at_zero] = np.where(hi < 0, hi, np.where(lo > 0, lo, 0.0))


def choose_orthant(s: np.ndarray, pg: np.ndarray, out: np.ndarray) -> None:
    """Orthant signs xi: sign(s_i), or sign(-pg_i) where s_i = 0."""
    np.sign(s, out=out)
    at_zero = s == 0
    out[at_zero] = -np.sign(pg[at_zero])


def align_direction(d: np.ndarray, pg: np.ndarray) -> None:
    """Zero components of d that are not strict descent against pg (in place)."""
    d[d * pg >= 0] = 0.0


def project_step(s: np.ndarray, d: np.ndarray, alpha: float,
                 xi: np.ndarray, out: np.ndarray) -> float:
    """out = s + alpha*d clamped to the orthant xi; returns ||out||_1.

    Coordinates whose sign after the step disagrees with xi (including
    xi_i = 0) are set to zero.
    """
    np.multiply(d, alpha, out=out)
    out += s
    out[out * xi <= 0] = 0.0
    return float(np.abs(out).sum())


def two_loop(pg: np.ndarray, mem_s: np.ndarray, mem_y: np.ndarray,
             rho: np.ndarray, order: np.ndarray, gamma: float,
             out: np.ndarray, alpha_buf: np.ndarray) -> None:
    """L-BFGS two-loop recursion: out = -(H @ pg).

    ``order`` lists memory rows oldest -> newest; ``gamma`` scales the initial
    Hessian approximation. With empty memory, out = -pg.
    """
    np.copyto(out, pg)
    for idx in range(len(order) - 1, -1, -1):
        i = order[idx]
        alpha_buf[i] = rho[i] * float(mem_s[i] @ out)
        out -= alpha_buf[i] * mem_y[i]
    out *= gamma
    for idx in range(len(order)):
        i = order[idx]
        beta = rho[i] * float(mem_y[i] @ out)
        out += (alpha_buf[i] - beta) * mem_s[i]
    np.negative(out, out=out)

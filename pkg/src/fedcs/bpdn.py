"""Basis-pursuit denoising solver for chunked DCT measurements.

Recovers a chunk signal s from y ~= Theta s by minimizing

    F(s) = 0.5 * ||y - Theta s||_2^2 + lam * ||s||_1

with OWL-QN (orthant-wise limited-memory quasi-Newton): L-BFGS directions
built from smooth-gradient differences, steered by the pseudo-gradient of the
L1 term, with backtracking line search over orthant-projected trial points.
Theta is the first-k-rows orthonormal DCT-II, applied matrix-free, so the
sparsity basis is the identity and s itself is the sparse object.

Accepted iterates strictly decrease F; non-convergence within the iteration
budget is reported in the result, never raised. Note the resolution limit of
this operator: Theta keeps the lowest k of L frequencies, so two spikes
closer than about 2*L/k samples in the chunk domain are not identifiable by
any method; recovery guarantees apply to supports separated beyond that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import SensingConfig, dct_forward, dct_inverse, unshuffle
from .kernels import ACTIVE as _K

__all__ = [
    "SolverOptions",
    "SolveReport",
    "DecodeReport",
    "theta_apply",
    "theta_adjoint",
    "bpdn_objective",
    "solve_chunk",
    "decompress",
]

#: lam=None resolves to AUTO_LAMBDA_SCALE * ||Theta^T y||_inf per chunk.
AUTO_LAMBDA_SCALE = 1e-6


def theta_apply(s: np.ndarray, k: int) -> np.ndarray:
    """Theta s: first k orthonormal DCT-II coefficients of s."""
    return dct_forward(s)[:k]


def theta_adjoint(r: np.ndarray, chunk_len: int) -> np.ndarray:
    """Theta^T r: inverse DCT of r zero-padded to the chunk length."""
    padded = np.zeros(chunk_len)
    padded[:r.shape[0]] = r
    return dct_inverse(padded)


def bpdn_objective(s: np.ndarray, y: np.ndarray, cfg: SensingConfig,
                   lam: float) -> float:
    """0.5*||y - Theta s||^2 + lam*||s||_1 for one chunk of cfg's geometry."""
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if s.shape != (cfg.chunk_len,):
        raise ValueError(f"s must have chunk length {cfg.chunk_len}, "
                         f"got shape {s.shape}")
    if y.shape != (cfg.coeffs_per_chunk,):
        raise ValueError(f"y must have {cfg.coeffs_per_chunk} coefficients, "
                         f"got shape {y.shape}")
    r = theta_apply(s, y.shape[0]) - y
    return 0.5 * float(r @ r) + lam * float(np.abs(s).sum())


@dataclass(frozen=True)
class SolverOptions:
    """OWL-QN controls. lam=None selects the per-chunk automatic weight.

    With ``continuation`` on (the default), L1 weights far below the data
    scale are reached through a geometric schedule of intermediate weights,
    warm-starting each stage; this keeps iterates sparse instead of passing
    through the dense least-squares interpolator, where tiny-lam objectives
    are nearly flat. The reported trace/status describe the final stage (the
    target lam); iteration counts are totals across stages.
    """

    lam: float | None = None
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-6
    obj_rel_tol: float = 1e-9
    c1: float = 1e-4
    backtrack: float = 0.5
    max_linesearch: int = 50
    continuation: bool = True
    continuation_start: float = 0.3   # lam_0 = start * ||Theta^T y||_inf
    continuation_drop: float = 0.1    # geometric factor between stages
    stage_tol: float = 0.02           # stage ends at pg_inf <= stage_tol * lam

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.grad_tol <= 0 or self.obj_rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must be in (0, 1)")
        if not 0 < self.continuation_drop < 1:
            raise ValueError("continuation_drop must be in (0, 1)")


@dataclass
class SolveReport:
    """Outcome of one chunk solve."""

    iterations: int
    final_objective: float
    converged: bool
    residual_norm: float
    status: str            # optimal | stagnated | max_iters | line_search_failed
    grad_inf: float
    lam: float
    trace: list[float] = field(default_factory=list, repr=False)


@dataclass
class DecodeReport:
    """Per-chunk solve reports for one decompression."""

    chunks: list[SolveReport]

    @property
    def iterations(self) -> int:
        return sum(c.iterations for c in self.chunks)

    @property
    def converged(self) -> bool:
        return all(c.converged for c in self.chunks)

    @property
    def max_grad_inf(self) -> float:
        return max((c.grad_inf for c in self.chunks), default=0.0)


def _resolve_lam(lam: float | None, corr_inf: float) -> float:
    if lam is not None:
        return lam
    return AUTO_LAMBDA_SCALE * corr_inf


def solve_chunk(y: np.ndarray, cfg: SensingConfig,
                opts: SolverOptions = SolverOptions(),
                kernel=None) -> tuple[np.ndarray, SolveReport]:
    """Minimize the chunk BPDN objective; returns (s, report).

    y holds the cfg.coeffs_per_chunk retained coefficients of one chunk.
    Starting point is s = 0; continuation stages (if enabled) only move the
    L1 weight, never the data term, so L-BFGS memory survives stage changes.
    ``kernel`` overrides the active low-level backend (used by benchmarks).
    """
    K = _K if kernel is None else kernel
    y = np.asarray(y, dtype=np.float64)
    k = cfg.coeffs_per_chunk
    L = cfg.chunk_len
    if y.shape != (k,):
        raise ValueError(f"expected {k} chunk coefficients, got shape {y.shape}")
    if not np.isfinite(y).all():
        raise ValueError("measurements contain NaN/Inf")

    M = opts.memory
    s = np.zeros(L)
    g = theta_adjoint(-y, L)          # gradient at s=0: Theta^T(Theta s - y)
    corr_inf = float(np.abs(g).max(initial=0.0))
    lam_target = _resolve_lam(opts.lam, corr_inf)
    lam = lam_target
    if opts.continuation:
        lam0 = opts.continuation_start * corr_inf
        if lam0 > lam_target:
            lam = lam0
    F = 0.5 * float(y @ y)
    l1 = 0.0
    y_norm = float(np.sqrt(y @ y))
    y_scale = max(1.0, y_norm)

    pg = np.empty(L)
    xi = np.empty(L)
    d = np.empty(L)
    s_new = np.empty(L)
    s_diff = np.empty(L)
    mem_s = np.zeros((M, L))
    mem_y = np.zeros((M, L))
    rho = np.zeros(M)
    alpha_buf = np.zeros(M)
    order: list[int] = []             # memory rows, oldest -> newest
    gamma = 1.0
    trace = [F] if lam == lam_target else []
    grad_inf = 0.0
    status = "max_iters"
    iterations = 0
    residual2 = float(y @ y)

    while iterations < opts.max_iters:
        iterations += 1
        K.pseudo_gradient(s, g, lam, pg)
        grad_inf = float(np.abs(pg).max(initial=0.0))
        if lam == lam_target:
            if grad_inf <= opts.grad_tol * y_scale:
                status, iterations = "optimal", iterations - 1
                break
        elif grad_inf <= opts.stage_tol * lam:
            # stage solved to support accuracy: tighten the L1 weight
            smooth = F - lam * l1
            lam = max(lam_target, lam * opts.continuation_drop)
            if lam < lam_target / opts.continuation_drop * 1.5:
                lam = lam_target
            F = smooth + lam * l1
            if lam == lam_target:
                trace.append(F)
            continue

        order_arr = np.asarray(order, dtype=np.int64)
        K.two_loop(pg, mem_s, mem_y, rho, order_arr, gamma, d, alpha_buf)
        K.align_direction(d, pg)
        K.choose_orthant(s, pg, xi)

        d_norm = float(np.sqrt(d @ d))
        if d_norm == 0.0:
            status = "line_search_failed"
            break
        alpha = 1.0 if order else 1.0 / d_norm

        accepted = False
        for _ in range(opts.max_linesearch):
            l1_new = K.project_step(s, d, alpha, xi, s_new)
            np.subtract(s_new, s, out=s_diff)
            delta = float(pg @ s_diff)
            if delta < 0.0:
                r_new = theta_apply(s_new, k) - y
                f_new = 0.5 * float(r_new @ r_new)
                F_new = f_new + lam * l1_new
                if F_new <= F + opts.c1 * delta:
                    accepted = True
                    break
            alpha *= opts.backtrack
        if not accepted:
            status = "line_search_failed"
            break
        if not np.isfinite(F_new):
            from .errors import NumericFailure
            raise NumericFailure("BPDN objective became non-finite")

        g_new = theta_adjoint(r_new, L)
        dg = g_new - g
        sy = float(s_diff @ dg)
        if sy > 1e-12:
            row = order.pop(0) if len(order) == M else len(order)
            mem_s[row] = s_diff
            mem_y[row] = dg
            rho[row] = 1.0 / sy
            order.append(row)
            gamma = sy / float(dg @ dg)

        rel_drop = (F - F_new) / max(abs(F), 1e-300)
        s, s_new = s_new, s
        g, F, l1 = g_new, F_new, l1_new
        residual2 = 2.0 * f_new
        if lam == lam_target:
            trace.append(F)
            if rel_drop <= opts.obj_rel_tol:
                status = "stagnated"
                break

    if status in ("optimal", "stagnated"):
        converged = True
    else:
        converged = False
        K.pseudo_gradient(s, g, lam, pg)
        grad_inf = float(np.abs(pg).max(initial=0.0))

    report = SolveReport(iterations=iterations, final_objective=F,
                         converged=converged,
                         residual_norm=float(np.sqrt(max(residual2, 0.0))),
                         status=status, grad_inf=grad_inf, lam=lam,
                         trace=trace)
    return s, report


def decompress(y: np.ndarray, cfg: SensingConfig,
               opts: SolverOptions = SolverOptions(),
               perm: np.ndarray | None = None,
               kernel=None) -> tuple[np.ndarray, DecodeReport]:
    """Recover a length-n vector from its m chunked DCT coefficients.

    Chunks are solved independently in chunk order and reassembled through
    the inverse permutation. Returns the vector plus per-chunk reports (the
    report is an additive extra over the bare decompression contract; callers
    that only want the vector ignore it).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (cfg.m,):
        raise ValueError(f"expected {cfg.m} coefficients, got shape {y.shape}")
    if perm is None:
        perm = cfg.permutation()
    parts = []
    reports = []
    for chunk in y.reshape(cfg.P, cfg.coeffs_per_chunk):
        s, rep = solve_chunk(chunk, cfg, opts, kernel=kernel)
        parts.append(s)
        reports.append(rep)
    padded = unshuffle(np.concatenate(parts), perm)
    return padded[:cfg.n], DecodeReport(chunks=reports)

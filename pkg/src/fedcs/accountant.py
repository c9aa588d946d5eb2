"""Moments accountant for the subsampled Gaussian mechanism.

Tracks the log moment generating function of the privacy loss between

    eta0 = G(0, sigma)    and    eta1 = (1-q) G(0, sigma) + q G(1, sigma)

for per-step sampling ratio q and noise multiplier sigma (both sides of the
worst case are taken). After T identical steps, the (eps, delta) conversion is

    eps(delta) = min over integer lam in [1, lam_max] of
                 (T * alpha(lam) - ln(delta)) / lam.

The model is Poisson subsampling at ratio q; the protocols here sample fixed
size cohorts of round(C*N) clients, and the audit follows the convention of
feeding q = C. The accountant is a pure function of (sigma, q, T, delta):
it never inspects protocol state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import NumericFailure

__all__ = [
    "AccountantParams",
    "PrivacySpend",
    "log_moment",
    "epsilon_for",
    "sigma_for_epsilon",
    "gaussian_vector",
]

#: Default Renyi-order search range (integer lambda values).
LAMBDA_MAX = 64

#: Integration half-width beyond [0, 1]: B = sigma * (sqrt(2*lam) + TAIL_WIDTH).
TAIL_WIDTH = 12.0


@dataclass(frozen=True)
class AccountantParams:
    """One homogeneous composition: T steps at (sigma, q), target delta."""

    sigma: float
    q: float
    steps: int
    delta: float
    lambda_max: int = LAMBDA_MAX

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.q <= 1:
            raise ValueError(f"q must be in (0, 1], got {self.q}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.lambda_max < 1:
            raise ValueError(f"lambda_max must be >= 1, got {self.lambda_max}")


@dataclass(frozen=True)
class PrivacySpend:
    """epsilon at the chosen delta, with the minimizing Renyi order."""

    epsilon: float
    best_lambda: int
    delta: float


def _log_moment_integral(lam: float, sigma: float, q: float, which: int) -> float:
    """log E under one side: which=1 -> E_{eta0}[(eta0/eta1)^lam], which=2 -> swap.

    Integrates in log space after subtracting the integrand's grid maximum, so
    moments of order e^900 stay representable.
    """
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    log_norm = math.log(sigma * math.sqrt(2.0 * math.pi))
    log_q = math.log(q)
    log_1mq = math.log1p(-q)

    def log_integrand(x: float) -> float:
        lg0 = -x * x * inv2s2
        lg1 = np.logaddexp(log_1mq + lg0, log_q - (x - 1.0) * (x - 1.0) * inv2s2)
        if which == 1:
            return (lg0 - log_norm) + lam * (lg0 - lg1)
        return (lg1 - log_norm) + lam * (lg1 - lg0)

    # The swapped moment's integrand peaks near x = lam + 1 once the mixture
    # tail dominates, so the window must grow linearly in lam, not sqrt(lam).
    half_width = lam + 1.0 + sigma * (math.sqrt(2.0 * lam) + TAIL_WIDTH)
    lo, hi = -half_width, 1.0 + half_width
    grid = np.linspace(lo, hi, 4097)
    shift = max(log_integrand(x) for x in grid)
    mass, err = quad(lambda x: math.exp(log_integrand(x) - shift),
                     lo, hi, limit=300, epsabs=1e-13, epsrel=1e-13)
    if not (math.isfinite(mass) and mass > 0.0):
        raise NumericFailure(
            f"log-moment integral failed (lam={lam}, sigma={sigma}, q={q})")
    if err > 1e-9 * mass:
        raise NumericFailure(
            f"log-moment integral did not reach tolerance (err={err:g})")
    return shift + math.log(mass)


def log_moment(lam: float, sigma: float, q: float) -> float:
    """alpha(lam) = log max(E1, E2) for one subsampled Gaussian step.

    q=1 uses the closed form lam*(lam+1)/(2*sigma^2); otherwise both moment
    integrals are evaluated numerically over [-B, 1+B].
    """
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not 0 < q <= 1:
        raise ValueError(f"q must be in (0, 1], got {q}")
    if q == 1.0:
        return lam * (lam + 1.0) / (2.0 * sigma * sigma)
    return max(_log_moment_integral(lam, sigma, q, 1),
               _log_moment_integral(lam, sigma, q, 2))


def epsilon_for(params: AccountantParams) -> PrivacySpend:
    """Minimize (T*alpha(lam) - ln delta)/lam over integer lam."""
    best_eps = math.inf
    best_lam = 1
    log_inv_delta = -math.log(params.delta)
    for lam in range(1, params.lambda_max + 1):
        alpha = log_moment(lam, params.sigma, params.q)
        eps = (params.steps * alpha + log_inv_delta) / lam
        if eps < best_eps:
            best_eps, best_lam = eps, lam
    return PrivacySpend(epsilon=best_eps, best_lambda=best_lam, delta=params.delta)


def sigma_for_epsilon(target_eps: float, q: float, steps: int, delta: float,
                      lambda_max: int = LAMBDA_MAX,
                      tol: float = 1e-3) -> float:
    """Smallest noise multiplier whose accounted epsilon is <= target_eps.

    Bisection on sigma; epsilon_for is monotone decreasing in sigma.
    """
    if target_eps <= 0:
        raise ValueError(f"target epsilon must be positive, got {target_eps}")

    def eps_at(sigma: float) -> float:
        return epsilon_for(AccountantParams(
            sigma=sigma, q=q, steps=steps, delta=delta,
            lambda_max=lambda_max)).epsilon

    lo, hi = 0.3, 1.0
    while eps_at(hi) > target_eps:
        lo, hi = hi, hi * 2.0
        if hi > 1e4:
            raise NumericFailure("sigma search diverged")
    while eps_at(lo) < target_eps and lo > 1e-3:
        lo /= 2.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if eps_at(mid) > target_eps:
            lo = mid
        else:
            hi = mid
    return hi


def gaussian_vector(dim: int, std: float, rng: np.random.Generator) -> np.ndarray:
    """Spherical Gaussian sample; std=0 returns exact zeros without consuming rng."""
    if dim < 0:
        raise ValueError(f"dim must be nonnegative, got {dim}")
    if std < 0:
        raise ValueError(f"std must be nonnegative, got {std}")
    if std == 0.0:
        return np.zeros(dim)
    return rng.normal(0.0, std, size=dim)

"""Gaussian-mechanism noise multiplier for sensitivity-1 queries.

The multiplier is found numerically from the exact (analytic) privacy profile
of the Gaussian mechanism rather than from the classical tail bound, which is
loose for large epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import log_ndtr

SIGMA_BRACKET = (1e-4, 1e4)


def gaussian_delta(sigma: float, epsilon: float) -> float:
    """Smallest delta for which N(0, sigma^2) noise on a sensitivity-1 query is (eps, delta)-DP."""
    a = 1.0 / (2.0 * sigma)
    b = epsilon * sigma
    first = math.exp(log_ndtr(a - b))
    second = math.exp(epsilon + log_ndtr(-a - b))
    return first - second


def calibrate_sigma(epsilon: float, delta: float, *, rtol: float = 1e-9) -> float:
    """Smallest sigma with ``gaussian_delta(sigma, epsilon) <= delta``, by bisection."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    lo, hi = SIGMA_BRACKET
    if gaussian_delta(hi, epsilon) > delta:
        raise ValueError(f"no sigma <= {hi:g} achieves ({epsilon}, {delta})-DP")
    if gaussian_delta(lo, epsilon) <= delta:
        raise ValueError(f"sigma below {lo:g} already achieves ({epsilon}, {delta})-DP")
    # delta(sigma) is decreasing; bisect in log space.
    log_lo, log_hi = math.log(lo), math.log(hi)
    while log_hi - log_lo > rtol:
        mid = 0.5 * (log_lo + log_hi)
        if gaussian_delta(math.exp(mid), epsilon) <= delta:
            log_hi = mid
        else:
            log_lo = mid
    return math.exp(log_hi)


def classical_sigma(epsilon: float, delta: float) -> float:
    """sqrt(2 ln(1.25/delta)) / epsilon. Only valid for epsilon < 1; kept for cross-checks."""
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


@dataclass(frozen=True)
class PrivacyParams:
    """Noise multiplier plus the per-row clip norm.

    Build from (epsilon, delta) with :meth:`from_budget`, or pass ``sigma``
    directly when an experiment is parameterized by the multiplier.
    """

    sigma: float
    zeta: float = 1.0
    epsilon: float | None = None
    delta: float | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")

    @classmethod
    def from_budget(cls, epsilon: float, delta: float, zeta: float = 1.0) -> "PrivacyParams":
        return cls(sigma=calibrate_sigma(epsilon, delta), zeta=zeta, epsilon=epsilon, delta=delta)


def sigma_to_mechanism_noise(params: PrivacyParams, sensitivity: float) -> float:
    if sensitivity < 0:
        raise ValueError("sensitivity must be non-negative")
    return sensitivity * params.sigma

"""Risk arithmetic: Gaussian CVaR, the tail coefficient, and the squared
2-Wasserstein distance between one-dimensional Gaussians.

Two coefficient modes are exposed. The default, exact_gaussian_cvar,
uses pdf(ppf(1-alpha))/alpha, the tail expectation coefficient of a
standard Gaussian. The paper_literal mode keeps the simpler expression
pdf(alpha)/cdf(alpha), which is not that tail expectation; it exists so
results under either convention can be produced and compared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class CoefficientMode(str, Enum):
    EXACT_GAUSSIAN_CVAR = "exact_gaussian_cvar"
    PAPER_LITERAL = "paper_literal"


@dataclass
class GaussianCostReturn:
    """Mean and spread of the cost-to-go distribution at one (s, a).

    Fields may be scalars or equal-shaped arrays (one entry per batch row);
    cvar and wasserstein2_sq broadcast elementwise either way.
    """

    mean: float
    std: float

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.std) < 0):
            raise ValueError(f"std must be >= 0, got {self.std}")


@dataclass
class RiskConfig:
    alpha: float = 0.5
    coefficient_mode: CoefficientMode = CoefficientMode.EXACT_GAUSSIAN_CVAR

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"risk.alpha must lie in (0, 1], got {self.alpha}")
        self.coefficient_mode = CoefficientMode(self.coefficient_mode)


_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_pdf(x: float) -> float:
    return _INV_SQRT2PI * math.exp(-0.5 * x * x)


def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / _SQRT2))


# Acklam's rational approximation of the standard normal quantile,
# refined below with one Halley step to full double precision.
_PPF_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_PPF_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_PPF_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_PPF_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)


def normal_ppf(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    if p == 0.0:
        return -math.inf
    if p == 1.0:
        return math.inf
    a, b, c, d = _PPF_A, _PPF_B, _PPF_C, _PPF_D
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
             / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0))
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = ((((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
             / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
              / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0))
    # one Halley refinement step
    e = normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def risk_coefficient(cfg: RiskConfig) -> float:
    """Multiplier on the cost-return spread at tail level alpha.

    Exact mode: pdf(ppf(1 - alpha)) / alpha, the mean-excess coefficient
    of a standard Gaussian. Literal mode: pdf(alpha) / cdf(alpha), the
    formula as printed. Both are nonnegative.
    """
    if cfg.coefficient_mode is CoefficientMode.EXACT_GAUSSIAN_CVAR:
        if cfg.alpha == 1.0:
            return 0.0
        return normal_pdf(normal_ppf(1.0 - cfg.alpha)) / cfg.alpha
    return normal_pdf(cfg.alpha) / normal_cdf(cfg.alpha)


def cvar(g: GaussianCostReturn, cfg: RiskConfig) -> float:
    """Closed-form tail expectation of N(mean, std^2): mean + coeff * std."""
    return g.mean + risk_coefficient(cfg) * g.std


def wasserstein2_sq(p: GaussianCostReturn, q: GaussianCostReturn) -> float:
    """Squared 2-Wasserstein distance between one-dimensional Gaussians."""
    dm = p.mean - q.mean
    ds = p.std - q.std
    return dm * dm + ds * ds

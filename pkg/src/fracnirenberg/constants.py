"""Gamma-function helpers and the named constants of the fractional Nirenberg problem."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError


def gamma(x):
    """Gamma function for positive real arguments (scalar or array)."""
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError("gamma is only defined here for finite x > 0")
    out = special.gamma(arr)
    return float(out) if out.ndim == 0 else out


def gamma_ratio(a, b):
    """Gamma(a)/Gamma(b) evaluated without forming either factor.

    Both arguments must be positive, except that ``b`` may hit a pole of
    Gamma (b = 0), in which case the ratio is 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # poch(z, m) = Gamma(z + m) / Gamma(z), stable for large z
    out = special.poch(b, a - b)
    return float(out) if out.ndim == 0 else out


def sphere_area(n: int) -> float:
    """Surface measure of the unit n-sphere S^n in R^{n+1}."""
    return 2.0 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)


def multiplier(k, n: int, sigma: float):
    """Eigenvalue of P_sigma on degree-k spherical harmonics of S^n.

    lambda_k = Gamma(k + n/2 + sigma) / Gamma(k + n/2 - sigma).
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if not 0.0 < sigma <= 1.0:
        raise DomainError("sigma must lie in (0,1]")
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise DomainError("degree k must be nonnegative")
    return gamma_ratio(k + n / 2 + sigma, k + n / 2 - sigma)


def critical_exponent(n: int, sigma: float) -> float:
    return (n + 2 * sigma) / (n - 2 * sigma)


def _check(n, sigma):
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if not 0.0 < sigma < 1.0:
        raise DomainError("sigma must lie in (0,1)")
    if n <= 2 * sigma:
        raise DomainError("need n > 2 sigma")


@dataclass(frozen=True)
class ConformalConstants:
    n: int
    sigma: float
    c_n_sigma: float
    c_n_neg_sigma: float
    N_sigma: float
    beta_n_sigma: float
    a_liouville: float

    @property
    def p_critical(self) -> float:
        return critical_exponent(self.n, self.sigma)

    @property
    def alpha(self) -> float:
        """Decay half-exponent (n - 2 sigma)/2."""
        return (self.n - 2 * self.sigma) / 2

    @property
    def c0(self) -> float:
        """Neumann-data constant N_sigma * c(n, sigma)."""
        return self.N_sigma * self.c_n_sigma


def make_constants(n: int, sigma: float) -> ConformalConstants:
    """All closed-form constants for dimension ``n`` and order ``sigma``.

    n = 1 is accepted for flat-space work (Poisson kernel on the line).
    """
    _check(n, sigma)
    n = int(n)
    c = gamma_ratio(n / 2 + sigma, n / 2 - sigma)
    c_neg = (2 ** (2 * sigma) * sigma * math.gamma((n + 2 * sigma) / 2)
             / (math.pi ** (n / 2) * math.gamma(1 - sigma)))
    N = 2 ** (1 - 2 * sigma) * math.gamma(1 - sigma) / math.gamma(sigma)
    beta = math.gamma((n + 2 * sigma) / 2) / (math.pi ** (n / 2) * math.gamma(sigma))
    a = (N * c * 2 ** (2 * sigma)) ** ((n - 2 * sigma) / (4 * sigma))
    return ConformalConstants(n, float(sigma), float(c), c_neg, N, beta, a)

"""Small quadrature building blocks shared by the operator and extension modules."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import special

from .constants import sphere_area


@lru_cache(maxsize=64)
def gauss_legendre(m: int):
    return special.roots_legendre(m)


@lru_cache(maxsize=64)
def _jacobi(m: int, a: float, b: float):
    return special.roots_jacobi(m, a, b)


def gauss_jacobi_interval(m: int, lo: float, hi: float, b: float):
    """Nodes/weights for int_lo^hi (x - lo)^b f(x) dx."""
    y, w = _jacobi(m, 0.0, float(b))
    half = 0.5 * (hi - lo)
    return lo + half * (1 + y), w * half ** (1 + b)


def log_panels(lo: float, hi: float, ratio: float = 2.0, m: int = 16):
    """Composite Gauss-Legendre rule on [lo, hi] with geometrically growing panels."""
    npan = max(1, int(math.ceil(math.log(hi / lo) / math.log(ratio))))
    edges = lo * (hi / lo) ** (np.arange(npan + 1) / npan)
    y, w = gauss_legendre(m)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (a + b) + 0.5 * (b - a) * y[None, :]
    weights = 0.5 * (b - a) * w[None, :]
    return nodes.ravel(), weights.ravel()


def log_variable_rule(lo: float, hi: float, per_unit: int = 12, m: int = 16):
    """Gauss-Legendre in s = log(rho) on [lo, hi]; returns rho nodes and d(rho) weights."""
    span = math.log(hi / lo)
    npan = max(1, int(math.ceil(span * per_unit / m)))
    edges = np.linspace(math.log(lo), math.log(hi), npan + 1)
    y, w = gauss_legendre(m)
    a, b = edges[:-1, None], edges[1:, None]
    s = 0.5 * (a + b) + 0.5 * (b - a) * y[None, :]
    ws = 0.5 * (b - a) * w[None, :]
    rho = np.exp(s)
    return rho.ravel(), (ws * rho).ravel()


@lru_cache(maxsize=32)
def sphere_directions(n: int, m: int):
    """Product rule on the unit sphere S^{n-1} in R^n; weights sum to 1.

    Exact for polynomials of degree < m in each angular variable.
    """
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([0.5, 0.5])
    if n == 2:
        k = max(m, 2)
        ang = 2 * math.pi * np.arange(k) / k
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), np.full(k, 1.0 / k)
    a = (n - 3) / 2
    s, ws = special.roots_jacobi(max(m // 2 + 1, 2), a, a)
    ws = ws / ws.sum()
    sub, wsub = sphere_directions(n - 1, m)
    dirs = np.concatenate(
        [np.sqrt(1 - s[:, None, None] ** 2) * sub[None, :, :],
         np.broadcast_to(s[:, None, None], (s.size, sub.shape[0], 1))], axis=2)
    return dirs.reshape(-1, n), (ws[:, None] * wsub[None, :]).ravel()


@lru_cache(maxsize=64)
def radial_cosine_rule(n: int, m: int):
    """Nodes/weights (sum 1) for averaging over S^{n-1} a function of s = omega_1."""
    if n == 1:
        return np.array([-1.0, 1.0]), np.array([0.5, 0.5])
    a = (n - 3) / 2
    s, w = special.roots_jacobi(m, a, a)
    return s, w / w.sum()


def ball_measure(n: int) -> float:
    """|S^{n-1}|, the measure of the unit sphere in R^n."""
    return sphere_area(n - 1) if n >= 2 else 2.0

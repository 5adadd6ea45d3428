"""Quadrature grids on S^n and spectral transforms.

Two layouts are supported:

* ``ZONAL``: functions of the last ambient coordinate x = xi_{n+1} = cos(theta)
  on S^n for any n >= 2, expanded in unit-normalised Gegenbauer polynomials
  C_k^{(n-1)/2}(x).
* ``FULL``: functions on S^2 on a Gauss-Legendre x uniform-longitude grid,
  expanded in real orthonormal spherical harmonics.

Coordinates: theta is colatitude measured from the north pole (0,...,0,1),
so the south pole is x = -1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import special

from .constants import sphere_area
from .errors import DomainError, ResolutionError, ShapeError


class GridKind(str, Enum):
    FULL = "full2sphere"
    ZONAL = "zonal"


def _polished_gauss(N: int, n: int, x):
    """Newton-refine Gegenbauer Gauss nodes (step 1e-14, at most 100 steps)
    and rebuild the weights.

    The library rules carry a few 1e-15 of weight bias, which the growing
    multipliers amplify. Weights are proportional to 1/((1-x^2) C_N'(x)^2),
    C_N' = 2 nu C_{N-1}^{nu+1}, scaled to the exact mass B(1/2, n/2).
    """
    nu = (n - 1) / 2
    for _ in range(100):
        dx = gegenbauer_eval(N, nu, x) / (2 * nu * gegenbauer_eval(N - 1, nu + 1, x))
        x = x - dx
        if np.max(np.abs(dx)) <= 1e-14:
            break
    d = gegenbauer_eval(N - 1, nu + 1, x)
    w = 1 / ((1 - x * x) * d * d)
    return x, w * (special.beta(0.5, n / 2) / w.sum())


def gauss_gegenbauer(npts: int, n: int):
    """Nodes/weights for int_{-1}^{1} f(x) (1-x^2)^{(n-2)/2} dx, nodes ascending."""
    a = (n - 2) / 2
    if n == 2:
        x, w = special.roots_legendre(npts)
    else:
        x, w = special.roots_jacobi(npts, a, a)
    if npts > 1:
        x, w = _polished_gauss(npts, n, x)
    order = np.argsort(x)
    return x[order], w[order]


def gegenbauer_eval(k: int, nu: float, x):
    """Gegenbauer polynomial C_k^nu(x) by the three-term recurrence."""
    if nu <= 0:
        raise DomainError("nu must be positive")
    x = np.asarray(x, dtype=float)
    c_prev = np.ones_like(x)
    if k == 0:
        return c_prev if c_prev.ndim else float(c_prev)
    c = 2 * nu * x
    for j in range(2, k + 1):
        c_prev, c = c, (2 * x * (j + nu - 1) * c - (j + 2 * nu - 2) * c_prev) / j
    return c if c.ndim else float(c)


def _log_norm_sq(k, n):
    """log of int_{S^n} (C_k^nu)^2 dvol, nu = (n-1)/2."""
    nu = (n - 1) / 2
    k = np.asarray(k, dtype=float)
    return (math.log(sphere_area(n - 1)) + math.log(math.pi) + (1 - 2 * nu) * math.log(2)
            + special.gammaln(k + 2 * nu) - special.gammaln(k + 1)
            - np.log(k + nu) - 2 * special.gammaln(nu))


def zonal_basis(kmax: int, n: int, x) -> np.ndarray:
    """Unit-normalised zonal harmonics Y_0..Y_kmax at x; shape (len(x), kmax+1)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nu = (n - 1) / 2
    out = np.empty((x.size, kmax + 1))
    out[:, 0] = 1.0 / math.sqrt(sphere_area(n))
    if kmax == 0:
        return out
    # ratio r_k = sqrt(h_{k-1}/h_k) of consecutive squared norms
    ks = np.arange(1, kmax + 1, dtype=float)
    r = np.sqrt(ks * (ks + nu) / ((ks + 2 * nu - 1) * (ks - 1 + nu)))
    out[:, 1] = 2 * nu * x * r[0] * out[:, 0]
    for k in range(2, kmax + 1):
        rk, rk1 = r[k - 1], r[k - 2]
        out[:, k] = ((2 * x * (k + nu - 1) / k) * rk * out[:, k - 1]
                     - ((k + 2 * nu - 2) / k) * rk * rk1 * out[:, k - 2])
    return out


def zonal_basis_derivative(kmax: int, n: int, x) -> np.ndarray:
    """d/dx of the unit-normalised zonal harmonics; shape (len(x), kmax+1)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nu = (n - 1) / 2
    out = np.zeros((x.size, kmax + 1))
    if kmax == 0:
        return out
    # C_k^nu' = 2 nu C_{k-1}^{nu+1}
    c_prev = np.ones_like(x)
    c = 2 * (nu + 1) * x
    lam = nu + 1
    raw = [c_prev, c]
    for j in range(2, kmax):
        c_prev, c = c, (2 * x * (j + lam - 1) * c - (j + 2 * lam - 2) * c_prev) / j
        raw.append(c)
    ks = np.arange(1, kmax + 1)
    scale = 2 * nu * np.exp(-0.5 * _log_norm_sq(ks, n))
    for k in ks:
        out[:, k] = scale[k - 1] * raw[k - 1]
    return out


def assoc_legendre_by_order(kmax: int, x, sin_theta=None):
    """Yield (m, P) with P[:, j] = normalised P_{m+j}^m(x), j = 0..kmax-m.

    Normalisation: 2 pi int_{-1}^{1} P_k^m(x)^2 dx = 1. Pass ``sin_theta``
    when it is known more accurately than sqrt(1 - x^2) (near the poles).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if sin_theta is None:
        s = np.sqrt(np.clip(1 - x * x, 0.0, None))
    else:
        s = np.atleast_1d(np.asarray(sin_theta, dtype=float))
    pmm = np.full_like(x, 1.0 / math.sqrt(4 * math.pi))
    for m in range(kmax + 1):
        if m > 0:
            pmm = -math.sqrt((2 * m + 1) / (2 * m)) * s * pmm
        col = np.empty((x.size, kmax + 1 - m))
        col[:, 0] = pmm
        if m + 1 <= kmax:
            col[:, 1] = math.sqrt(2 * m + 3) * x * pmm
        for k in range(m + 2, kmax + 1):
            a = math.sqrt((4 * k * k - 1) / (k * k - m * m))
            b = math.sqrt(((k - 1) ** 2 - m * m) / (4 * (k - 1) ** 2 - 1))
            col[:, k - m] = a * (x * col[:, k - m - 1] - b * col[:, k - m - 2])
        yield m, col


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Gauss grid in x = cos(theta); uniform longitudes for the full S^2 layout.

    ``weights`` integrate against (1-x^2)^{(n-2)/2} dx; the longitude factor
    (|S^{n-1}| for zonal, 2 pi / lon_count for full) lives in ``lon_factor``.
    """

    n: int
    kind: GridKind
    x: np.ndarray
    weights: np.ndarray
    lon_count: int = 1
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def zonal(cls, n: int, nodes: int) -> "SphereGrid":
        if n < 2:
            raise DomainError("zonal grids need n >= 2")
        x, w = gauss_gegenbauer(nodes, n)
        return cls(n, GridKind.ZONAL, x, w, 1)

    @classmethod
    def full(cls, nlat: int, nlon: Optional[int] = None) -> "SphereGrid":
        x, w = gauss_gegenbauer(nlat, 2)
        return cls(2, GridKind.FULL, x, w, int(nlon or 2 * nlat))

    @property
    def theta(self) -> np.ndarray:
        return np.arccos(self.x)

    @property
    def phi(self) -> np.ndarray:
        return 2 * math.pi * np.arange(self.lon_count) / self.lon_count

    @property
    def shape(self):
        if self.kind is GridKind.ZONAL:
            return (self.x.size,)
        return (self.x.size, self.lon_count)

    @property
    def lon_factor(self) -> float:
        if self.kind is GridKind.ZONAL:
            return sphere_area(self.n - 1)
        return 2 * math.pi / self.lon_count

    @property
    def max_degree(self) -> int:
        if self.kind is GridKind.ZONAL:
            return self.x.size - 1
        return min(self.x.size - 1, (self.lon_count - 1) // 2)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Weights w with sum(w * f) = int_{S^n} f dvol for f on this grid."""
        w = self.weights * self.lon_factor
        if self.kind is GridKind.FULL:
            w = np.repeat(w[:, None], self.lon_count, axis=1)
        return w

    @cached_property
    def points(self) -> np.ndarray:
        """Ambient coordinates of the nodes, shape grid.shape + (n+1,)."""
        st = np.sqrt(np.clip(1 - self.x ** 2, 0, None))
        if self.kind is GridKind.ZONAL:
            pts = np.zeros((self.x.size, self.n + 1))
            pts[:, 0] = st
            pts[:, -1] = self.x
            return pts
        ph = self.phi
        pts = np.empty(self.shape + (3,))
        pts[..., 0] = st[:, None] * np.cos(ph)[None, :]
        pts[..., 1] = st[:, None] * np.sin(ph)[None, :]
        pts[..., 2] = self.x[:, None]
        return pts

    def integrate(self, values) -> float:
        return float(np.sum(self.quad_weights * values))

    def area(self) -> float:
        return float(np.sum(self.quad_weights))

    # --- cached basis tables -------------------------------------------------
    def zonal_table(self, kmax: int) -> np.ndarray:
        key = ("zonal", kmax)
        if key not in self._cache:
            self._cache[key] = zonal_basis(kmax, self.n, self.x)
        return self._cache[key]

    def legendre_table(self, kmax: int):
        key = ("legendre", kmax)
        if key not in self._cache:
            self._cache[key] = [col for _, col in assoc_legendre_by_order(kmax, self.x)]
        return self._cache[key]

    def trig_table(self, kmax: int):
        key = ("trig", kmax)
        if key not in self._cache:
            ms = np.arange(kmax + 1)
            ang = np.outer(self.phi, ms)
            self._cache[key] = (np.cos(ang), np.sin(ang))
        return self._cache[key]


@dataclass(frozen=True)
class SpectralCoeffs:
    """Coefficients in the unit-normalised basis.

    ZONAL: ``coeffs[k]``. FULL: ``coeffs[k, kmax + m]`` for |m| <= k, with
    m > 0 the cos(m phi) harmonic and m < 0 the sin(|m| phi) one.
    """

    n: int
    kind: GridKind
    kmax: int
    coeffs: np.ndarray

    def degree_energy(self) -> np.ndarray:
        """sum_m |c_{k,m}|^2 for each degree k."""
        if self.kind is GridKind.ZONAL:
            return self.coeffs ** 2
        return np.sum(self.coeffs ** 2, axis=1)

    def degrees(self) -> np.ndarray:
        """Degree index for every coefficient (same shape as ``coeffs``)."""
        k = np.arange(self.kmax + 1)
        if self.kind is GridKind.ZONAL:
            return k
        return np.repeat(k[:, None], 2 * self.kmax + 1, axis=1)

    def scale_by_degree(self, factors) -> "SpectralCoeffs":
        factors = np.asarray(factors, dtype=float)
        if self.kind is GridKind.ZONAL:
            c = self.coeffs * factors
        else:
            c = self.coeffs * factors[:, None]
        return SpectralCoeffs(self.n, self.kind, self.kmax, c)

    def __add__(self, other):
        return SpectralCoeffs(self.n, self.kind, self.kmax, self.coeffs + other.coeffs)

    def __mul__(self, scalar):
        return SpectralCoeffs(self.n, self.kind, self.kmax, self.coeffs * scalar)

    __rmul__ = __mul__

    def mean(self) -> float:
        """Value of the degree-0 component (the spherical mean)."""
        c0 = self.coeffs[0] if self.kind is GridKind.ZONAL else self.coeffs[0, self.kmax]
        return float(c0 / math.sqrt(sphere_area(self.n)))


def full_index(kmax: int):
    """Boolean mask of the valid (k, m) entries in a FULL coefficient array."""
    k = np.arange(kmax + 1)[:, None]
    m = np.arange(-kmax, kmax + 1)[None, :]
    return np.abs(m) <= k


@dataclass(frozen=True, eq=False)
class SphereFunction:
    """Field sampled on a SphereGrid.

    ``exact`` optionally holds a closed form f(points) used for off-grid
    evaluation; otherwise values are interpolated spectrally.
    """

    grid: SphereGrid
    values: np.ndarray
    exact: Optional[Callable] = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ShapeError(f"values of shape {vals.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("sphere function values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, grid: SphereGrid, f: Callable, keep_exact: bool = True):
        return cls(grid, f(grid.points), f if keep_exact else None)

    @cached_property
    def interp_coeffs(self) -> SpectralCoeffs:
        return analyze(self, self.grid.max_degree)

    def evaluate(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.exact is not None:
            return np.asarray(self.exact(points), dtype=float)
        return evaluate_coeffs(self.interp_coeffs, points)

    def integrate(self) -> float:
        return self.grid.integrate(self.values)

    def with_values(self, values, exact=None) -> "SphereFunction":
        return SphereFunction(self.grid, values, exact)


def analyze(f: SphereFunction, kmax: int) -> SpectralCoeffs:
    """Project ``f`` onto harmonics of degree <= kmax by Gauss quadrature."""
    grid = f.grid
    if kmax > grid.max_degree:
        raise ResolutionError(f"kmax={kmax} exceeds grid resolution {grid.max_degree}")
    if grid.kind is GridKind.ZONAL:
        table = grid.zonal_table(kmax)
        c = table.T @ (grid.weights * grid.lon_factor * f.values)
        return SpectralCoeffs(grid.n, grid.kind, kmax, c)
    four = np.fft.rfft(f.values, axis=1) * grid.lon_factor
    a = four.real
    b = -four.imag
    out = np.zeros((kmax + 1, 2 * kmax + 1))
    sq2 = math.sqrt(2.0)
    for m, col in enumerate(grid.legendre_table(kmax)):
        wcol = col * grid.weights[:, None]
        if m == 0:
            out[m:, kmax] = wcol.T @ a[:, 0]
        else:
            out[m:, kmax + m] = sq2 * (wcol.T @ a[:, m])
            out[m:, kmax - m] = sq2 * (wcol.T @ b[:, m])
    return SpectralCoeffs(2, grid.kind, kmax, out)


def synthesize(c: SpectralCoeffs, grid: SphereGrid) -> SphereFunction:
    """Evaluate the expansion ``c`` at the nodes of ``grid``."""
    if c.kind != grid.kind or c.n != grid.n:
        raise ShapeError("coefficient kind/dimension does not match the grid")
    if grid.kind is GridKind.ZONAL:
        if c.kmax > grid.max_degree:
            table = zonal_basis(c.kmax, grid.n, grid.x)
        else:
            table = grid.zonal_table(c.kmax)
        return SphereFunction(grid, table @ c.coeffs)
    kmax = c.kmax
    if kmax > (grid.lon_count - 1) // 2:
        raise ResolutionError("too few longitudes for this band limit")
    cos_t, sin_t = grid.trig_table(kmax)
    gc = np.zeros((grid.x.size, kmax + 1))
    gs = np.zeros((grid.x.size, kmax + 1))
    sq2 = math.sqrt(2.0)
    for m, col in enumerate(grid.legendre_table(kmax)):
        if m == 0:
            gc[:, 0] = col @ c.coeffs[m:, kmax]
        else:
            gc[:, m] = sq2 * (col @ c.coeffs[m:, kmax + m])
            gs[:, m] = sq2 * (col @ c.coeffs[m:, kmax - m])
    return SphereFunction(grid, gc @ cos_t.T + gs @ sin_t.T)


def evaluate_coeffs(c: SpectralCoeffs, points) -> np.ndarray:
    """Evaluate an expansion at arbitrary points of S^n (last axis = n+1)."""
    points = np.asarray(points, dtype=float)
    lead = points.shape[:-1]
    pts = points.reshape(-1, points.shape[-1])
    if c.kind is GridKind.ZONAL:
        x = np.clip(pts[:, -1], -1.0, 1.0)
        return (zonal_basis(c.kmax, c.n, x) @ c.coeffs).reshape(lead)
    x = np.clip(pts[:, 2], -1.0, 1.0)
    st = np.hypot(pts[:, 0], pts[:, 1])
    ph = np.arctan2(pts[:, 1], pts[:, 0])
    out = np.zeros(x.size)
    sq2 = math.sqrt(2.0)
    kmax = c.kmax
    for m, col in assoc_legendre_by_order(kmax, x, st):
        if m == 0:
            out += col @ c.coeffs[m:, kmax]
        else:
            out += sq2 * (col @ c.coeffs[m:, kmax + m]) * np.cos(m * ph)
            out += sq2 * (col @ c.coeffs[m:, kmax - m]) * np.sin(m * ph)
    return out.reshape(lead)


def delta_coeffs(n: int, kind: GridKind, kmax: int, k: int, m: int = 0) -> SpectralCoeffs:
    """Coefficient vector with a single unit entry at degree k (order m)."""
    if kind is GridKind.ZONAL:
        c = np.zeros(kmax + 1)
        c[k] = 1.0
    else:
        c = np.zeros((kmax + 1, 2 * kmax + 1))
        c[k, kmax + m] = 1.0
    return SpectralCoeffs(n, kind, kmax, c)


def laplacian_eigenvalues(kmax: int, n: int) -> np.ndarray:
    """-Delta eigenvalue k(k+n-1) for each degree."""
    k = np.arange(kmax + 1, dtype=float)
    return k * (k + n - 1)


def apply_laplacian(f: SphereFunction, kmax: Optional[int] = None) -> SphereFunction:
    """Spectral Laplace-Beltrami operator (band-limited to kmax)."""
    kmax = f.grid.max_degree if kmax is None else kmax
    c = analyze(f, kmax).scale_by_degree(-laplacian_eigenvalues(kmax, f.grid.n))
    return synthesize(c, f.grid)


def zonal_derivative(f: SphereFunction, kmax: Optional[int] = None) -> np.ndarray:
    """d f / dx at the nodes for a zonal field, x = xi_{n+1}."""
    if f.grid.kind is not GridKind.ZONAL:
        raise ShapeError("zonal_derivative needs a zonal grid")
    kmax = f.grid.max_degree if kmax is None else kmax
    c = analyze(f, kmax)
    return zonal_basis_derivative(kmax, f.grid.n, f.grid.x) @ c.coeffs

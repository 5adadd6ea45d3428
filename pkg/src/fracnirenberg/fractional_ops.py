"""The intertwining operator P_sigma on S^n and its flat counterpart.

Two independent realisations of P_sigma are provided: the spectral
multiplier (degree-wise Gamma ratio) and the singular-integral form with
the chordal kernel |xi - zeta|^{-(n+2 sigma)}. The stereographic chart
carries sphere fields to R^n for comparison with (-Delta)^sigma.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .constants import make_constants, multiplier
from .errors import DomainError
from .quadrature import (ball_measure, gauss_jacobi_interval, log_panels, radial_cosine_rule,
                         sphere_directions)
from .sphere_spectral import GridKind, SphereFunction, analyze, synthesize


# --------------------------------------------------------------------------- spectral
def apply_psigma_spectral(v: SphereFunction, sigma: float, kmax: Optional[int] = None) -> SphereFunction:
    """P_sigma v by multiplying degree-k coefficients with Gamma(k+n/2+s)/Gamma(k+n/2-s)."""
    kmax = v.grid.max_degree if kmax is None else kmax
    c = analyze(v, kmax)
    lam = multiplier(np.arange(kmax + 1), v.grid.n, sigma)
    return synthesize(c.scale_by_degree(lam), v.grid)


# --------------------------------------------------------------------------- integral form
def _tangent_frame(xi):
    """Orthonormal basis of the tangent plane of S^2 at xi (two vectors)."""
    xi = np.asarray(xi, dtype=float)
    e = np.eye(3)[np.argmin(np.abs(xi))]
    t1 = e - xi * (e @ xi)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(xi, t1)
    return t1, t2


def geodesic_circle_means(v: SphereFunction, xi, theta, n_angle: int) -> np.ndarray:
    """Mean of v over the geodesic spheres of radius theta centred at xi."""
    xi = np.asarray(xi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    ct, st = np.cos(theta)[:, None], np.sin(theta)[:, None]
    if v.grid.kind is GridKind.FULL:
        t1, t2 = _tangent_frame(xi)
        om = 2 * math.pi * np.arange(n_angle) / n_angle
        dirs = np.cos(om)[:, None] * t1 + np.sin(om)[:, None] * t2
        pts = ct[:, :, None] * xi[None, None, :] + st[:, :, None] * dirs[None, :, :]
        return v.evaluate(pts).mean(axis=1)
    # zonal field: only zeta_{n+1} matters
    n = v.grid.n
    x0 = float(np.clip(xi[-1], -1, 1))
    s0 = math.sqrt(max(0.0, 1 - x0 * x0))
    s, w = radial_cosine_rule(n, n_angle)
    z = np.clip(ct * x0 - st * s0 * s[None, :], -1, 1)
    pts = np.zeros(z.shape + (n + 1,))
    pts[..., 0] = np.sqrt(1 - z * z)
    pts[..., -1] = z
    return v.evaluate(pts) @ w


def apply_psigma_integral(v: SphereFunction, sigma: float, xi, n_radial: Optional[int] = None,
                          n_angle: Optional[int] = None) -> float:
    """P_sigma v at one point xi through the singular-integral representation.

    Geodesic polar coordinates around xi reduce the kernel integral to
    int_0^pi (v(xi) - vbar(theta)) sin^{n-1}(theta) / (2 sin(theta/2))^{n+2s} d theta
    whose integrand behaves like theta^{1-2s} near 0; that power is carried
    by a Gauss-Jacobi rule, the remaining factor is analytic.
    """
    xi = np.asarray(xi, dtype=float)
    n = v.grid.n
    if xi.shape != (n + 1,) or abs(np.linalg.norm(xi) - 1) > 1e-12:
        raise DomainError("evaluation point must lie on the unit sphere")
    consts = make_constants(n, sigma)
    kres = v.grid.max_degree
    n_radial = n_radial or max(64, kres + 48)
    if n_angle is None:
        n_angle = 2 * kres + 4 if v.grid.kind is GridKind.FULL else kres // 2 + 8
    b = 1 - 2 * sigma
    theta, w = gauss_jacobi_interval(n_radial, 0.0, math.pi, b)
    vxi = float(v.evaluate(xi[None, :])[0])
    vbar = geodesic_circle_means(v, xi, theta, n_angle)
    chord = 2 * np.sin(theta / 2)
    h = (vxi - vbar) * np.sin(theta) ** (n - 1) * theta ** (-b) / chord ** (n + 2 * sigma)
    integral = ball_measure(n) * float(np.dot(w, h))
    return consts.c_n_sigma * vxi + consts.c_n_neg_sigma * integral


# --------------------------------------------------------------------------- stereographic chart
@dataclass(frozen=True)
class StereoChart:
    """F_P : R^n -> S^n minus {-P}, sending 0 to the pole ``south_pole``.

    The default chart is F(x) = (2x/(1+|x|^2), (|x|^2-1)/(|x|^2+1)) with
    south pole (0,...,0,-1).
    """

    n: int
    south_pole: Optional[np.ndarray] = None

    def __post_init__(self):
        sp = np.zeros(self.n + 1)
        sp[-1] = -1.0
        if self.south_pole is None:
            object.__setattr__(self, "south_pole", sp)
        else:
            p = np.asarray(self.south_pole, dtype=float)
            if abs(np.linalg.norm(p) - 1) > 1e-12:
                raise DomainError("south_pole must be a unit vector")
            object.__setattr__(self, "south_pole", p)

    def _mirrors(self):
        """Unit normals of the Householder chain taking (0,..,0,-1) to the pole.

        Near the default pole s - p cancels, so there H_p H_{s+p} is used;
        otherwise the single reflection across s - p.
        """
        s = np.zeros(self.n + 1)
        s[-1] = -1.0
        p = self.south_pole
        if np.array_equal(s, p):
            return ()
        if s @ p > 0:
            u = s + p
            return (u / np.linalg.norm(u), p)
        w = s - p
        return (w / np.linalg.norm(w),)

    def _orient(self, pts, inverse: bool = False):
        chain = self._mirrors()
        for w in (chain[::-1] if inverse else chain):
            pts = pts - 2 * (pts @ w)[..., None] * w
        return pts

    def to_sphere(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        pts = np.concatenate([2 * x / (1 + r2), (r2 - 1) / (r2 + 1)], axis=-1)
        return self._orient(pts)

    def from_sphere(self, xi) -> np.ndarray:
        xi = self._orient(np.asarray(xi, dtype=float), inverse=True)
        return xi[..., :-1] / (1 - xi[..., -1:])

    @staticmethod
    def jacobian(x) -> np.ndarray:
        """|J_F| = (2/(1+|x|^2))^n."""
        x = np.asarray(x, dtype=float)
        return (2 / (1 + np.sum(x * x, axis=-1))) ** x.shape[-1]


def stereo_push(v, chart: StereoChart, sigma: float, x) -> np.ndarray:
    """u(x) = (2/(1+|x|^2))^{(n-2s)/2} v(F(x)); ``v`` a SphereFunction or callable."""
    x = np.asarray(x, dtype=float)
    n = chart.n
    ev = v.evaluate if isinstance(v, SphereFunction) else v
    factor = (2 / (1 + np.sum(x * x, axis=-1))) ** ((n - 2 * sigma) / 2)
    return factor * ev(chart.to_sphere(x))


def stereo_pull(u: Callable, chart: StereoChart, sigma: float, xi) -> np.ndarray:
    """Inverse of stereo_push: v(xi) = ((1+|x|^2)/2)^{(n-2s)/2} u(x), x = F^{-1}(xi)."""
    x = chart.from_sphere(xi)
    factor = ((1 + np.sum(x * x, axis=-1)) / 2) ** ((chart.n - 2 * sigma) / 2)
    return factor * u(x)


# --------------------------------------------------------------------------- flat operator
def flat_fractional_laplacian(u: Callable, x, sigma: float, n: int, radial: bool = False,
                              R: float = 50.0, n_angle: int = 64, n_inner: int = 24,
                              panel_nodes: int = 16, rho_inner: float = 0.25) -> np.ndarray:
    """(-Delta)^sigma u at points x of R^n by direct kernel quadrature.

    Uses the symmetric second-difference form
    C int_0^inf rho^{-1-2s} (u(x) - mean_omega [u(x+rho w)+u(x-rho w)]/2) |S^{n-1}| d rho,
    Gauss-Jacobi near rho = 0, geometric Gauss-Legendre panels on
    [rho_inner, R] and an analytic tail assuming u ~ A |x|^{2s-n}.

    With ``radial=True`` ``u`` is a profile u(r) and x are radii (any n).
    """
    C = make_constants(n, sigma).c_n_neg_sigma
    x = np.atleast_1d(np.asarray(x, dtype=float))
    rho0, w0 = gauss_jacobi_interval(n_inner, 0.0, rho_inner, 1 - 2 * sigma)
    w0 = w0 * rho0 ** (-2.0)               # weight carries rho^{1-2s}; integrand has rho^{-1-2s}
    rho1, w1 = log_panels(rho_inner, R, 2.0, panel_nodes)
    w1 = w1 * rho1 ** (-1 - 2 * sigma)
    rho = np.concatenate([rho0, rho1, [R]])

    if radial:
        s, ws = radial_cosine_rule(n, n_angle)
        r = x.ravel()

        def mean_at(rh):
            d = np.sqrt(np.clip(r[:, None, None] ** 2 + rh[None, :, None] ** 2
                                + 2 * r[:, None, None] * rh[None, :, None] * s[None, None, :], 0, None))
            return u(d) @ ws

        ux = u(r)
    else:
        dirs, wd = sphere_directions(n, n_angle)
        pts = x.reshape(-1, n)

        def mean_at(rh):
            plus = pts[:, None, None, :] + rh[None, :, None, None] * dirs[None, None, :, :]
            minus = pts[:, None, None, :] - rh[None, :, None, None] * dirs[None, None, :, :]
            return 0.5 * (u(plus) + u(minus)) @ wd

        ux = u(pts)
    means = mean_at(rho)
    diff = ux[:, None] - means
    body = diff[:, :rho0.size] @ w0 + diff[:, rho0.size:-1] @ w1
    # tail beyond R: u(x) R^{-2s}/(2s) minus A R^{-n}/n with A = mean(R) R^{n-2s}
    tail = ux * R ** (-2 * sigma) / (2 * sigma) - means[:, -1] * R ** (n - 2 * sigma) * R ** (-n) / n
    out = C * ball_measure(n) * (body + tail)
    return out.reshape(x.shape if radial else x.shape[:-1])


def verify_conjugation(v: SphereFunction, sigma: float, sample_points, chart: Optional[StereoChart] = None,
                       R: float = 50.0, n_angle: int = 64) -> float:
    """Max relative gap between (P_sigma v)(F(x)) and
    |J_F|^{-(n+2s)/2n} (-Delta)^sigma (|J_F|^{(n-2s)/2n} v o F)(x) over sample points x.

    Near a zero of the left side the gap is measured against 1% of its
    largest sampled magnitude instead.
    """
    n = v.grid.n
    chart = chart or StereoChart(n)
    x = np.asarray(sample_points, dtype=float).reshape(-1, n)
    lhs = apply_psigma_spectral(v, sigma).evaluate(chart.to_sphere(x))
    r2 = np.sum(x * x, axis=-1)
    if v.grid.kind is GridKind.ZONAL and np.allclose(chart.south_pole[:-1], 0):
        # zonal fields push forward to radial profiles
        def prof(r):
            r = np.asarray(r, dtype=float)
            e = np.zeros(r.shape + (n,))
            e[..., 0] = r
            return stereo_push(v, chart, sigma, e)

        flat = flat_fractional_laplacian(prof, np.sqrt(r2), sigma, n, radial=True, R=R, n_angle=n_angle)
    else:
        flat = flat_fractional_laplacian(lambda y: stereo_push(v, chart, sigma, y), x, sigma, n,
                                         R=R, n_angle=n_angle)
    rhs = ((1 + r2) / 2) ** ((n + 2 * sigma) / 2) * flat
    # pointwise relative gap, floored so zeros of P_sigma v do not divide by ~0
    scale = np.maximum(np.abs(lhs), 1e-2 * np.max(np.abs(lhs)) + 1e-300)
    return float(np.max(np.abs(lhs - rhs) / scale))

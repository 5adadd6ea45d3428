"""Numerical checks of the integral identities and structural conditions.

Each report is a small dataclass with ``to_json`` so experiment scripts can
store it next to the data that produced it.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DomainError, ResolutionError, ShapeError
from .kfunctions import KFunction, flat_from_callable
from .quadrature import (ball_measure, gauss_jacobi_interval, gauss_legendre, radial_cosine_rule,
                         sphere_directions)
from .sphere_spectral import GridKind, SphereFunction, analyze, apply_laplacian, zonal_derivative


class _Report:
    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


@dataclass
class KWReport(_Report):
    components: List[float]
    quadrature_estimate_error: float


@dataclass
class PohozaevReport(_Report):
    flat_term: float
    lateral_term: float
    sum: float
    scale: float


@dataclass
class BocherFit(_Report):
    A: float
    H_residual: float


@dataclass
class StarBetaReport(_Report):
    beta: float
    L_holder: float
    L_ratio: float
    witness_points: list
    sample_count: int = 0
    pair_count: int = 0
    shells: List[float] = field(default_factory=list)


# --------------------------------------------------------------------------- Kazdan-Warner
def _tail_norm(f: SphereFunction, frac: float = 0.25) -> float:
    """L2 norm of the top ``frac`` of the resolved degrees of f."""
    c = analyze(f, f.grid.max_degree)
    e = c.degree_energy()
    k0 = int(math.floor((1 - frac) * (e.size - 1)))
    return float(math.sqrt(np.sum(e[k0 + 1:])))


def kazdan_warner(K: SphereFunction, v: SphereFunction, sigma: float) -> KWReport:
    """Components int <grad K, grad xi_j> v^{2n/(n-2s)} for j = 1..n+1.

    On the full S^2 grid the tangential products come from the Laplacian
    identity 2<grad f, grad g> = Delta(fg) - f Delta g - g Delta f with
    Delta xi_j = -n xi_j. On zonal grids <grad K, grad xi_{n+1}> = K'(x)(1-x^2)
    and the other components vanish by symmetry.

    The error estimate combines the unresolved spectral tail of the
    integrand weight, the tail of K, and a round-off floor.
    """
    grid = v.grid
    if K.grid is not grid and K.values.shape != v.values.shape:
        raise ShapeError("K and v must live on the same grid")
    if np.any(v.values <= 0):
        raise DomainError("Kazdan-Warner check needs v > 0")
    n = grid.n
    q = 2 * n / (n - 2 * sigma)
    wq = v.values ** q
    qw = grid.quad_weights
    weight = v.with_values(wq)
    L = grid.max_degree
    if grid.kind is GridKind.ZONAL:
        x = grid.x
        g = np.zeros_like(x) if np.ptp(K.values) == 0 else zonal_derivative(K) * (1 - x * x)
        comps = np.zeros(n + 1)
        comps[-1] = float(np.sum(qw * g * wq))
        glist = [g]
    else:
        pts = grid.points
        lapK = apply_laplacian(K).values
        comps = np.zeros(3)
        glist = []
        for j in range(3):
            xj = pts[..., j]
            prod = K.with_values(K.values * xj)
            if np.ptp(K.values) == 0:
                g = np.zeros_like(xj)
            else:
                g = 0.5 * (apply_laplacian(prod).values + n * K.values * xj - xj * lapK)
            comps[j] = float(np.sum(qw * g * wq))
            glist.append(g)
    w_tail = _tail_norm(weight)
    k_tail = _tail_norm(K)
    w_norm = math.sqrt(max(grid.integrate(wq * wq), 0.0))
    est = 0.0
    for g in glist:
        g_norm = math.sqrt(max(grid.integrate(g * g), 0.0))
        floor = 64 * np.finfo(float).eps * float(np.sum(qw * np.abs(g) * wq))
        est = max(est, 2 * g_norm * w_tail + L * L * k_tail * w_norm + floor)
    # the floor must not vanish for K = const, where every product is exact
    est = max(est, 64 * np.finfo(float).eps * float(np.sum(qw * wq)) * (1 + float(np.max(np.abs(K.values)))))
    return KWReport([float(c) for c in comps], float(est))


# --------------------------------------------------------------------------- field access
def _trace_and_gradient(U, x):
    """u(x), grad u(x) on t = 0."""
    if U.source is not None:
        u = U.source.u
        return u(x), u.gradient(x)
    if U.trace is None:
        raise ShapeError("the field carries no trace row")
    X = np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)
    return U.evaluate(X), _fd_gradient(U, X)[0]


def _fd_gradient(U, X):
    h = 0.5 * min(np.min(np.diff(U.grid.x_axes[0])), U.grid.t_nodes[0])
    n = U.n
    gx = np.empty(X.shape[:-1] + (n,))
    for i in range(n):
        e = np.zeros(n + 1)
        e[i] = h
        gx[..., i] = (U.evaluate(X + e) - U.evaluate(X - e)) / (2 * h)
    et = np.zeros(n + 1)
    et[-1] = h
    lo = X.copy()
    lo[..., -1] = np.maximum(X[..., -1] - h, 0.0)
    gt = (U.evaluate(X + et) - U.evaluate(lo)) / (X[..., -1] + h - lo[..., -1])
    return gx, gt


def _values_and_gradient(U, X):
    if U.source is not None:
        return U.source.at(X, grad=True)
    return (U.evaluate(X),) + _fd_gradient(U, X)


def _as_k(K, n):
    if isinstance(K, (int, float)):
        c = float(K)
        return lambda x: np.full(np.shape(x)[:-1], c)
    return K


# --------------------------------------------------------------------------- Pohozaev
def pohozaev(U, K, R: float, p: float, center=None, m: Optional[int] = None) -> PohozaevReport:
    """Flat and lateral boundary integrals of the Pohozaev identity on B+_R.

    B'  = a K U^{p+1} + <x, grad U> K U^p                      on the disk,
    B'' = a U dU/dnu - (R/2)|grad U|^2 + R (dU/dnu)^2           on the hemisphere,
    with a = (n - 2s)/2 and the lateral integrand weighted by t^{1-2s}.

    The hemisphere uses the elevation eta in (0, pi/2) substituted as
    eta = (pi/2) w^q with q = 3/min(2s, 2-2s), so that the algebraic
    singularities of t^{1-2s} and t^{1-2s}(d_t U)^2 at the equator become
    smooth enough for Gauss-Legendre in w. ``m`` nodes are used per
    direction, by default J/8 of the grid's t-levels.
    """
    grid = U.grid
    n, s = U.n, U.sigma
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)[:n]
    if not R > 0:
        raise DomainError("radius must be positive")
    if np.linalg.norm(c) + R > grid.R * (1 + 1e-12) or R > grid.T * (1 + 1e-12):
        raise DomainError(f"half ball of radius {R} exceeds the grid extent")
    m = m or max(8, grid.J // 8)
    a = (n - 2 * s) / 2
    K = _as_k(K, n)
    dirs, wd = sphere_directions(n, 2 * m)
    area = ball_measure(n)

    # a radial field about the centre needs one ray; K still sees every direction
    radial = grid.radial and not np.any(c)
    e1 = np.zeros((1, n))
    e1[0, 0] = 1.0

    # flat disk: r^{n-1} carried by the Gauss-Jacobi weight
    r, wr = gauss_jacobi_interval(m, 0.0, R, n - 1)
    y = r[:, None, None] * dirs[None, :, :]
    x = c + y
    if radial:
        u, gu = _trace_and_gradient(U, r[:, None, None] * e1[None])
        xgu = r[:, None] * gu[..., 0]
    else:
        u, gu = _trace_and_gradient(U, x)
        xgu = np.sum(y * gu, axis=-1)
    Kx = K(x)
    Bp = a * Kx * u ** (p + 1) + xgu * Kx * u ** p
    flat = area * float(wr @ (Bp @ wd))
    if radial:
        dirs, wd = e1, np.ones(1)

    # hemisphere
    q = 3.0 / min(2 * s, 2 - 2 * s)
    w, ww = gauss_legendre(m)
    w = 0.5 * (w + 1)
    ww = 0.5 * ww
    eta = 0.5 * math.pi * w ** q
    deta = 0.5 * math.pi * q * w ** (q - 1) * ww
    ce, se = np.cos(eta), np.sin(eta)
    nu = np.concatenate([ce[:, None, None] * dirs[None, :, :],
                         np.broadcast_to(se[:, None, None], (eta.size, dirs.shape[0], 1))], axis=-1)
    X = np.concatenate([np.broadcast_to(c, nu.shape[:-1] + (n,)), np.zeros(nu.shape[:-1] + (1,))], axis=-1) + R * nu
    V, gx, gt = _values_and_gradient(U, X)
    dnu = np.sum(gx * nu[..., :n], axis=-1) + gt * nu[..., -1]
    Bpp = a * V * dnu - 0.5 * R * (np.sum(gx * gx, axis=-1) + gt * gt) + R * dnu * dnu
    t = R * se
    dens = t ** (1 - 2 * s) * R ** n * ce ** (n - 1) * deta
    lateral = area * float(dens @ (Bpp @ wd))
    return PohozaevReport(flat, lateral, flat + lateral, max(abs(flat), abs(lateral)))


# --------------------------------------------------------------------------- Harnack
def harnack_ratio(U, center, r: float) -> float:
    """sup / inf of U over grid nodes in the closed annulus r/2 <= |X - Y| <= 2r.

    Radial grids contribute each node through its representative on the
    positive x_1 axis. The trace row (t = 0) is included when present.
    """
    grid = U.grid
    n = U.n
    if not r > 0:
        raise DomainError("radius must be positive")
    Y = np.zeros(n + 1)
    cc = np.asarray(center, dtype=float).ravel()
    Y[:cc.size] = cc
    xs = grid.spatial_points().reshape(-1, n)
    vals = U.values.reshape(-1, grid.J)
    t = grid.t_nodes
    if U.trace is not None:
        t = np.concatenate([[0.0], t])
        vals = np.concatenate([np.asarray(U.trace).reshape(-1, 1), vals], axis=1)
    d2 = np.sum((xs - Y[:n]) ** 2, axis=-1)[:, None] + (t[None, :] - Y[-1]) ** 2
    tol = 1e-12 * r
    mask = (d2 >= (0.5 * r - tol) ** 2) & (d2 <= (2 * r + tol) ** 2)
    if not np.any(mask):
        raise ResolutionError(f"no grid nodes in the annulus around r={r}")
    sel = vals[mask]
    lo = float(np.min(sel))
    if not lo > 0:
        raise DomainError("Harnack ratio needs a positive field on the annulus")
    return float(np.max(sel)) / lo


# --------------------------------------------------------------------------- Bocher
def _bocher_basis(Z, n, sigma):
    """Columns: |Z|^{2s-n}, then the regular model (quadratics in (x,t), t^{2s}(1, x_i))."""
    x, t = Z[:, :n], Z[:, n]
    rad = np.sqrt(np.sum(Z * Z, axis=1))
    cols = [rad ** (2 * sigma - n), np.ones(Z.shape[0])]
    lin = [Z[:, i] for i in range(n + 1)]
    cols += lin
    cols += [lin[i] * lin[j] for i in range(n + 1) for j in range(i, n + 1)]
    if abs(2 * sigma - 1) > 1e-12:
        ts = t ** (2 * sigma)
        cols += [ts] + [ts * x[:, i] for i in range(n)]
    return np.stack(cols, axis=1)


def bocher_fit(U, puncture, sigma: Optional[float] = None, radius: Optional[float] = None,
               n_rho: int = 10, n_eta: int = 10, n_dir: int = 8, n: Optional[int] = None) -> BocherFit:
    """Fit U = A |X - Y|^{2s-n} + H on the annulus [0.25, 0.75]*radius around Y.

    ``U`` is an ExtensionField or a callable on (..., n+1) points (then
    ``sigma``, ``n`` and ``radius`` are required). H is modelled by all
    polynomials of degree <= 2 in (x, t) plus t^{2s} and t^{2s}x_i, the
    leading non-polynomial terms of a regular weighted-harmonic function.
    """
    if callable(U) and not hasattr(U, "grid"):
        ev = U
        if sigma is None or n is None or radius is None:
            raise DomainError("callable fields need sigma, n and radius")
    else:
        ev = U.evaluate
        sigma = U.sigma if sigma is None else sigma
        n = U.n
        if radius is None:
            px = np.linalg.norm(np.asarray(puncture, dtype=float).ravel()[:n])
            radius = min(U.grid.R - px, U.grid.T)
    if 2 * sigma >= n:
        raise DomainError("the singular part is not a negative power when 2s >= n")
    if not radius > 0:
        raise DomainError("punctured ball is empty")
    Y = np.zeros(n + 1)
    pp = np.asarray(puncture, dtype=float).ravel()
    Y[:pp.size] = pp
    g, _ = gauss_legendre(n_rho)
    rho = radius * (0.5 + 0.25 * g)
    ge, _ = gauss_legendre(n_eta)
    eta = 0.25 * math.pi * (ge + 1)
    dirs, _ = sphere_directions(n, n_dir)
    nu = np.concatenate([np.cos(eta)[:, None, None] * dirs[None],
                         np.broadcast_to(np.sin(eta)[:, None, None], (eta.size, dirs.shape[0], 1))], axis=-1)
    Z = (rho[:, None, None, None] * nu[None]).reshape(-1, n + 1)
    vals = np.asarray(ev(Y + Z), dtype=float).ravel()
    B = _bocher_basis(Z, n, sigma)
    scale = np.linalg.norm(B, axis=0)
    coef, *_ = np.linalg.lstsq(B / scale, vals, rcond=None)
    coef = coef / scale
    resid = vals - B @ coef
    return BocherFit(float(coef[0]), float(np.max(np.abs(resid))))


# --------------------------------------------------------------------------- spherical averages
def spherical_average(u, center, r: float, p: float, sigma: float, domain_radius: float = math.inf,
                      m: int = 64):
    """(ubar(r), wbar(r)): the mean of u over the sphere of radius r about
    ``center`` and wbar = r^{2s/(p-1)} ubar."""
    center = np.asarray(center, dtype=float).ravel()
    n = center.size
    if not r > 0:
        raise DomainError("radius must be positive")
    if np.linalg.norm(center) + r > domain_radius * (1 + 1e-12):
        raise DomainError(f"sphere of radius {r} leaves the domain")
    if not p > 1:
        raise DomainError("exponent p must exceed 1")
    if getattr(u, "is_radial", False) and not np.any(center):
        ubar = float(np.asarray(u.profile(np.array([r]))).ravel()[0])
    elif getattr(u, "is_radial", False):
        z, wz = radial_cosine_rule(n, m)
        c0 = np.linalg.norm(center)
        d = np.sqrt(np.clip(c0 * c0 + r * r + 2 * c0 * r * z, 0, None))
        ubar = float(u.profile(d) @ wz)
    else:
        dirs, wd = sphere_directions(n, m)
        ubar = float(np.asarray(u(center + r * dirs)) @ wd)
    return ubar, r ** (2 * sigma / (p - 1)) * ubar


def count_critical_points(values) -> int:
    """Sign changes of centred differences along a sampled curve; plateaus count once."""
    d = np.gradient(np.asarray(values, dtype=float))
    sgn = np.sign(d)
    sgn = sgn[sgn != 0]
    return int(np.sum(sgn[1:] != sgn[:-1]))


# --------------------------------------------------------------------------- (*)'_beta
def _tensor_norm(T):
    return np.sqrt(np.sum(T.reshape(T.shape[0], -1) ** 2, axis=1))


def star_condition(K, beta: float, center=None, r_max: float = 1.0, n_shells: int = 12,
                   n_dir: int = 16, n: Optional[int] = None) -> StarBetaReport:
    """Smallest constants of the (*)'_beta condition over a sample set.

    Samples lie on dyadic shells |y - center| = r_max 2^{-k}, k < n_shells,
    along the ``n_dir``-point direction rule, plus the centre. The Hoelder
    seminorm of grad^{[beta]} K with exponent beta - [beta] is the supremum
    over all sample pairs; with an integer beta this is the oscillation.
    The derivative ratio |grad^s K| / |grad K|^{(beta-s)/(beta-1)} is taken
    over samples with grad K != 0 for 2 <= s <= [beta].

    Refining (more shells, or n_dir doubled) enlarges the sample set, so
    both reported constants are monotone under refinement.
    """
    if not beta > 1:
        raise DomainError("beta must exceed 1")
    if not isinstance(K, KFunction):
        if n is None:
            raise DomainError("plain callables need the dimension n")
        K = flat_from_callable(n, K)
    n = K.n
    if beta > K.smoothness:
        raise DomainError(f"K is only C^{K.smoothness}, cannot test beta={beta}")
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float).ravel()
    radii = r_max * 2.0 ** -np.arange(n_shells)
    dirs, _ = sphere_directions(n, n_dir)
    Y = np.concatenate([c[None, :], (c + radii[:, None, None] * dirs[None]).reshape(-1, n)])
    h = 1e-2 * np.concatenate([[radii[-1] / 2], np.repeat(radii, dirs.shape[0])])
    kb = int(math.floor(beta))
    frac = beta - kb

    g = _tensor_norm(K.derivative(Y, 1, h))
    L_ratio, w_ratio = 0.0, None
    nz = g > 0
    for s in range(2, kb + 1):
        Ds = _tensor_norm(K.derivative(Y, s, h))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(nz, Ds / np.where(nz, g, 1.0) ** ((beta - s) / (beta - 1)), 0.0)
        i = int(np.argmax(ratio))
        if ratio[i] > L_ratio:
            L_ratio, w_ratio = float(ratio[i]), Y[i].tolist()

    T = K.derivative(Y, kb, h).reshape(Y.shape[0], -1)
    L_holder, w_holder = 0.0, None
    N = Y.shape[0]
    for i in range(N - 1):
        diff = np.sqrt(np.sum((T[i + 1:] - T[i]) ** 2, axis=1))
        dist = np.sqrt(np.sum((Y[i + 1:] - Y[i]) ** 2, axis=1))
        q = diff / dist ** frac
        j = int(np.argmax(q))
        if q[j] > L_holder:
            L_holder, w_holder = float(q[j]), [Y[i].tolist(), Y[i + 1 + j].tolist()]
    witnesses = [w for w in (w_ratio, w_holder) if w is not None]
    return StarBetaReport(float(beta), L_holder, L_ratio, witnesses, int(N), int(N * (N - 1) // 2),
                          radii.tolist())

"""Spectral-Galerkin Newton solver for P_sigma v = c(n,s) K v^p on S^n.

Unknowns are the coefficients of v up to degree kmax. On a zonal grid
with kmax + 1 Gauss nodes the discrete transform is a bijection, so the
Galerkin system is equivalent to collocation and the grid residual is
driven to round-off. On the full S^2 layout the residual keeps the
aliasing tail of K v^p beyond kmax.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np
from scipy import linalg, optimize

from .constants import critical_exponent, make_constants, multiplier
from .errors import DomainError, PositivityLoss, SolverFailure
from .exact_solutions import BubbleParams, Space, sphere_bubble
from .fractional_ops import StereoChart, apply_psigma_spectral, stereo_push
from .identities import count_critical_points
from .kfunctions import KFunction, parse_k
from .quadrature import sphere_directions
from .sphere_spectral import GridKind, SphereFunction, SphereGrid


@dataclass(frozen=True)
class SolverConfig:
    """Problem and iteration parameters.

    ``K`` may be a SphereFunction, a KFunction, a descriptor string or a
    positive number. ``initial_guess`` may be a SphereFunction, sphere
    BubbleParams or a positive constant (default: the constant solution
    for the mean of K). ``peak_factor`` and ``separation`` are the
    threshold C_1 = peak_factor * mean(v) and the radius R of the peak
    selection rule; ``rho`` bounds the radii used for wbar.
    """

    n: int
    sigma: float
    K: object = 1.0
    tau: float = 0.0
    kmax: int = 64
    newton_tol: float = 1e-10
    newton_max_iter: int = 40
    damping: float = 1.0
    initial_guess: object = None
    grid_kind: str = "zonal"
    peak_factor: float = 5.0
    separation: float = 5.0
    rho: float = 1.0

    def __post_init__(self):
        make_constants(self.n, self.sigma)
        if self.tau < 0:
            raise DomainError("tau must be nonnegative")
        if not self.p > 1:
            raise DomainError("p = p* - tau must exceed 1")
        if not 0 < self.damping <= 1:
            raise DomainError("damping must lie in (0,1]")
        if self.grid_kind not in ("zonal", "full"):
            raise DomainError("grid_kind must be 'zonal' or 'full'")
        if self.grid_kind == "full" and self.n != 2:
            raise DomainError("the full layout is only available on S^2")
        if self.kmax < 1:
            raise DomainError("kmax must be positive")

    @property
    def p(self) -> float:
        return critical_exponent(self.n, self.sigma) - self.tau

    def make_grid(self) -> SphereGrid:
        if self.grid_kind == "zonal":
            return SphereGrid.zonal(self.n, self.kmax + 1)
        return SphereGrid.full(self.kmax + 1, 2 * self.kmax + 2)

    def with_tau(self, tau: float, guess=None) -> "SolverConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["tau"] = float(tau)
        if guess is not None:
            d["initial_guess"] = guess
        return SolverConfig(**d)


@dataclass
class SolveResult:
    v: SphereFunction
    tau: float
    residual_history: List[float]
    energy: float
    critical_norm: float
    converged: bool

    def to_dict(self) -> dict:
        return {"tau": self.tau, "residual_history": [float(r) for r in self.residual_history],
                "energy": self.energy, "critical_norm": self.critical_norm, "converged": self.converged,
                "v_max": float(np.max(self.v.values)), "v_min": float(np.min(self.v.values))}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class BlowupDiagnostics:
    peaks: list
    tau_times_m2: Optional[float]
    decay_exponent: Optional[float]
    wbar_critical_points: int
    hsigma_energy: float
    unit_product: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# --------------------------------------------------------------------------- helpers
def resolve_k(K, grid: SphereGrid) -> np.ndarray:
    """K sampled on the grid nodes."""
    if isinstance(K, SphereFunction):
        vals = K.values if K.grid is grid else K.evaluate(grid.points)
    elif isinstance(K, KFunction):
        vals = K.sphere_function(grid).values
    elif isinstance(K, str):
        vals = parse_k(K, grid.n).sphere_function(grid).values
    else:
        vals = np.full(grid.shape, float(K))
    vals = np.asarray(vals, dtype=float)
    if np.any(vals <= 0):
        raise DomainError("K must be positive everywhere")
    return vals


def _basis(grid: SphereGrid, kmax: int):
    """(Y, degree): basis values flattened over the grid, one column per mode."""
    if grid.kind is GridKind.ZONAL:
        return grid.zonal_table(kmax), np.arange(kmax + 1)
    cols, deg = [], []
    cos_t, sin_t = grid.trig_table(kmax)
    sq2 = math.sqrt(2.0)
    for m, P in enumerate(grid.legendre_table(kmax)):
        for j in range(P.shape[1]):
            k = m + j
            if m == 0:
                cols.append(np.repeat(P[:, j:j + 1], grid.lon_count, axis=1))
                deg.append(k)
            else:
                cols.append(sq2 * P[:, j:j + 1] * cos_t[:, m][None, :])
                cols.append(sq2 * P[:, j:j + 1] * sin_t[:, m][None, :])
                deg += [k, k]
    Y = np.stack([c.ravel() for c in cols], axis=1)
    return Y, np.asarray(deg)


def _initial_values(guess, grid: SphereGrid, Kvals, p) -> np.ndarray:
    if guess is None:
        return np.full(grid.shape, float(np.mean(Kvals)) ** (-1.0 / (p - 1)))
    if isinstance(guess, SphereFunction):
        return guess.values if guess.grid is grid else guess.evaluate(grid.points)
    if isinstance(guess, BubbleParams):
        if guess.space is not Space.SPHERE:
            raise DomainError("initial bubble must be a sphere bubble")
        return sphere_bubble(guess, grid.points)
    return np.full(grid.shape, float(guess))


def residual(v: SphereFunction, cfg: SolverConfig) -> SphereFunction:
    """P_sigma v - c(n,s) K v^p on the grid of v."""
    if np.any(v.values <= 0):
        raise DomainError("residual needs v > 0")
    kmax = min(cfg.kmax, v.grid.max_degree)
    c = make_constants(cfg.n, cfg.sigma).c_n_sigma
    Kv = resolve_k(cfg.K, v.grid)
    Pv = apply_psigma_spectral(v, cfg.sigma, kmax).values
    return v.with_values(Pv - c * Kv * v.values ** cfg.p)


def relative_residual(v: SphereFunction, cfg: SolverConfig) -> float:
    """max |P_sigma v - c K v^p| / max |c K v^p|, the measure newton_tol applies to."""
    c = make_constants(cfg.n, cfg.sigma).c_n_sigma
    rhs = c * resolve_k(cfg.K, v.grid) * v.values ** cfg.p
    return float(np.max(np.abs(residual(v, cfg).values)) / np.max(np.abs(rhs)))


def hsigma_energy(v: SphereFunction, sigma: float, kmax: Optional[int] = None) -> float:
    """int v P_sigma v."""
    return v.grid.integrate(v.values * apply_psigma_spectral(v, sigma, kmax).values)


def critical_norm(v: SphereFunction, sigma: float) -> float:
    n = v.grid.n
    return v.grid.integrate(np.abs(v.values) ** (2 * n / (n - 2 * sigma)))


# --------------------------------------------------------------------------- Newton
def newton_solve(cfg: SolverConfig, grid: Optional[SphereGrid] = None) -> SolveResult:
    """Damped Newton iteration on the coefficient vector.

    Trial steps are halved (down to 2^-10 of the full step) until the
    iterate stays positive on the grid and the residual drops. Residuals
    are max norms relative to max |c K v^p|, the scale of either side.
    """
    grid = grid or cfg.make_grid()
    n, s, p = cfg.n, cfg.sigma, cfg.p
    kmax = min(cfg.kmax, grid.max_degree)
    c0 = make_constants(n, s).c_n_sigma
    Kv = resolve_k(cfg.K, grid).ravel()
    Y, deg = _basis(grid, kmax)
    w = grid.quad_weights.ravel()
    lam = multiplier(deg, n, s)
    v0 = np.asarray(_initial_values(cfg.initial_guess, grid, Kv, p), dtype=float).ravel()
    if np.any(v0 <= 0):
        raise DomainError("initial guess must be positive")
    coef = Y.T @ (w * v0)
    YtW = Y.T * w

    def state(cf):
        v = Y @ cf
        rhs = c0 * Kv * np.abs(v) ** p
        return v, Y @ (lam * cf) - rhs, float(np.max(np.abs(rhs)))

    v, res, sc = state(coef)
    hist = [float(np.max(np.abs(res))) / sc]
    converged = hist[-1] <= cfg.newton_tol
    it = 0
    while not converged:
        if it >= cfg.newton_max_iter:
            raise SolverFailure(f"Newton did not converge in {cfg.newton_max_iter} iterations", hist)
        it += 1
        F = lam * coef - YtW @ (c0 * Kv * v ** p)
        J = np.diag(lam) - YtW @ ((c0 * p * Kv * v ** (p - 1))[:, None] * Y)
        try:
            delta = linalg.solve(J, -F, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise SolverFailure(f"singular Newton system: {exc}", hist) from None
        step = cfg.damping
        accepted, positive_seen = False, False
        while step >= 2.0 ** -10 * cfg.damping:
            trial = coef + step * delta
            vt = Y @ trial
            if np.all(vt > 0):
                positive_seen = True
                _, rt, st = state(trial)
                nt = float(np.max(np.abs(rt))) / st
                if nt < hist[-1]:
                    coef, v, res = trial, vt, rt
                    hist.append(nt)
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            if not positive_seen:
                raise PositivityLoss("damping could not keep the iterate positive", hist)
            raise SolverFailure("line search stalled at the minimal step", hist)
        converged = hist[-1] <= cfg.newton_tol
    vf = SphereFunction(grid, v.reshape(grid.shape))
    energy = float(np.sum(lam * coef * coef))
    return SolveResult(vf, cfg.tau, hist, energy, critical_norm(vf, s), True)


class Family(list):
    """Continuation results; ``failure`` holds the exception that stopped it, if any."""

    failure: Optional[Exception] = None


def continuation(cfg: SolverConfig, tau_schedule, max_depth: int = 4) -> Family:
    """Solve along a strictly decreasing tau schedule, warm-starting each member.

    A failed member is retried through up to ``max_depth`` levels of
    intermediate tau values, which only serve as warm starts.
    """
    taus = [float(t) for t in tau_schedule]
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise DomainError("tau schedule must be strictly decreasing")
    if taus and taus[-1] < 0:
        raise DomainError("tau schedule must stay nonnegative")
    out = Family()
    grid = cfg.make_grid()
    guess = cfg.initial_guess
    prev = None
    for tau in taus:
        try:
            r = _solve_with_substeps(cfg, grid, prev, tau, guess, max_depth)
        except SolverFailure as exc:
            out.failure = exc
            break
        out.append(r)
        guess, prev = r.v, tau
    return out


def _solve_with_substeps(cfg, grid, prev, tau, guess, depth):
    """Solve at tau from a warm start at prev, halving the tau step on failure."""
    try:
        return newton_solve(cfg.with_tau(tau, guess), grid)
    except SolverFailure:
        if prev is None or depth <= 0:
            raise
    mid = 0.5 * (prev + tau)
    r = _solve_with_substeps(cfg, grid, prev, mid, guess, depth - 1)
    return _solve_with_substeps(cfg, grid, mid, tau, r.v, depth - 1)


# --------------------------------------------------------------------------- blow-up diagnostics
def _geodesic(a, b):
    return float(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0)))


def _zonal_peaks(v: SphereFunction):
    """Local maxima of a zonal field, refined on the spectral interpolant."""
    x = v.grid.x
    vals = v.values
    N = x.size

    def f(z):
        pt = np.zeros(v.grid.n + 1)
        pt[0] = math.sqrt(max(0.0, 1 - z * z))
        pt[-1] = z
        return float(v.evaluate(pt[None])[0])

    out = []
    for i in range(N):
        left = vals[i - 1] if i > 0 else -np.inf
        right = vals[i + 1] if i < N - 1 else -np.inf
        if vals[i] >= left and vals[i] > right or vals[i] > left and vals[i] >= right:
            lo = x[i - 1] if i > 0 else -1.0
            hi = x[i + 1] if i < N - 1 else 1.0
            cands = [(f(x[i]), x[i])]
            if i == 0:
                cands.append((f(-1.0), -1.0))
            if i == N - 1:
                cands.append((f(1.0), 1.0))
            r = optimize.minimize_scalar(lambda z: -f(z), bounds=(lo, hi), method="bounded",
                                         options={"xatol": 1e-13})
            cands.append((-r.fun, float(r.x)))
            h, z = max(cands)
            pt = np.zeros(v.grid.n + 1)
            pt[0] = math.sqrt(max(0.0, 1 - z * z))
            pt[-1] = z
            out.append((pt, h))
    return out


def _full_peaks(v: SphereFunction):
    vals = v.values
    nlat, nlon = vals.shape
    out = []
    for i in range(nlat):
        for j in range(nlon):
            c = vals[i, j]
            neigh = []
            for di in (-1, 0, 1):
                ii = i + di
                if not 0 <= ii < nlat:
                    continue
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    neigh.append(vals[ii, (j + dj) % nlon])
            if i in (0, nlat - 1):
                neigh.extend(np.delete(vals[i], j))
            if c > max(neigh):
                out.append((v.grid.points[i, j], float(c)))
    return out


def _pushed_profile(v: SphereFunction, P, sigma):
    """Flat field y -> u(y) through the chart sending 0 to P."""
    chart = StereoChart(v.grid.n, south_pole=np.asarray(P, dtype=float))
    return lambda y: stereo_push(v, chart, sigma, y)


def _radial_mean(u, n, r, m=32):
    dirs, wd = sphere_directions(n, m)
    pts = np.asarray(r)[:, None, None] * dirs[None]
    return u(pts) @ wd


def blowup_diagnostics(r: SolveResult, cfg: SolverConfig, epsilon: float = 0.05,
                       R: Optional[float] = None) -> BlowupDiagnostics:
    """Peaks, rescaled-profile misfit, decay exponent, tau m^2 and wbar count.

    Flat quantities use the stereographic chart centred at each peak, so
    the height is m = u(0) = 2^{(n-2s)/2} v(P). A peak P survives if it
    exceeds peak_factor * mean(v) and its geodesic ball of radius
    R m^{-(p-1)/2s} misses those of taller peaks.
    """
    v = r.v
    n, s = v.grid.n, cfg.sigma
    p = critical_exponent(n, s) - r.tau
    R = cfg.separation if R is None else R
    alpha = (n - 2 * s) / 2
    mean = v.integrate() / v.grid.area()
    thresh = cfg.peak_factor * mean
    raw = _zonal_peaks(v) if v.grid.kind is GridKind.ZONAL else _full_peaks(v)
    raw = sorted([pk for pk in raw if pk[1] > thresh], key=lambda pk: -pk[1])
    energy = hsigma_energy(v, s)
    Kvals = cfg.K
    kept = []
    for P, h in raw:
        m = 2 ** alpha * h
        rad = R * m ** (-(p - 1) / (2 * s))
        if all(_geodesic(P, Q) > rad + rq for Q, _, rq in kept):
            kept.append((P, h, rad))
    if not kept:
        return BlowupDiagnostics([], None, None, 0, float(energy))

    peaks = []
    for P, h, _ in kept:
        m = 2 ** alpha * h
        scale = m ** (-(p - 1) / (2 * s))
        KP = _k_at(Kvals, v, P)
        k = KP ** (1 / s) / 4
        u = _pushed_profile(v, P, s)
        y = np.linspace(0.0, 2 * R, 201)
        dirs, _ = sphere_directions(n, 16)
        pts = y[:, None, None] * dirs[None] * scale
        resc = u(pts) / m
        model = (1 + k * y * y) ** (-alpha)
        misfit = float(np.max(np.abs(resc - model[:, None])))
        peaks.append({"point": [float(c) for c in P], "height": m, "sphere_height": float(h),
                      "profile_misfit": misfit, "profile_ok": bool(misfit <= epsilon), "K_at_peak": KP})

    P0, h0, _ = kept[0]
    m0 = 2 ** alpha * h0
    r_i = R * m0 ** (-(p - 1) / (2 * s))
    u0 = _pushed_profile(v, P0, s)
    decay = None
    if r_i < 1:
        rr = np.exp(np.linspace(math.log(r_i), 0.0, 200))
        ub = _radial_mean(u0, n, rr)
        decay = float(np.polyfit(np.log(rr), np.log(ub), 1)[0])
    r_lo = 1e-2 * m0 ** (-(p - 1) / (2 * s))
    rr = np.exp(np.linspace(math.log(r_lo), math.log(cfg.rho), 200))
    wbar = rr ** (2 * s / (p - 1)) * _radial_mean(u0, n, rr)
    count = count_critical_points(wbar)
    # lower-bound shape: m * min_{|e|=1} u(y_peak + e) stays away from 0 along a family
    dirs, _ = sphere_directions(n, 16)
    unit = float(m0 * np.min(u0(dirs)))
    return BlowupDiagnostics(peaks, float(r.tau * m0 * m0), decay, count, float(energy), unit)


def _k_at(K, v, P):
    P = np.asarray(P, dtype=float)[None]
    if isinstance(K, SphereFunction):
        return float(K.evaluate(P)[0])
    if isinstance(K, str):
        K = parse_k(K, v.grid.n)
    if isinstance(K, KFunction):
        return float(K.on_sphere(P)[0])
    return float(K)


FAMILY_COLUMNS = ["tau", "m", "energy", "critical_norm", "tau_times_m2", "profile_misfit", "decay_exponent"]


def family_rows(results, diags) -> List[dict]:
    rows = []
    for r, d in zip(results, diags):
        top = d.peaks[0] if d.peaks else None
        rows.append({
            "tau": r.tau,
            "m": top["height"] if top else float("nan"),
            "energy": r.energy,
            "critical_norm": r.critical_norm,
            "tau_times_m2": d.tau_times_m2 if d.tau_times_m2 is not None else float("nan"),
            "profile_misfit": top["profile_misfit"] if top else float("nan"),
            "decay_exponent": d.decay_exponent if d.decay_exponent is not None else float("nan"),
        })
    return rows


def write_family_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FAMILY_COLUMNS)
        for row in rows:
            w.writerow([f"{float(row[c]):.17g}" for c in FAMILY_COLUMNS])

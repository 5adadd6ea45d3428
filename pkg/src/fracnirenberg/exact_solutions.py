"""Closed-form bubbles, the Kelvin transform and Moebius normalisation."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np

from .constants import make_constants
from .errors import DomainError, ShapeError, SingularityError
from .sphere_spectral import GridKind, SphereFunction


class Space(str, Enum):
    SPHERE = "sphere"
    FLAT = "flat"


@dataclass(frozen=True)
class BubbleParams:
    """Centre, concentration and amplitude of a bubble.

    ``sigma`` fixes the exponent (n - 2 sigma)/2. For the sphere family
    the amplitude defaults to 1; for the flat family it defaults to the
    Liouville amplitude, which normalises the Neumann data to U^p.
    """

    space: Space
    center: np.ndarray
    lam: float
    sigma: float
    amplitude: Optional[float] = None

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "space", Space(self.space))
        if not self.lam > 0:
            raise DomainError("lambda must be positive")
        if self.space is Space.SPHERE and abs(np.linalg.norm(c) - 1) > 1e-12:
            raise DomainError("sphere bubble centre must be a unit vector")
        consts = make_constants(self.n, self.sigma)
        if self.amplitude is None:
            amp = 1.0 if self.space is Space.SPHERE else consts.a_liouville
            object.__setattr__(self, "amplitude", float(amp))
        elif not self.amplitude > 0:
            raise DomainError("amplitude must be positive")

    @property
    def n(self) -> int:
        return self.center.size - 1 if self.space is Space.SPHERE else self.center.size

    @property
    def alpha(self) -> float:
        return (self.n - 2 * self.sigma) / 2

    def peak(self) -> float:
        """Value at the centre."""
        return self.amplitude * self.lam ** self.alpha


def south_pole(n: int) -> np.ndarray:
    e = np.zeros(n + 1)
    e[-1] = -1.0
    return e


def north_pole(n: int) -> np.ndarray:
    e = np.zeros(n + 1)
    e[-1] = 1.0
    return e


def sphere_bubble(p: BubbleParams, xi) -> np.ndarray:
    """v(xi) = A (2 lam / (2 + (lam^2-1)(1 - <xi, xi0>)))^{(n-2s)/2}."""
    if p.space is not Space.SPHERE:
        raise DomainError("sphere_bubble needs sphere parameters")
    xi = np.asarray(xi, dtype=float)
    # cos of the geodesic distance, clamped against rounding drift
    cosd = np.clip(xi @ p.center, -1.0, 1.0)
    base = 2 * p.lam / (2 + (p.lam ** 2 - 1) * (1 - cosd))
    return p.amplitude * base ** p.alpha


def flat_bubble(p: BubbleParams, x) -> np.ndarray:
    """u(x) = A (lam / (1 + lam^2 |x - x0|^2))^{(n-2s)/2}."""
    if p.space is not Space.FLAT:
        raise DomainError("flat_bubble needs flat parameters")
    x = np.asarray(x, dtype=float)
    r2 = np.sum((x - p.center) ** 2, axis=-1)
    return p.amplitude * (p.lam / (1 + p.lam ** 2 * r2)) ** p.alpha


def flat_bubble_profile(lam: float, n: int, sigma: float, amplitude: float = 1.0) -> Callable:
    """Radial profile r -> A (lam/(1+lam^2 r^2))^{(n-2s)/2}."""
    a = (n - 2 * sigma) / 2
    return lambda r: amplitude * (lam / (1 + lam ** 2 * np.asarray(r, dtype=float) ** 2)) ** a


def bubble_function(grid, p: BubbleParams) -> SphereFunction:
    """Sample a sphere bubble on a grid, keeping the closed form for off-grid use."""
    if grid.kind is GridKind.ZONAL and np.linalg.norm(p.center[:-1]) > 1e-14:
        raise ShapeError("zonal grids only carry bubbles centred on the polar axis")
    return SphereFunction.from_callable(grid, lambda pts: sphere_bubble(p, pts))


# --------------------------------------------------------------------------- Kelvin
def kelvin(U: Callable, xbar, lam: float, n: int, sigma: float) -> Callable:
    """Kelvin transform (lam/|X - xbar|)^{n-2s} U(xbar + lam^2 (X - xbar)/|X - xbar|^2).

    ``U`` is any callable on points whose last axis has the length of
    ``xbar`` (R^n for flat fields, R^{n+1} with xbar on t = 0 for
    extensions). The exponent always uses the trace dimension ``n``.
    """
    xbar = np.asarray(xbar, dtype=float)
    if not lam > 0:
        raise DomainError("lambda must be positive")

    def image(X):
        X = np.asarray(X, dtype=float)
        d = X - xbar
        r2 = np.sum(d * d, axis=-1)
        if np.any(r2 <= (1e-14 * max(1.0, lam)) ** 2):
            raise SingularityError("Kelvin transform evaluated at its centre")
        inv = xbar + lam ** 2 * d / r2[..., None]
        return (lam ** 2 / r2) ** ((n - 2 * sigma) / 2) * U(inv)

    return image


def kelvin_bubble_lambda(lam_bubble: float, lam_kelvin: float) -> float:
    """Concentration of the Kelvin image of a bubble centred at xbar."""
    return 1.0 / (lam_bubble * lam_kelvin ** 2)


# --------------------------------------------------------------------------- Moebius maps
# Each step acts on S^n (ambient coordinates) and returns the image and the
# linear conformal factor s, so that |det d phi| = s^n. Formulas are the
# chart expressions F o psi o F^{-1} cleared of the pole singularity.
def _dilate(lam):
    def step(xi):
        z = xi[..., -1]
        D = 1 - z
        den = D + lam ** 2 * (1 + z)
        out = np.empty_like(xi)
        out[..., :-1] = 2 * lam * xi[..., :-1] / den[..., None]
        out[..., -1] = (lam ** 2 * (1 + z) - D) / den
        return out, 2 * lam / den
    return step


def _translate(h):
    h = np.asarray(h, dtype=float)

    def step(xi):
        z = xi[..., -1]
        D = 1 - z
        xp = xi[..., :-1]
        hx = xp @ h
        den = 2 + 2 * hx + (h @ h) * D
        out = np.empty_like(xi)
        out[..., :-1] = 2 * (xp + D[..., None] * h) / den[..., None]
        out[..., -1] = (2 - 2 * D + 2 * hx + (h @ h) * D) / den
        return out, 2 / den
    return step


def _invert():
    def step(xi):
        out = xi.copy()
        out[..., -1] = -out[..., -1]
        return out, np.ones(xi.shape[:-1])
    return step


def _rotate(Q):
    Q = np.asarray(Q, dtype=float)

    def step(xi):
        return xi @ Q.T, np.ones(xi.shape[:-1])
    return step


@dataclass(frozen=True)
class MobiusMap:
    """Conformal map of S^n given as a chain of elementary steps.

    Steps are ("dilate", lam), ("translate", h), ("invert",) and
    ("rotate", Q); flat steps act through the stereographic chart, i.e.
    psi -> F o psi o F^{-1}. The chain is applied left to right.
    """

    n: int
    steps: Tuple[tuple, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for st in self.steps:
            kind = st[0]
            if kind == "dilate" and not st[1] > 0:
                raise DomainError("dilation factor must be positive")
            if kind == "translate" and np.asarray(st[1]).shape != (self.n,):
                raise ShapeError("translation vector has the wrong length")
            if kind == "rotate":
                Q = np.asarray(st[1], dtype=float)
                if Q.shape != (self.n + 1, self.n + 1) or not np.allclose(Q @ Q.T, np.eye(self.n + 1), atol=1e-12):
                    raise DomainError("rotation must be an orthogonal (n+1)x(n+1) matrix")
            if kind not in ("dilate", "translate", "invert", "rotate"):
                raise DomainError(f"unknown Moebius step {kind!r}")

    @classmethod
    def identity(cls, n: int) -> "MobiusMap":
        return cls(n, ())

    @classmethod
    def dilation(cls, n: int, lam: float) -> "MobiusMap":
        return cls(n, (("dilate", float(lam)),))

    def then(self, other: "MobiusMap") -> "MobiusMap":
        """Map applying self first, then ``other``."""
        return MobiusMap(self.n, self.steps + other.steps)

    def _compiled(self):
        out = []
        for st in self.steps:
            kind = st[0]
            if kind == "dilate":
                out.append(_dilate(float(st[1])))
            elif kind == "translate":
                out.append(_translate(st[1]))
            elif kind == "invert":
                out.append(_invert())
            else:
                out.append(_rotate(st[1]))
        return out

    def apply(self, xi):
        """Image points and the conformal factor s(xi) of the whole chain."""
        xi = np.asarray(xi, dtype=float)
        scale = np.ones(xi.shape[:-1])
        for step in self._compiled():
            xi, s = step(xi)
            scale = scale * s
        return xi, scale

    def __call__(self, xi):
        return self.apply(xi)[0]

    def det(self, xi):
        """|det d phi| = s^n."""
        return self.apply(xi)[1] ** self.n

    def preserves_axis(self) -> bool:
        for st in self.steps:
            if st[0] == "translate" and np.any(np.asarray(st[1]) != 0):
                return False
            if st[0] == "rotate":
                Q = np.asarray(st[1], dtype=float)
                e = np.zeros(self.n + 1)
                e[-1] = 1
                if not np.allclose(Q @ e, e, atol=1e-12):
                    return False
        return True


def conformal_normalize(v: SphereFunction, phi: MobiusMap, sigma: float) -> SphereFunction:
    """T_phi v = (v o phi) |det d phi|^{(n-2s)/2n}."""
    n = v.grid.n
    if phi.n != n:
        raise ShapeError("map dimension does not match the grid")
    if v.grid.kind is GridKind.ZONAL and not phi.preserves_axis():
        raise ShapeError("zonal fields need an axis-preserving map")
    a = (n - 2 * sigma) / 2
    src = v

    def transformed(pts):
        img, s = phi.apply(pts)
        return src.evaluate(img) * s ** a

    return SphereFunction(v.grid, transformed(v.grid.points), transformed)


def blowup_normalizer(n: int, lam: float) -> MobiusMap:
    """Dilation psi_{1/lam}, sending the south-pole bubble of concentration lam to 1."""
    return MobiusMap.dilation(n, 1.0 / lam)

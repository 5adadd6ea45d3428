"""Prescribed-curvature functions K and their command-line descriptors.

Grammar (one descriptor per string):

    constant:c
    coordinate:j offset:c          K = xi_j + c on S^n (1-based j)
    bump:center,amplitude,width    K = 1 + a exp(-|xi - center|^2 / (2 w^2))
    polynomial-flat:beta,a1..an    K(y) = 1 + sum_j a_j |y_j|^beta on R^n

``center`` is either ``north``/``south`` or n+1 ambient coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import DomainError, ShapeError
from .sphere_spectral import GridKind, SphereFunction


def fd_derivative_tensor(f: Callable, y, s: int, h) -> np.ndarray:
    """s-th derivative tensor of f at points y (N, n) by nested central differences.

    ``h`` is a step per point; the error is O(h^2) for smooth f.
    """
    y = np.asarray(y, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), y.shape[:1])
    if s == 0:
        return np.asarray(f(y), dtype=float)
    n = y.shape[-1]
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        step = h[:, None] * e
        plus = fd_derivative_tensor(f, y + step, s - 1, h)
        minus = fd_derivative_tensor(f, y - step, s - 1, h)
        cols.append((plus - minus) / (2 * h.reshape((-1,) + (1,) * (s - 1))))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class KFunction:
    """K on S^n and/or R^n.

    ``smoothness`` is the Hoelder order available for the flat form
    (inf for analytic K). ``flat_derivs(y, s)`` returns exact derivative
    tensors when known; otherwise finite differences are used, which is
    limited to order 3.
    """

    kind: str
    n: int
    params: Tuple[float, ...]
    text: str
    sphere: Optional[Callable] = None
    flat: Optional[Callable] = None
    flat_derivs: Optional[Callable] = None
    smoothness: float = math.inf

    def on_sphere(self, pts) -> np.ndarray:
        if self.sphere is None:
            raise DomainError(f"K descriptor {self.text!r} has no sphere form")
        return self.sphere(np.asarray(pts, dtype=float))

    def sphere_function(self, grid) -> SphereFunction:
        if grid.n != self.n:
            raise ShapeError("K dimension does not match the grid")
        if grid.kind is GridKind.ZONAL and not self.is_zonal():
            raise ShapeError(f"K descriptor {self.text!r} is not zonal")
        return SphereFunction.from_callable(grid, self.on_sphere)

    def is_zonal(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "coordinate":
            return int(self.params[0]) == self.n + 1
        if self.kind == "bump":
            return bool(np.all(np.asarray(self.params[:-2])[:-1] == 0))
        return False

    def __call__(self, y) -> np.ndarray:
        if self.flat is None:
            raise DomainError(f"K descriptor {self.text!r} has no flat form")
        return self.flat(np.asarray(y, dtype=float))

    def derivative(self, y, s: int, h=None) -> np.ndarray:
        """s-th derivative tensor of the flat form at points y (N, n)."""
        if s > self.smoothness:
            raise DomainError(f"K is only C^{self.smoothness}; derivative of order {s} requested")
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.flat_derivs is not None:
            return self.flat_derivs(y, s)
        if s > 3:
            raise DomainError("finite-difference derivatives are limited to order 3")
        h = 1e-3 if h is None else h
        return fd_derivative_tensor(self, y, s, h)


def flat_from_callable(n: int, f: Callable, smoothness: float = math.inf, text: str = "callable") -> KFunction:
    """Wrap an arbitrary flat K (derivatives by finite differences)."""
    return KFunction("callable", n, (), text, None, f, None, smoothness)


def _constant(n, c):
    def derivs(y, s):
        return np.zeros(y.shape[:1] + (n,) * s) if s > 0 else np.full(y.shape[0], c)

    return KFunction("constant", n, (c,), f"constant:{c!r}",
                     lambda p: np.full(p.shape[:-1], c), lambda y: np.full(y.shape[:-1], c), derivs)


def _coordinate(n, j, c):
    if not 1 <= j <= n + 1:
        raise DomainError(f"coordinate index must lie in 1..{n + 1}")
    return KFunction("coordinate", n, (float(j), c), f"coordinate:{j} offset:{c!r}",
                     lambda p: p[..., j - 1] + c)


def _bump(n, center, a, w):
    if not w > 0:
        raise DomainError("bump width must be positive")
    center = np.asarray(center, dtype=float)
    if center.shape != (n + 1,) or abs(np.linalg.norm(center) - 1) > 1e-12:
        raise DomainError("bump centre must be a unit vector in R^{n+1}")
    if a <= -1:
        raise DomainError("bump amplitude must exceed -1 to keep K positive")

    def on_sphere(p):
        d2 = np.sum((p - center) ** 2, axis=-1)
        return 1 + a * np.exp(-d2 / (2 * w * w))

    text = "bump:" + ",".join(f"{v!r}" for v in center) + f",{a!r},{w!r}"
    return KFunction("bump", n, tuple(center) + (a, w), text, on_sphere)


def _poly_flat(n, beta, coeffs):
    if not beta > 1:
        raise DomainError("polynomial-flat order beta must exceed 1")
    a = np.asarray(coeffs, dtype=float)
    if a.shape != (n,):
        raise DomainError(f"polynomial-flat needs {n} coefficients")

    def flat(y):
        return 1 + np.abs(y) ** beta @ a

    def derivs(y, s):
        if s == 0:
            return flat(y)
        # separable: only pure derivatives d_j^s survive
        fall = math.prod(beta - i for i in range(s))
        with np.errstate(divide="ignore", invalid="ignore"):
            pure = a * fall * np.abs(y) ** (beta - s) * np.sign(y) ** s
        pure = np.where(np.isfinite(pure), pure, 0.0)
        out = np.zeros(y.shape[:1] + (n,) * s)
        idx = np.arange(n)
        out[(slice(None),) + (idx,) * s] = pure
        return out

    text = f"polynomial-flat:{beta!r}," + ",".join(f"{v!r}" for v in a)
    return KFunction("polynomial-flat", n, (beta,) + tuple(a), text, None, flat, derivs, beta)


def _floats(items, what):
    try:
        return [float(v) for v in items]
    except ValueError as exc:
        raise DomainError(f"malformed number in {what}: {exc}") from None


def parse_k(text: str, n: int) -> KFunction:
    """Parse a K descriptor (see module docstring) for dimension n."""
    text = text.strip()
    head, _, rest = text.partition(":")
    if head == "constant":
        (c,) = _floats([rest], text)
        if not c > 0:
            raise DomainError("constant K must be positive")
        return _constant(n, c)
    if head == "coordinate":
        parts = rest.split()
        if len(parts) != 2 or not parts[1].startswith("offset:"):
            raise DomainError(f"expected 'coordinate:j offset:c', got {text!r}")
        try:
            j = int(parts[0])
        except ValueError:
            raise DomainError(f"malformed coordinate index in {text!r}") from None
        (c,) = _floats([parts[1][len("offset:"):]], text)
        return _coordinate(n, j, c)
    if head == "bump":
        parts = [p.strip() for p in rest.split(",")]
        if len(parts) < 3:
            raise DomainError(f"expected 'bump:center,amplitude,width', got {text!r}")
        a, w = _floats(parts[-2:], text)
        if len(parts) == 3 and parts[0] in ("north", "south"):
            center = np.zeros(n + 1)
            center[-1] = 1.0 if parts[0] == "north" else -1.0
        else:
            center = np.array(_floats(parts[:-2], text))
        return _bump(n, center, a, w)
    if head == "polynomial-flat":
        vals = _floats(rest.split(","), text)
        return _poly_flat(n, vals[0], vals[1:])
    raise DomainError(f"unknown K descriptor {text!r}")

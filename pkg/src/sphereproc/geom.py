"""Geometry of R^d and the unit sphere S^k.

Distances, Lebesgue/surface measures and the special functions used by
the closed-form Poisson K-functions. Everything here is a pure function
of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpherePoint",
    "SpatialPoint",
    "geodesic_distance",
    "geodesic",
    "sphere_surface_measure",
    "cap_measure",
    "reg_inc_beta",
    "ball_volume",
    "unit_ball_surface",
]

_NORM_TOL = 1e-12


@dataclass(frozen=True)
class SpherePoint:
    """A unit vector in R^{k+1}.

    With ``strict=False`` (the default) the input is rescaled to unit
    norm; with ``strict=True`` a norm off by more than 1e-12 is rejected.
    """

    coords: tuple
    strict: bool = False

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim != 1 or c.size < 2:
            raise ValueError("a sphere point needs at least 2 coordinates (k >= 1)")
        nrm = float(np.linalg.norm(c))
        if not np.isfinite(nrm) or nrm == 0.0:
            raise ValueError("sphere point has zero or non-finite norm")
        if abs(nrm - 1.0) > _NORM_TOL:
            if self.strict:
                raise ValueError(f"sphere point norm {nrm!r} differs from 1 by more than 1e-12")
            c = c / nrm
        object.__setattr__(self, "coords", tuple(float(v) for v in c))

    @property
    def k(self) -> int:
        return len(self.coords) - 1

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


@dataclass(frozen=True)
class SpatialPoint:
    coords: tuple

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coords, dtype=float))
        if c.ndim != 1 or c.size < 1:
            raise ValueError("a spatial point needs d >= 1 coordinates")
        object.__setattr__(self, "coords", tuple(float(v) for v in c))

    @property
    def d(self) -> int:
        return len(self.coords)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


def geodesic(u1, u2):
    """Vectorised great-circle distance between rows of ``u1`` and ``u2``."""
    a = np.asarray(u1, dtype=float)
    b = np.asarray(u2, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"sphere dimension mismatch: {a.shape[-1] - 1} vs {b.shape[-1] - 1}")
    dot = np.sum(a * b, axis=-1)
    return np.arccos(np.clip(dot, -1.0, 1.0))


def geodesic_distance(u1, u2) -> float:
    """Great-circle distance d(u1, u2) in [0, pi]."""
    return float(geodesic(np.asarray(u1, dtype=float), np.asarray(u2, dtype=float)))


def sphere_surface_measure(k: int) -> float:
    """Surface measure sigma_k = 2 pi^{(k+1)/2} / Gamma((k+1)/2) of S^k."""
    if int(k) != k or k < 1:
        raise ValueError(f"sphere dimension must be an integer >= 1, got {k!r}")
    return _sigma(int(k))


def _sigma(k: int) -> float:
    # k = 0 gives 2 (two antipodal points); used for the colatitude weight on S^1
    return 2.0 * math.pi ** ((k + 1) / 2.0) / math.gamma((k + 1) / 2.0)


def unit_ball_surface(d: int) -> float:
    """Surface measure of the unit sphere in R^d, i.e. d * |B_d(1)|."""
    return _sigma(d - 1)


def ball_volume(d: int, r):
    """Volume r^d pi^{d/2} / Gamma(1 + d/2) of a d-dimensional ball."""
    if int(d) != d or d < 1:
        raise ValueError(f"spatial dimension must be an integer >= 1, got {d!r}")
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("radius must be nonnegative")
    out = r_arr**d * math.pi ** (d / 2.0) / math.gamma(1.0 + d / 2.0)
    return float(out) if out.ndim == 0 else out


def _betacf(x: float, a: float, b: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge at x={x}, a={a}, b={b}")


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    x, a, b = float(x), float(a), float(b)
    if not (a > 0 and b > 0):
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(x, a, b) / a
    return 1.0 - front * _betacf(1.0 - x, b, a) / b


def _cap_scalar(k: int, s: float) -> float:
    half = 0.5 * _sigma(k)
    if s <= 0.5 * math.pi:
        return half * reg_inc_beta(math.sin(s) ** 2, k / 2.0, 0.5)
    return half * (2.0 - reg_inc_beta(math.sin(math.pi - s) ** 2, k / 2.0, 0.5))


def cap_measure(k: int, s):
    """Surface measure of the cap {u : d(u, e) <= s} on S^k.

    Uses the two-branch regularized incomplete beta expression, upper
    branch for s > pi/2.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"sphere dimension must be an integer >= 1, got {k!r}")
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr > math.pi):
        raise ValueError("cap angle must lie in [0, pi]")
    if s_arr.ndim == 0:
        return _cap_scalar(int(k), float(s_arr))
    flat = np.array([_cap_scalar(int(k), float(v)) for v in s_arr.ravel()])
    return flat.reshape(s_arr.shape)

"""Second-order composite likelihood for separable log-Gaussian Cox processes.

With intensity fixed at 1 the likelihood only involves the pair
correlation g = exp{s1^2 e^(-t/phi1) + s2^2 e^(-theta/phi2)} of close
pairs (spatial lag t < r, geodesic lag theta < s) and the normalizing
pair integral, which factorizes into a spatial part A and a spherical
part B. Hence CL = l1(s1, phi1) + l2(s2, phi2) exactly.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln

from .. import _pairs
from ..estimate import ConvergenceError
from ..geom import _sigma, sphere_surface_measure
from ..model import LgcpCovariance
from ..pattern import BoxWindow, SpaceSpherePattern

log = logging.getLogger(__name__)

__all__ = [
    "CloseLags",
    "close_lags",
    "spatial_pair_integral",
    "sphere_pair_integral",
    "composite_likelihood",
    "cl_separable_terms",
    "fit_cl",
    "ClFit",
]

_QUAD_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class CloseLags:
    """Lags of the unordered (r, s)-close pairs (strict inequalities)."""

    t: np.ndarray
    theta: np.ndarray
    window: BoxWindow
    k: int
    r: float
    s: float

    @property
    def n_rs(self) -> int:
        """Ordered pair count."""
        return 2 * self.t.size


def close_lags(x: SpaceSpherePattern, r: float, s: float, method: str = "auto") -> CloseLags:
    if not r > 0:
        raise ValueError("r must be positive")
    if not 0.0 < s <= math.pi:
        raise ValueError("s must lie in (0, pi]")
    if r > float(x.window.sides.min()):
        raise ValueError("r must not exceed the shortest window side")
    t, dot = _pairs.pair_lags(x.y, x.u, float(r), math.cos(s), strict=True, method=method)
    return CloseLags(t, np.arccos(np.clip(dot, -1.0, 1.0)), x.window, x.k, float(r), float(s))


def _abs_moment(d, m):
    # E prod_{a in S} |w_a| for w uniform on S^{d-1} and |S| = m
    return math.exp(gammaln(d / 2.0) - m * gammaln(0.5) - gammaln((d + m) / 2.0))


def spatial_pair_integral(sigma1: float, phi1: float, window: BoxWindow, r: float) -> float:
    """A = int int_{W x W} 1{|y1 - y2| < r} exp{s1^2 e^(-|y1-y2|/phi1)} dy1 dy2.

    Reduced to a radial integral of the set-covariance of the box averaged
    over directions (valid for r no larger than the shortest side).
    """
    d = window.d
    sides = window.sides
    if r > sides.min() * (1 + 1e-12):
        raise ValueError("spatial pair integral needs r <= shortest window side")
    coef = np.zeros(d + 1)
    for m in range(d + 1):
        for sub in itertools.combinations(range(d), m):
            rest = np.prod([sides[a] for a in range(d) if a not in sub])
            coef[m] += rest
        coef[m] *= (-1.0) ** m * _abs_moment(d, m)
    surf = _sigma(d - 1)
    s1 = sigma1 * sigma1

    def f(t):
        poly = sum(coef[m] * t**m for m in range(d + 1))
        return surf * t ** (d - 1) * poly * math.exp(s1 * math.exp(-t / phi1))

    val, _ = integrate.quad(f, 0.0, r, epsabs=0.0, epsrel=_QUAD_RTOL, limit=200)
    return val


def sphere_pair_integral(sigma2: float, phi2: float, k: int, s: float) -> float:
    """B = int int_{S^k x S^k} 1{d(u1,u2) < s} exp{s2^2 e^(-d/phi2)} du1 du2."""
    s2 = sigma2 * sigma2

    def f(th):
        return math.sin(th) ** (k - 1) * math.exp(s2 * math.exp(-th / phi2))

    val, _ = integrate.quad(f, 0.0, s, epsabs=0.0, epsrel=_QUAD_RTOL, limit=200)
    return sphere_surface_measure(k) * _sigma(k - 1) * val


def _lags(x_or_lags, r, s):
    if isinstance(x_or_lags, CloseLags):
        return x_or_lags
    return close_lags(x_or_lags, r, s)


def _check_theta(theta: LgcpCovariance):
    if theta.delta != 0.0:
        raise ValueError("the composite likelihood targets the separable model (delta = 0)")


def cl_separable_terms(theta: LgcpCovariance, x, r: float | None = None, s: float | None = None):
    """(l1, l2) with l1 depending on (sigma1, phi1) and l2 on (sigma2, phi2) only."""
    _check_theta(theta)
    lags = _lags(x, r, s)
    n_rs = lags.n_rs
    if n_rs == 0:
        warnings.warn("no (r, s)-close pairs: composite likelihood carries no information", stacklevel=2)
        return 0.0, 0.0
    l1 = 2.0 * theta.sigma1**2 * float(np.sum(np.exp(-lags.t / theta.phi1)))
    l1 -= n_rs * math.log(spatial_pair_integral(theta.sigma1, theta.phi1, lags.window, lags.r))
    l2 = 2.0 * theta.sigma2**2 * float(np.sum(np.exp(-lags.theta / theta.phi2)))
    l2 -= n_rs * math.log(sphere_pair_integral(theta.sigma2, theta.phi2, lags.k, lags.s))
    return l1, l2


def composite_likelihood(theta: LgcpCovariance, x, r: float | None = None, s: float | None = None) -> float:
    """Sum over ordered close pairs of log g minus n_rs log of the pair integral."""
    _check_theta(theta)
    lags = _lags(x, r, s)
    n_rs = lags.n_rs
    if n_rs == 0:
        warnings.warn("no (r, s)-close pairs: composite likelihood carries no information", stacklevel=2)
        return 0.0
    c0 = theta.c0(lags.t, lags.theta)
    total = 2.0 * float(np.sum(c0))
    a = spatial_pair_integral(theta.sigma1, theta.phi1, lags.window, lags.r)
    b = sphere_pair_integral(theta.sigma2, theta.phi2, lags.k, lags.s)
    return total - n_rs * math.log(a * b)


# ---------------------------------------------------------------- fitting


@dataclass
class ClFit:
    theta: LgcpCovariance
    l1: float
    l2: float
    boundary_hit: dict
    traces: dict = field(default_factory=dict)
    n_rs: int = 0

    def to_dict(self):
        return {"theta": self.theta.to_dict(), "l1": self.l1, "l2": self.l2, "cl": self.l1 + self.l2,
                "boundary_hit": self.boundary_hit, "n_rs": self.n_rs, "traces": self.traces}


DEFAULT_BOUNDS = {"sigma1": (0.0, 3.0), "phi1": (1e-3, 1.0), "sigma2": (0.0, 3.0), "phi2": (1e-3, math.pi)}


def _maximize(obj, lo, hi, x0, rng, n_restarts, tol):
    """Maximize obj over a box with bounded Nelder-Mead plus random restarts.

    Coordinates with lo == hi are held fixed.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    free = hi > lo
    fixed = lo.copy()

    def full(z):
        v = fixed.copy()
        v[free] = z
        return v

    trace = []
    if not free.any():
        v = lo.copy()
        return v, obj(v), [{"x": v.tolist(), "fun": obj(v), "success": True}]

    def neg(z):
        return -obj(np.clip(full(z), lo, hi))

    starts = [np.clip(np.asarray(x0, float), lo, hi)[free]]
    for _ in range(n_restarts):
        starts.append(rng.uniform(lo[free], hi[free]))
    best = None
    for z0 in starts:
        res = optimize.minimize(neg, z0, method="Nelder-Mead", bounds=list(zip(lo[free], hi[free])),
                                options={"xatol": tol, "fatol": tol, "maxiter": 4000, "maxfev": 8000})
        trace.append({"x": full(res.x).tolist(), "fun": float(-res.fun), "success": bool(res.success),
                      "nfev": int(res.nfev)})
        if res.success and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise ConvergenceError("composite likelihood search did not converge from any restart")
    v = np.clip(full(best.x), lo, hi)
    return v, float(-best.fun), trace


def _hits(v, lo, hi):
    span = np.asarray(hi) - np.asarray(lo)
    return [bool(sp > 0 and min(a - b, c - a) <= 1e-6 * sp) for a, b, c, sp in zip(v, lo, hi, span)]


def fit_cl(x: SpaceSpherePattern, r: float, s: float, init=None, bounds: dict | None = None,
           rng=None, n_restarts: int = 3, tol: float = 1e-9) -> ClFit:
    """Maximize l1 over (sigma1, phi1) and l2 over (sigma2, phi2) separately."""
    lags = close_lags(x, r, s)
    if lags.n_rs == 0:
        raise ValueError("degenerate pattern: no (r, s)-close pairs to fit")
    b = dict(DEFAULT_BOUNDS)
    b.update(bounds or {})
    for key, (lo_, hi_) in b.items():
        if lo_ > hi_:
            raise ValueError(f"bounds for {key} are empty")
        if key.startswith("phi") and lo_ <= 0:
            raise ValueError(f"{key} lower bound must be positive")
    init = init or {"sigma1": 0.5, "phi1": 0.1 * float(x.window.sides.min()), "sigma2": 0.5, "phi2": 0.2}
    rng = np.random.default_rng(0) if rng is None else rng
    n_rs = lags.n_rs
    t, th = lags.t, lags.theta

    def obj1(v):
        sg, ph = v
        return 2.0 * sg * sg * float(np.sum(np.exp(-t / ph))) - n_rs * math.log(
            spatial_pair_integral(sg, ph, lags.window, lags.r))

    def obj2(v):
        sg, ph = v
        return 2.0 * sg * sg * float(np.sum(np.exp(-th / ph))) - n_rs * math.log(
            sphere_pair_integral(sg, ph, lags.k, lags.s))

    lo1, hi1 = [b["sigma1"][0], b["phi1"][0]], [b["sigma1"][1], b["phi1"][1]]
    lo2, hi2 = [b["sigma2"][0], b["phi2"][0]], [b["sigma2"][1], b["phi2"][1]]
    v1, l1, tr1 = _maximize(obj1, lo1, hi1, [init["sigma1"], init["phi1"]], rng, n_restarts, tol)
    v2, l2, tr2 = _maximize(obj2, lo2, hi2, [init["sigma2"], init["phi2"]], rng, n_restarts, tol)
    theta = LgcpCovariance(float(v1[0]), float(v1[1]), float(v2[0]), float(v2[1]), 0.0)
    h1, h2 = _hits(v1, lo1, hi1), _hits(v2, lo2, hi2)
    hits = {"sigma1": h1[0], "phi1": h1[1], "sigma2": h2[0], "phi2": h2[1]}
    if any(hits.values()):
        log.info("composite likelihood fit on the parameter box boundary: %s", hits)
    return ClFit(theta, l1, l2, hits, {"l1": tr1, "l2": tr2}, n_rs)

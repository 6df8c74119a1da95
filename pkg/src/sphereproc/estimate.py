"""Edge-corrected K-function estimators and intensity estimation.

All estimators share one pair pass (see ``_pairs``). Intensities may be
constants or callables: ``rho(y, u)`` for the joint intensity,
``rho1(y)`` for the spatial and ``rho2(u)`` for the spherical one.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import _pairs
from .curves import GridMismatchError, KCurve, KSurface
from .densities import KentDensity, MixtureDensity, WatsonDensity, orthonormal_frame
from .geom import sphere_surface_measure
from .pattern import BoxWindow, SpaceSpherePattern, SpatialPattern, SpherePattern

log = logging.getLogger(__name__)

__all__ = [
    "EdgeCorrection",
    "translation_correction",
    "temporal_correction",
    "intensity_hom",
    "default_r_grid",
    "default_s_grid",
    "k1_hat",
    "k2_hat",
    "k_hat",
    "d_hat",
    "k_statistics",
    "fit_mixture",
    "MixtureFit",
    "ModelInadequacyError",
    "ConvergenceError",
    "NonpositiveIntensityWarning",
]


class ModelInadequacyError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class NonpositiveIntensityWarning(UserWarning):
    pass


class EdgeCorrection(str, enum.Enum):
    NONE = "none"
    TRANSLATION = "translation"
    TEMPORAL = "temporal"

    @property
    def code(self) -> int:
        return {"none": _pairs.CORR_NONE, "translation": _pairs.CORR_TRANSLATION,
                "temporal": _pairs.CORR_TEMPORAL}[self.value]


def _correction(c, window: BoxWindow) -> EdgeCorrection:
    c = EdgeCorrection(c)
    if c is EdgeCorrection.TEMPORAL and window.d != 1:
        raise ValueError("the temporal correction requires d = 1")
    return c


def translation_correction(y_i, y_j, window: BoxWindow) -> float:
    """|W intersected with W shifted by y_i - y_j| for a box window."""
    lag = np.abs(np.atleast_1d(np.asarray(y_i, float)) - np.atleast_1d(np.asarray(y_j, float)))
    return float(np.prod(np.maximum(0.0, window.sides - lag)))


def temporal_correction(y_i, y_j, window: BoxWindow) -> float:
    """|W| if [y_i - t, y_i + t] lies in W (t the pair distance), else |W|/2."""
    if window.d != 1:
        raise ValueError("the temporal correction requires d = 1")
    yi, yj = float(np.ravel(y_i)[0]), float(np.ravel(y_j)[0])
    t = abs(yi - yj)
    inside = yi - t >= window.lower[0] and yi + t <= window.upper[0]
    return window.volume if inside else window.volume / 2.0


def intensity_hom(x: SpaceSpherePattern):
    """(n/|W|, n/sigma_k, n/(|W| sigma_k))."""
    if x.n == 0:
        raise ValueError("intensity of an empty pattern is undefined")
    sk = sphere_surface_measure(x.k)
    return x.n / x.window.volume, x.n / sk, x.n / (x.window.volume * sk)


def default_r_grid(window: BoxWindow, n: int = 512):
    return np.linspace(0.0, float(window.sides.min()) / 2.0, n)


def default_s_grid(n: int = 512):
    return np.linspace(0.0, math.pi, n)


# ---------------------------------------------------------------- helpers


def _check_r(r_grid):
    r = np.asarray(r_grid, dtype=float).ravel()
    if r.size == 0:
        raise ValueError("empty r grid")
    if r.min() < 0:
        raise ValueError("r grid must be nonnegative")
    if r.size > 1 and np.any(np.diff(r) <= 0):
        raise ValueError("r grid must be strictly increasing")
    return r


def _check_s(s_grid):
    s = np.asarray(s_grid, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("empty s grid")
    if s.min() < 0 or s.max() > math.pi:
        raise ValueError("s grid must lie in [0, pi]")
    if s.size > 1 and np.any(np.diff(s) <= 0):
        raise ValueError("s grid must be strictly increasing")
    return s


def _intensity_values(rho, n, *args, on_nonpositive="exclude"):
    """Per-point intensity values and the reciprocal weights (0 for excluded points)."""
    if callable(rho):
        vals = np.asarray(rho(*args), dtype=float).reshape(-1) if n else np.zeros(0)
        if vals.shape != (n,):
            raise ValueError("intensity function must return one value per point")
    else:
        vals = np.full(n, float(rho))
    bad = ~(vals > 0)
    if bad.any():
        if on_nonpositive == "raise":
            i = int(np.nonzero(bad)[0][0])
            raise ValueError(f"nonpositive intensity {vals[i]!r} at data point {i}")
        warnings.warn(f"{int(bad.sum())} point(s) with nonpositive intensity excluded from pair sums",
                      NonpositiveIntensityWarning, stacklevel=3)
    w = np.zeros(n)
    w[~bad] = 1.0 / vals[~bad]
    return w


def _cum2(h):
    return np.cumsum(np.cumsum(h, axis=0), axis=1)


def _log_skipped(skipped):
    if skipped:
        log.warning("%d pair(s) skipped: spatial lag leaves no translation overlap", skipped)


def _space_pass(y, u, window, w_rho, w_rho1, r, s, corr, method):
    h_rs, h_r, skipped = _pairs.space_sphere_hist(
        y, u, w_rho, w_rho1, r, np.cos(s), corr.code, window.lower, window.upper, window.volume, method
    )
    _log_skipped(skipped)
    return h_rs, h_r


# ---------------------------------------------------------------- estimators


def k1_hat(y, rho1, r_grid, correction="translation", method="auto", on_nonpositive="exclude") -> KCurve:
    """sum over ordered pairs of 1{|y_i - y_j| <= r} / (w1 rho1(y_i) rho1(y_j))."""
    if isinstance(y, SpaceSpherePattern):
        y = SpatialPattern(y.y, y.window)
    r = _check_r(r_grid)
    corr = _correction(correction, y.window)
    w1 = _intensity_values(rho1, y.n, y.y, on_nonpositive=on_nonpositive)
    u0 = np.zeros((y.n, 1))
    _, h_r = _space_pass(y.y, u0, y.window, w1, w1, r, np.array([math.pi]), corr, method)
    return KCurve(r, np.cumsum(h_r), name="K1")


def k2_hat(u, rho2, s_grid, method="auto", on_nonpositive="exclude") -> KCurve:
    """(1/sigma_k) sum over ordered pairs of 1{d(u_i, u_j) <= s} / (rho2(u_i) rho2(u_j))."""
    if isinstance(u, SpaceSpherePattern):
        u = SpherePattern(u.u, u.k)
    s = _check_s(s_grid)
    w2 = _intensity_values(rho2, u.n, u.u, on_nonpositive=on_nonpositive)
    h = _pairs.sphere_hist(u.u, w2, np.cos(s), method)
    return KCurve(s, np.cumsum(h) / sphere_surface_measure(u.k), name="K2")


def k_hat(x: SpaceSpherePattern, rho, r_grid, s_grid, correction="translation", method="auto",
          on_nonpositive="exclude") -> KSurface:
    """(1/sigma_k) sum over ordered pairs of 1{(r, s)-close} / (w1 rho(x_i) rho(x_j))."""
    r, s = _check_r(r_grid), _check_s(s_grid)
    corr = _correction(correction, x.window)
    w = _intensity_values(rho, x.n, x.y, x.u, on_nonpositive=on_nonpositive)
    h_rs, _ = _space_pass(x.y, x.u, x.window, w, w, r, s, corr, method)
    return KSurface(r, s, _cum2(h_rs) / sphere_surface_measure(x.k), name="K")


def d_hat(k: KSurface, k1: KCurve, k2: KCurve) -> KSurface:
    """K-hat(r, s) - K1-hat(r) K2-hat(s)."""
    if not (np.array_equal(k.r_grid, k1.grid) and np.array_equal(k.s_grid, k2.grid)):
        raise GridMismatchError("D-hat needs K, K1 and K2 on matching grids")
    return KSurface(k.r_grid, k.s_grid, k.values - np.outer(k1.values, k2.values), name="D", monotone=False)


def k_statistics(x: SpaceSpherePattern, r_grid, s_grid, rho=None, rho1=None, rho2=None,
                 correction="translation", method="auto", on_nonpositive="exclude") -> dict:
    """K-hat, K1-hat, K2-hat and D-hat from one spatial pair pass.

    Missing intensities default to the homogeneous estimates.
    """
    r, s = _check_r(r_grid), _check_s(s_grid)
    corr = _correction(correction, x.window)
    if x.n:
        h1, h2, h = intensity_hom(x)
    else:
        h1 = h2 = h = 1.0
    rho = h if rho is None else rho
    rho1 = h1 if rho1 is None else rho1
    rho2 = h2 if rho2 is None else rho2
    w = _intensity_values(rho, x.n, x.y, x.u, on_nonpositive=on_nonpositive)
    w1 = _intensity_values(rho1, x.n, x.y, on_nonpositive=on_nonpositive)
    w2 = _intensity_values(rho2, x.n, x.u, on_nonpositive=on_nonpositive)
    h_rs, h_r = _space_pass(x.y, x.u, x.window, w, w1, r, s, corr, method)
    sk = sphere_surface_measure(x.k)
    kk = KSurface(r, s, _cum2(h_rs) / sk, name="K")
    k1 = KCurve(r, np.cumsum(h_r), name="K1")
    k2 = KCurve(s, np.cumsum(_pairs.sphere_hist(x.u, w2, np.cos(s), method)) / sk, name="K2")
    return {"K": kk, "K1": k1, "K2": k2, "D": d_hat(kk, k1, k2)}


# ---------------------------------------------------------------- Kent-Watson mixture fit


@dataclass
class MixtureFit:
    density: MixtureDensity
    p_hat: float
    n_south: int
    kappa: float
    beta: float
    kappa_w: float
    loglik: float
    boundary_hit: bool
    converged: bool
    restarts: list = field(default_factory=list)

    def to_dict(self):
        return {
            "density": self.density.to_dict(), "p_hat": self.p_hat, "n_south": self.n_south,
            "kappa": self.kappa, "beta": self.beta, "kappa_w": self.kappa_w, "loglik": self.loglik,
            "boundary_hit": self.boundary_hit, "converged": self.converged,
        }


def _mixture(p, kappa, beta, kappa_w, frame, axis):
    return MixtureDensity(p, KentDensity(kappa, beta, frame), WatsonDensity(axis, kappa_w))


def fit_mixture(u, frame, watson_axis, rng=None, kappa_max: float = 500.0, n_restarts: int = 5,
                min_n: int = 10, joint: bool = False, tol: float = 1e-8) -> MixtureFit:
    """Two-stage fit of p Kent + (1 - p) Watson with fixed directions.

    The weight comes from the hemisphere count p = 1 - 2 n_s / n, where n_s
    counts points with negative projection on the Kent mean direction.
    (kappa, beta, kappa_w) then maximize the likelihood with a bounded
    Nelder-Mead search restarted from random points of the box. Internally
    beta = b kappa / 2 with b in [0, 0.999] so unimodality always holds.
    ``joint=True`` also optimizes p, starting from the hemisphere estimate.
    """
    if isinstance(u, (SpherePattern, SpaceSpherePattern)):
        u = u.u
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] != 3:
        raise ValueError("mixture fitting needs points on S^2")
    n = u.shape[0]
    if n < min_n:
        raise ValueError(f"need at least {min_n} points, got {n}")
    frame = np.asarray(frame, dtype=float)
    if frame.shape == (3,):
        frame = orthonormal_frame(frame)
    axis = np.asarray(watson_axis, dtype=float)
    n_s = int(np.sum(u @ frame[0] < 0.0))
    p_hat = 1.0 - 2.0 * n_s / n
    if p_hat < 0.0:
        raise ModelInadequacyError(f"{n_s} of {n} points lie south of the Kent mean direction; p-hat = {p_hat:.4f} < 0")
    rng = np.random.default_rng(0) if rng is None else rng

    a_kent = u @ frame.T
    t_kent = a_kent[:, 0]
    q_kent = a_kent[:, 1] ** 2 - a_kent[:, 2] ** 2
    q_wat = (u @ (axis / np.linalg.norm(axis))) ** 2
    lk_lo, lk_hi = math.log(1e-3), math.log(kappa_max)
    lw_lo, lw_hi = math.log(1e-6), math.log(kappa_max)
    lo = [lk_lo, 0.0, lw_lo] + ([0.0] if joint else [])
    hi = [lk_hi, 0.999, lw_hi] + ([1.0] if joint else [])

    def unpack(z):
        kappa = math.exp(z[0])
        beta = 0.5 * z[1] * kappa
        kw = -math.exp(z[2])
        p = z[3] if joint else p_hat
        return kappa, beta, kw, p

    def negll(z):
        z = np.clip(z, lo, hi)
        kappa, beta, kw, p = unpack(z)
        mix = _mixture(p, kappa, beta, kw, frame, axis)
        lf = mix.first.log_norm_const + kappa * t_kent + beta * q_kent
        lw = mix.second.log_norm_const + kw * q_wat
        parts = []
        if p > 0:
            parts.append(math.log(p) + lf)
        if p < 1:
            parts.append(math.log1p(-p) + lw)
        return -float(np.sum(np.logaddexp.reduce(np.vstack(parts), axis=0)))

    starts = [np.array([math.log(10.0), 0.3, math.log(5.0)] + ([p_hat] if joint else []))]
    for _ in range(n_restarts):
        starts.append(rng.uniform(lo, hi))
    runs = []
    for z0 in starts:
        res = optimize.minimize(negll, z0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                                options={"xatol": tol, "fatol": tol, "maxiter": 8000, "maxfev": 16000})
        runs.append(res)
    ok = [r for r in runs if r.success]
    if not ok:
        raise ConvergenceError("mixture likelihood search did not converge from any restart")
    best = min(ok, key=lambda r: r.fun)
    z = np.clip(best.x, lo, hi)
    kappa, beta, kw, p = unpack(z)
    span = np.asarray(hi) - np.asarray(lo)
    hit = bool(np.any(np.minimum(z - lo, np.asarray(hi) - z) <= 1e-6 * span))
    if hit:
        log.warning("mixture fit reached the parameter box boundary: kappa=%g beta=%g kappa_w=%g", kappa, beta, kw)
    mix = _mixture(p, kappa, beta, kw, frame, axis)
    return MixtureFit(mix, p, n_s, kappa, beta, kw, -float(best.fun), hit, True,
                      [{"fun": float(r.fun), "success": bool(r.success), "nit": int(r.nit)} for r in runs])

"""Theoretical K-functions and pair correlation functions.

Closed-form Poisson K-functions, numeric K for log-Gaussian Cox
processes, the separable factorisation K = beta K1 K2, and shot-noise
Cox pair correlations built from a Gaussian spatial kernel and a von
Mises-Fisher spherical kernel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from .curves import GridMismatchError, KCurve, KSurface
from .densities import VonMisesFisherKernel
from .geom import _sigma, ball_volume, cap_measure, unit_ball_surface

__all__ = [
    "PoissonKParams",
    "LgcpCovariance",
    "GaussianKernel",
    "SncpParams",
    "k_pois",
    "k1_pois",
    "k2_pois",
    "k_separable",
    "lgcp_pcf",
    "k_lgcp_numeric",
    "sncp_pcf",
    "vmf_autocorr",
]


@dataclass(frozen=True)
class PoissonKParams:
    d: int
    k: int

    def __post_init__(self):
        if self.d < 1 or self.k < 1:
            raise ValueError("need d >= 1 and k >= 1")


def k1_pois(d: int, r):
    """K1 of a Poisson process on R^d: the ball volume."""
    return ball_volume(d, r)


def k2_pois(k: int, s):
    """K2 of a Poisson process on S^k: the cap measure."""
    return cap_measure(k, s)


def k_pois(params: PoissonKParams, r, s):
    """Space-sphere K-function of a Poisson process."""
    return k1_pois(params.d, r) * k2_pois(params.k, s)


def k_separable(beta: float, k1: KCurve, k2: KCurve) -> KSurface:
    """beta * K1(r) K2(s) on the product of the two grids."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not isinstance(k1, KCurve) or not isinstance(k2, KCurve):
        raise GridMismatchError("k_separable expects two KCurve instances")
    return KSurface(k1.grid, k2.grid, beta * np.outer(k1.values, k2.values), name="K_sep")


@dataclass(frozen=True)
class LgcpCovariance:
    """Covariance of Z = alpha + s1 Z1(y) + s2 Z2(u) + delta Z3(y, u).

    Z1, Z2 have exponential covariances with scales phi1 (Euclidean) and
    phi2 (geodesic); Z3 has their product. alpha makes E exp(Z) = 1.
    """

    sigma1: float
    phi1: float
    sigma2: float
    phi2: float
    delta: float = 0.0

    def __post_init__(self):
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise ValueError("sigma1 and sigma2 must be nonnegative")
        if not (self.phi1 > 0 and self.phi2 > 0):
            raise ValueError("phi1 and phi2 must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")

    @property
    def variance(self) -> float:
        return self.sigma1**2 + self.sigma2**2 + self.delta**2

    @property
    def alpha(self) -> float:
        return -0.5 * self.variance

    @property
    def theta(self):
        return (self.sigma1, self.phi1, self.sigma2, self.phi2)

    def c1(self, t):
        return np.exp(-np.asarray(t, dtype=float) / self.phi1)

    def c2(self, s):
        return np.exp(-np.asarray(s, dtype=float) / self.phi2)

    def c0(self, t, s):
        a, b = self.c1(t), self.c2(s)
        return self.sigma1**2 * a + self.sigma2**2 * b + self.delta**2 * a * b

    def to_dict(self):
        return asdict(self)


def _lag_norm(y_lag):
    y = np.asarray(y_lag, dtype=float)
    return np.abs(y) if y.ndim == 0 else np.linalg.norm(y, axis=-1)


def lgcp_pcf(cov: LgcpCovariance, y_lag, s_lag):
    """g0(y, s) = exp{c0(|y|, s)} for the LGCP with covariance ``cov``.

    ``y_lag`` is a lag vector (or an array of them, last axis = d); a
    scalar is read as the lag norm.
    """
    s = np.asarray(s_lag, dtype=float)
    if np.any(s < 0) or np.any(s > math.pi):
        raise ValueError("geodesic lag must lie in [0, pi]")
    out = np.exp(cov.c0(_lag_norm(y_lag), s))
    return float(out) if np.ndim(out) == 0 else out


def k_lgcp_numeric(cov: LgcpCovariance, d: int, k: int, r: float, s: float, rtol: float = 1e-10) -> float:
    """Space-sphere K of the LGCP by quadrature of the defining integral.

    Uses radial (weight |S^{d-1}| t^{d-1}) and colatitude
    (weight sigma_{k-1} sin^{k-1}) reductions.
    """
    if r < 0 or not 0.0 <= s <= math.pi:
        raise ValueError("need r >= 0 and s in [0, pi]")
    if r == 0.0 or s == 0.0:
        return 0.0
    wd = unit_ball_surface(d)
    wk = _sigma(k - 1)
    s1, s2, dl = cov.sigma1**2, cov.sigma2**2, cov.delta**2

    def integrand(theta, t):
        a = math.exp(-t / cov.phi1)
        b = math.exp(-theta / cov.phi2)
        return wd * t ** (d - 1) * wk * math.sin(theta) ** (k - 1) * math.exp(s1 * a + s2 * b + dl * a * b)

    val, _ = integrate.dblquad(integrand, 0.0, r, 0.0, s, epsabs=0.0, epsrel=rtol)
    return float(val)


class GaussianKernel:
    """Isotropic Gaussian density on R^d with standard deviation ``omega``."""

    def __init__(self, omega: float, d: int = 1):
        if not omega > 0:
            raise ValueError("kernel bandwidth must be positive")
        self.omega, self.d = float(omega), int(d)

    def density(self, lag):
        lag = np.asarray(lag, dtype=float)
        sq = lag**2 if lag.ndim == 0 or self.d == 1 and lag.shape[-1:] != (1,) else np.sum(lag**2, axis=-1)
        return np.exp(-0.5 * sq / self.omega**2) / (2.0 * math.pi * self.omega**2) ** (self.d / 2.0)

    def _density_1d(self, x):
        return math.exp(-0.5 * (x / self.omega) ** 2) / (math.sqrt(2.0 * math.pi) * self.omega)

    def autocorr(self, y_lag) -> float:
        """int k01(y_lag - y') k01(-y') dy' by quadrature, one axis at a time."""
        lag = np.atleast_1d(np.asarray(y_lag, dtype=float))
        if lag.size == 1 and self.d > 1:
            lag = np.concatenate([lag, np.zeros(self.d - 1)])
        if lag.size != self.d:
            raise ValueError(f"lag has dimension {lag.size}, kernel is {self.d}-dimensional")
        out = 1.0
        half = 12.0 * self.omega
        for a in lag:
            lo, hi = min(0.0, a) - half, max(0.0, a) + half
            v, _ = integrate.quad(lambda x: self._density_1d(a - x) * self._density_1d(x), lo, hi,
                                  points=[0.0, a, 0.5 * a], epsabs=0.0, epsrel=1e-11, limit=200)
            out *= v
        return out

    def sample_offsets(self, n, rng):
        return self.omega * rng.standard_normal((int(n), self.d))

    def to_dict(self):
        return {"type": "gaussian", "omega": self.omega, "d": self.d}


def vmf_autocorr(kernel: VonMisesFisherKernel, angle: float) -> float:
    """int k02{d(u1,u')} k02{d(u2,u')} dnu(u') for d(u1, u2) = angle, by quadrature."""
    k = kernel.k
    ct, st = math.cos(angle), math.sin(angle)
    f = kernel.kernel
    if k == 1:
        v, _ = integrate.quad(lambda p: float(f(abs(p)) * f(min(abs(p - angle), 2 * math.pi - abs(p - angle)))),
                              -math.pi, math.pi, points=[0.0, angle], epsabs=0.0, epsrel=1e-10, limit=200)
        return v
    wphi = _sigma(k - 2)

    def integrand(phi, psi):
        c = ct * math.cos(psi) + st * math.sin(psi) * math.cos(phi)
        ang = math.acos(max(-1.0, min(1.0, c)))
        return float(f(psi) * f(ang)) * math.sin(psi) ** (k - 1) * wphi * math.sin(phi) ** (k - 2)

    v, _ = integrate.dblquad(integrand, 0.0, math.pi, 0.0, math.pi, epsabs=0.0, epsrel=1e-9)
    return v


@dataclass(frozen=True)
class SncpParams:
    """Homogeneous shot-noise Cox process with a factorised kernel.

    Parents form a Poisson process of intensity ``alpha_parent`` on
    R^d x S^k, with IID weights of first and second moments m1, m2.
    """

    alpha_parent: float
    m1: float
    m2: float
    kernel_spatial: GaussianKernel
    kernel_sphere: VonMisesFisherKernel

    def __post_init__(self):
        if not (self.alpha_parent > 0 and self.m1 > 0 and self.m2 > 0):
            raise ValueError("alpha_parent, m1 and m2 must be positive")
        if self.m2 < self.m1**2 * (1.0 - 1e-12):
            raise ValueError("mark moments violate m2 >= m1^2")

    @property
    def intensity(self) -> float:
        return self.m1 * self.alpha_parent

    @property
    def d(self) -> int:
        return self.kernel_spatial.d

    @property
    def k(self) -> int:
        return self.kernel_sphere.k

    def to_dict(self):
        return {
            "alpha_parent": self.alpha_parent, "m1": self.m1, "m2": self.m2,
            "omega": self.kernel_spatial.omega, "kappa": self.kernel_sphere.kappa,
            "d": self.d, "k": self.k,
        }


def sncp_pcf(params: SncpParams, y_lag, s_lag: float) -> float:
    """g = 1 + m2 / (alpha m1^2) * A1(y_lag) * A2(s_lag) for a factorised kernel."""
    if not isinstance(params.kernel_spatial, GaussianKernel) or not isinstance(
        params.kernel_sphere, VonMisesFisherKernel
    ):
        raise TypeError("sncp_pcf requires a factorised kernel (spatial x spherical)")
    if not 0.0 <= s_lag <= math.pi:
        raise ValueError("geodesic lag must lie in [0, pi]")
    a1 = params.kernel_spatial.autocorr(y_lag)
    a2 = vmf_autocorr(params.kernel_sphere, float(s_lag))
    return 1.0 + params.m2 / (params.alpha_parent * params.m1**2) * a1 * a2

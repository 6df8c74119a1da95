"""Parametric densities on the sphere: uniform, Kent, Watson, mixtures, von Mises-Fisher.

Normalizing constants are computed by quadrature in each density's own
frame (Gauss-Legendre in the cosine of the colatitude, trapezoid in
longitude), doubling the rule until the relative change drops below
1e-8. Kent and Watson are defined on S^2 only.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .geom import sphere_surface_measure, _sigma

__all__ = [
    "SphericalDensity",
    "UniformDensity",
    "KentDensity",
    "WatsonDensity",
    "MixtureDensity",
    "VonMisesFisherKernel",
    "density_eval",
    "density_norm_const",
    "density_from_dict",
    "sample_uniform_sphere",
    "orthonormal_frame",
    "neuron_orientation_mixture",
]

_QUAD_RTOL = 1e-8


@lru_cache(maxsize=64)
def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


def _log_integral_frame(log_f, rtol=_QUAD_RTOL, n0=32, n_max=4096):
    """log of the integral over S^2 of exp(log_f(t, phi)).

    ``t`` is the cosine of the colatitude in the density's frame.
    """
    prev = None
    n = n0
    while n <= n_max:
        t, wt = _gauss_legendre(n)
        m = max(16, n // 2)
        phi = 2.0 * np.pi * np.arange(m) / m
        vals = log_f(t[:, None], phi[None, :])
        logw = np.log(wt)[:, None] + math.log(2.0 * np.pi / m)
        cur = float(logsumexp(vals + logw))
        if prev is not None and abs(math.expm1(cur - prev)) < rtol:
            return cur
        prev = cur
        n *= 2
    raise ArithmeticError("sphere quadrature did not reach the requested tolerance")


def orthonormal_frame(mu):
    """Rows (mu, a, b) forming an orthonormal basis of R^3 with mu first."""
    mu = np.asarray(mu, dtype=float)
    mu = mu / np.linalg.norm(mu)
    helper = np.eye(3)[np.argmin(np.abs(mu))]
    a = np.cross(mu, helper)
    a /= np.linalg.norm(a)
    b = np.cross(mu, a)
    return np.vstack([mu, a, b])


def sample_uniform_sphere(n, k, rng):
    g = rng.standard_normal((int(n), k + 1))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _check_points(u, k):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] != k + 1:
        raise ValueError(f"points have sphere dimension {u.shape[1] - 1}, density expects {k}")
    return u


def _from_frame(t, phi, frame):
    st = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    return (t[:, None] * frame[0] + (st * np.cos(phi))[:, None] * frame[1]
            + (st * np.sin(phi))[:, None] * frame[2])


def _sample_exp_t(kappa, n, rng):
    # t on [-1, 1] with density proportional to exp(kappa t)
    v = rng.random(n)
    if kappa < 1e-12:
        return 2.0 * v - 1.0
    return 1.0 + np.log(v + (1.0 - v) * np.exp(-2.0 * kappa)) / kappa


class SphericalDensity:
    """Base class. Subclasses provide ``log_pdf`` and ``sample``."""

    k = 2

    def log_pdf(self, u):
        raise NotImplementedError

    def pdf(self, u):
        return np.exp(self.log_pdf(u))

    def norm_const(self) -> float:
        return math.exp(self.log_norm_const)

    log_norm_const = 0.0

    def sample(self, n, rng):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class UniformDensity(SphericalDensity):
    def __init__(self, k: int = 2):
        self.k = int(k)
        self.log_norm_const = -math.log(sphere_surface_measure(self.k))

    def log_pdf(self, u):
        u = _check_points(u, self.k)
        return np.full(u.shape[0], self.log_norm_const)

    def sample(self, n, rng):
        return sample_uniform_sphere(n, self.k, rng)

    def to_dict(self):
        return {"type": "uniform", "k": self.k}

    def __repr__(self):
        return f"UniformDensity(k={self.k})"


class KentDensity(SphericalDensity):
    """Unimodal Kent density C_K exp{kappa g1.u + beta[(g2.u)^2 - (g3.u)^2]}.

    ``frame`` rows are the mean direction g1 and the major/minor axes g2, g3.
    """

    def __init__(self, kappa, beta, frame=None):
        kappa, beta = float(kappa), float(beta)
        if kappa < 0 or beta < 0:
            raise ValueError("Kent concentration and ovalness must be nonnegative")
        if beta > 0 and not 2.0 * beta < kappa:
            raise ValueError(f"unimodal Kent needs 2*beta < kappa, got kappa={kappa}, beta={beta}")
        frame = np.eye(3)[[2, 0, 1]] if frame is None else np.asarray(frame, dtype=float)
        if frame.shape != (3, 3) or not np.allclose(frame @ frame.T, np.eye(3), atol=1e-9):
            raise ValueError("Kent frame must be a 3x3 matrix with orthonormal rows")
        self.kappa, self.beta, self.frame = kappa, beta, frame
        self.log_norm_const = -_kent_log_integral(kappa, beta)

    def exponent(self, u):
        u = _check_points(u, 2)
        a = u @ self.frame.T
        return self.kappa * a[:, 0] + self.beta * (a[:, 1] ** 2 - a[:, 2] ** 2)

    def log_pdf(self, u):
        return self.log_norm_const + self.exponent(u)

    def sample(self, n, rng):
        n = int(n)
        out = np.empty((0, 3))
        kappa, beta = self.kappa, self.beta
        while out.shape[0] < n:
            m = max(64, int(1.5 * (n - out.shape[0])) + 16)
            phi = 2.0 * np.pi * rng.random(m)
            if beta <= 1.0:
                # exp(kappa t) envelope, bound exp(beta)
                t = _sample_exp_t(kappa, m, rng)
                log_acc = beta * (1.0 - t * t) * np.cos(2.0 * phi) - beta
            else:
                # truncated normal envelope from exp(kappa t - beta t^2)
                mean, sd = kappa / (2.0 * beta), math.sqrt(1.0 / (2.0 * beta))
                tn = stats.truncnorm((-1.0 - mean) / sd, (1.0 - mean) / sd, loc=mean, scale=sd)
                t = tn.rvs(size=m, random_state=rng)
                log_acc = -2.0 * beta * (1.0 - t * t) * np.sin(phi) ** 2
            keep = np.log(rng.random(m)) < log_acc
            out = np.vstack([out, _from_frame(t[keep], phi[keep], self.frame)])
        return out[:n]

    def to_dict(self):
        return {"type": "kent", "kappa": self.kappa, "beta": self.beta, "frame": self.frame.tolist()}

    def __repr__(self):
        return f"KentDensity(kappa={self.kappa:g}, beta={self.beta:g})"


@lru_cache(maxsize=4096)
def _kent_log_integral(kappa, beta):
    return _log_integral_frame(lambda t, phi: kappa * t + beta * (1.0 - t * t) * np.cos(2.0 * phi))


@lru_cache(maxsize=4096)
def _watson_log_integral(kappa):
    return _log_integral_frame(lambda t, phi: kappa * t * t + 0.0 * phi)


class WatsonDensity(SphericalDensity):
    """Watson density C_W exp{kappa (mu.u)^2}; kappa < 0 gives a girdle."""

    def __init__(self, mu, kappa):
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (3,):
            raise ValueError("Watson axis must be a vector in R^3")
        self.mu = mu / np.linalg.norm(mu)
        self.kappa = float(kappa)
        self.frame = orthonormal_frame(self.mu)
        self.log_norm_const = -_watson_log_integral(self.kappa)

    def log_pdf(self, u):
        u = _check_points(u, 2)
        return self.log_norm_const + self.kappa * (u @ self.mu) ** 2

    def sample(self, n, rng):
        n = int(n)
        kappa = self.kappa
        if abs(kappa) < 1e-12:
            return sample_uniform_sphere(n, 2, rng)
        if kappa < 0:
            sd = math.sqrt(1.0 / (-2.0 * kappa))
            t = stats.truncnorm(-1.0 / sd, 1.0 / sd, loc=0.0, scale=sd).rvs(size=n, random_state=rng)
        else:
            t = np.empty(0)
            while t.size < n:
                m = 2 * (n - t.size) + 16
                a = 1.0 + np.log(rng.random(m) * (1.0 - math.exp(-kappa)) + math.exp(-kappa)) / kappa
                keep = np.log(rng.random(m)) < kappa * (a * a - a)
                sign = np.where(rng.random(m) < 0.5, -1.0, 1.0)
                t = np.concatenate([t, (sign * a)[keep]])
            t = t[:n]
        phi = 2.0 * np.pi * rng.random(n)
        return _from_frame(t, phi, self.frame)

    def to_dict(self):
        return {"type": "watson", "mu": self.mu.tolist(), "kappa": self.kappa}

    def __repr__(self):
        return f"WatsonDensity(kappa={self.kappa:g})"


class MixtureDensity(SphericalDensity):
    """p * first + (1 - p) * second."""

    def __init__(self, p, first: SphericalDensity, second: SphericalDensity):
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"mixture weight must lie in [0, 1], got {p}")
        if first.k != second.k:
            raise ValueError("mixture components live on spheres of different dimension")
        self.p, self.first, self.second, self.k = p, first, second, first.k
        self.log_norm_const = 0.0

    def log_pdf(self, u):
        parts = []
        if self.p > 0:
            parts.append(math.log(self.p) + self.first.log_pdf(u))
        if self.p < 1:
            parts.append(math.log1p(-self.p) + self.second.log_pdf(u))
        return np.logaddexp.reduce(np.vstack(parts), axis=0)

    def component_probability(self, u):
        """Posterior probability that points were drawn from ``first``."""
        if self.p == 0:
            return np.zeros(_check_points(u, self.k).shape[0])
        return np.exp(math.log(self.p) + self.first.log_pdf(u) - self.log_pdf(u))

    def sample(self, n, rng):
        n = int(n)
        pick = rng.random(n) < self.p
        out = np.empty((n, self.k + 1))
        n1 = int(pick.sum())
        if n1:
            out[pick] = self.first.sample(n1, rng)
        if n - n1:
            out[~pick] = self.second.sample(n - n1, rng)
        return out

    def to_dict(self):
        return {"type": "mixture", "p": self.p, "first": self.first.to_dict(), "second": self.second.to_dict()}

    def __repr__(self):
        return f"MixtureDensity(p={self.p:g}, {self.first!r}, {self.second!r})"


class VonMisesFisherKernel(SphericalDensity):
    """Isotropic kernel C exp{kappa cos d(u, mu)} on S^k, as a function of the angle.

    Used as the spherical offspring kernel of shot-noise Cox processes.
    """

    def __init__(self, kappa, k: int = 2):
        self.kappa = float(kappa)
        if self.kappa < 0:
            raise ValueError("von Mises-Fisher concentration must be nonnegative")
        self.k = int(k)
        self.log_norm_const = -_vmf_log_integral(self.kappa, self.k)

    def kernel(self, angle):
        """Density value at geodesic distance ``angle`` from the centre."""
        return np.exp(self.log_norm_const + self.kappa * np.cos(np.asarray(angle, dtype=float)))

    def sample_around(self, centres, rng):
        """One draw around each row of ``centres``."""
        centres = np.atleast_2d(np.asarray(centres, dtype=float))
        n, p = centres.shape
        if n == 0:
            return np.zeros((0, p))
        w = _vmf_sample_w(self.kappa, p, n, rng)
        v = rng.standard_normal((n, p))
        v -= np.sum(v * centres, axis=1, keepdims=True) * centres
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        out = w[:, None] * centres + np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * v
        return out / np.linalg.norm(out, axis=1, keepdims=True)

    def to_dict(self):
        return {"type": "vmf", "kappa": self.kappa, "k": self.k}


@lru_cache(maxsize=256)
def _vmf_log_integral(kappa, k):
    # sigma_{k-1} * int_0^pi sin^{k-1}(t) exp(kappa cos t) dt, on the scale exp(kappa)
    z, wz = _gauss_legendre(512)
    if k == 1:
        theta = 0.5 * np.pi * (z + 1.0)
        vals = kappa * (np.cos(theta) - 1.0)
        return kappa + math.log(2.0 * 0.5 * np.pi) + float(logsumexp(vals, b=wz))
    if k == 2:
        # t = cos(theta) removes the sine weight exactly
        return kappa + math.log(_sigma(1)) + float(logsumexp(kappa * (z - 1.0), b=wz))
    # in theta the integrand sin^{k-1} exp(kappa (cos - 1)) is smooth at both ends
    theta = 0.5 * np.pi * (z + 1.0)
    with np.errstate(divide="ignore"):
        vals = kappa * (np.cos(theta) - 1.0) + (k - 1) * np.log(np.sin(theta))
    return kappa + math.log(_sigma(k - 1) * 0.5 * np.pi) + float(logsumexp(vals, b=wz))


def _vmf_sample_w(kappa, p, n, rng):
    # Wood (1994) rejection sampler for the cosine to the mean direction
    if kappa < 1e-12:
        g = rng.standard_normal((n, p))
        return g[:, 0] / np.linalg.norm(g, axis=1)
    if p == 3:
        return _sample_exp_t(kappa, n, rng)
    b = (-2.0 * kappa + math.sqrt(4.0 * kappa * kappa + (p - 1) ** 2)) / (p - 1)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (p - 1) * math.log(1.0 - x0 * x0)
    out = np.empty(0)
    while out.size < n:
        m = 2 * (n - out.size) + 16
        z = rng.beta((p - 1) / 2.0, (p - 1) / 2.0, size=m)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        keep = kappa * w + (p - 1) * np.log(1.0 - x0 * w) - c >= np.log(rng.random(m))
        out = np.concatenate([out, w[keep]])
    return out[:n]


def density_eval(f: SphericalDensity, u):
    """Density value(s) at ``u`` (a single point or an (n, k+1) array)."""
    vals = f.pdf(u)
    return float(vals[0]) if np.ndim(u) == 1 else vals


def density_norm_const(f: SphericalDensity) -> float:
    return f.norm_const()


def density_from_dict(d: dict) -> SphericalDensity:
    kind = d.get("type")
    if kind == "uniform":
        return UniformDensity(d.get("k", 2))
    if kind == "kent":
        return KentDensity(d["kappa"], d["beta"], d.get("frame"))
    if kind == "watson":
        return WatsonDensity(d["mu"], d["kappa"])
    if kind == "mixture":
        return MixtureDensity(d["p"], density_from_dict(d["first"]), density_from_dict(d["second"]))
    if kind == "vmf":
        return VonMisesFisherKernel(d["kappa"], d.get("k", 2))
    raise ValueError(f"unknown density type {kind!r}")


def neuron_orientation_mixture() -> MixtureDensity:
    """Kent-Watson mixture with fitted coefficients for neuron orientations.

    Kent exponent 14.89 u3 + 2.69 (u1^2 - u2^2), Watson exponent -7.88 u2^2, weight 0.94.
    """
    kent = KentDensity(14.89, 2.69, np.eye(3)[[2, 0, 1]])
    watson = WatsonDensity([0.0, 1.0, 0.0], -7.88)
    return MixtureDensity(0.94, kent, watson)

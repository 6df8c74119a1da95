"""Simulation of Poisson, log-Gaussian Cox and shot-noise Cox processes on W x S^k.

Every simulator takes an explicit ``numpy.random.Generator``; use
:class:`RngSeed` to derive reproducible, independent per-replicate streams.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .densities import sample_uniform_sphere
from .geom import sphere_surface_measure
from .model import LgcpCovariance, SncpParams
from .pattern import BoxWindow, SpaceSpherePattern

log = logging.getLogger(__name__)

__all__ = [
    "RngSeed",
    "make_rng",
    "sim_poisson",
    "sim_grf_interval",
    "sim_grf_sphere",
    "sim_grf_product",
    "fibonacci_nodes",
    "FieldGrid",
    "SphereCells",
    "CoarseGridWarning",
    "sim_lgcp",
    "sim_sncp",
    "thin",
    "permute_marks",
    "IntensityBoundError",
    "PoissonModel",
    "LgcpModel",
    "SncpModel",
]

MAX_SPHERE_NODES = 4096
_JITTER_START, _JITTER_STEP, _JITTER_RETRIES = 1e-12, 10.0, 5


class IntensityBoundError(ValueError):
    pass


class CoarseGridWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RngSeed:
    """(seed, stream) pair naming one reproducible random stream."""

    seed: int
    stream: int = 0

    def generator(self, *subkey: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream), *map(int, subkey)))
        return np.random.default_rng(ss)


def make_rng(seed: int, *key: int) -> np.random.Generator:
    return RngSeed(seed, key[0] if key else 0).generator(*key[1:])


# ---------------------------------------------------------------- Poisson


def _uniform_in_box(n, window: BoxWindow, rng):
    return window.lower + rng.random((n, window.d)) * window.sides


def sim_poisson(rho, window: BoxWindow, k: int, rng, bound: float | None = None) -> SpaceSpherePattern:
    """Poisson process with constant intensity ``rho`` or intensity function ``rho(y, u)``.

    For a function, ``bound`` must dominate it; the dominating homogeneous
    process is thinned with retention rho/bound.
    """
    mu = window.volume * sphere_surface_measure(k)
    if not callable(rho):
        rho = float(rho)
        if rho < 0:
            raise ValueError("intensity must be nonnegative")
        n = rng.poisson(rho * mu)
        return SpaceSpherePattern(_uniform_in_box(n, window, rng), sample_uniform_sphere(n, k, rng), window, k)
    if bound is None or not bound > 0:
        raise ValueError("an inhomogeneous intensity needs a positive dominating bound")
    n = rng.poisson(bound * mu)
    y = _uniform_in_box(n, window, rng)
    u = sample_uniform_sphere(n, k, rng)
    vals = np.asarray(rho(y, u), dtype=float).reshape(-1) if n else np.zeros(0)
    over = np.nonzero(vals > bound * (1.0 + 1e-12))[0]
    if over.size:
        i = int(over[np.argmax(vals[over])])
        raise IntensityBoundError(
            f"intensity {vals[i]!r} exceeds the bound {bound!r} at y={y[i].tolist()}, u={u[i].tolist()}"
        )
    if np.any(vals < 0):
        raise ValueError("intensity function returned negative values")
    keep = rng.random(n) < vals / bound
    return SpaceSpherePattern(y[keep], u[keep], window, k)


# ---------------------------------------------------------------- Gaussian fields


def sim_grf_interval(phi1: float, grid, rng, size: int | None = None):
    """Exact exponential-covariance field on a sorted 1-D grid via the AR(1) recursion."""
    if not phi1 > 0:
        raise ValueError("phi1 must be positive")
    t = np.asarray(grid, dtype=float).ravel()
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError("grid must be sorted")
    shape = (t.size,) if size is None else (int(size), t.size)
    eps = rng.standard_normal(shape)
    a = np.exp(-np.diff(t) / phi1)
    b = np.sqrt(-np.expm1(-2.0 * np.diff(t) / phi1))
    z = np.empty(shape)
    z[..., 0] = eps[..., 0]
    for i in range(1, t.size):
        z[..., i] = a[i - 1] * z[..., i - 1] + b[i - 1] * eps[..., i]
    return z


def fibonacci_nodes(n: int):
    """Fibonacci-lattice nodes on S^2 with equal weights 4 pi / n."""
    if n < 2:
        raise ValueError("need at least 2 nodes")
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = math.pi * (1.0 + math.sqrt(5.0)) * i
    rr = np.sqrt(1.0 - z * z)
    nodes = np.column_stack([rr * np.cos(phi), rr * np.sin(phi), z])
    return nodes, np.full(n, 4.0 * math.pi / n)


def _cholesky_jitter(c):
    n = c.shape[0]
    jitter = _JITTER_START * np.trace(c) / n
    for _ in range(_JITTER_RETRIES + 1):
        try:
            return np.linalg.cholesky(c + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            jitter *= _JITTER_STEP
    raise np.linalg.LinAlgError(f"covariance factorization failed after {_JITTER_RETRIES} jitter increases")


_FACTOR_CACHE: OrderedDict = OrderedDict()
_FACTOR_CACHE_SIZE = 4


def _factor(kind, scale, nodes):
    key = (kind, float(scale), nodes.shape, hash(nodes.tobytes()))
    hit = _FACTOR_CACHE.get(key)
    if hit is not None:
        _FACTOR_CACHE.move_to_end(key)
        return hit
    if kind == "sphere":
        dist = np.arccos(np.clip(nodes @ nodes.T, -1.0, 1.0))
    else:
        diff = nodes[:, None, :] - nodes[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
    chol = _cholesky_jitter(np.exp(-dist / scale))
    _FACTOR_CACHE[key] = chol
    if len(_FACTOR_CACHE) > _FACTOR_CACHE_SIZE:
        _FACTOR_CACHE.popitem(last=False)
    return chol


def sim_grf_sphere(phi2: float, nodes, rng, size: int | None = None, max_nodes: int = MAX_SPHERE_NODES):
    """Field with covariance exp(-d(u_i, u_j)/phi2) at the given sphere nodes (dense Cholesky)."""
    if not phi2 > 0:
        raise ValueError("phi2 must be positive")
    nodes = np.ascontiguousarray(nodes, dtype=float)
    if nodes.shape[0] > max_nodes:
        raise ValueError(f"{nodes.shape[0]} sphere nodes exceed the maximum of {max_nodes}")
    chol = _factor("sphere", phi2, nodes)
    eps = rng.standard_normal((nodes.shape[0],) if size is None else (nodes.shape[0], int(size)))
    return (chol @ eps).T if size is not None else chol @ eps


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """Field values on spatial nodes x sphere nodes; rows index spatial nodes."""

    spatial_nodes: np.ndarray
    sphere_nodes: np.ndarray
    sphere_weights: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        m, n = self.spatial_nodes.shape[0], self.sphere_nodes.shape[0]
        if m < 2 or n < 2:
            raise ValueError("a field grid needs at least 2 nodes per factor")
        if np.any(self.sphere_weights <= 0):
            raise ValueError("sphere node weights must be positive")
        if self.values.shape != (m, n):
            raise ValueError("field values do not match the node sets")


def _spatial_factor(phi1, spatial_nodes):
    return _factor("space", phi1, np.ascontiguousarray(np.atleast_2d(spatial_nodes).reshape(len(spatial_nodes), -1)))


def sim_grf_product(phi1, phi2, spatial_nodes, sphere_nodes, rng, sphere_weights=None) -> FieldGrid:
    """Field with covariance c1 * c2 via L1 E L2^T on the tensor grid."""
    sp = np.asarray(spatial_nodes, dtype=float)
    sp = sp.reshape(-1, 1) if sp.ndim == 1 else sp
    sn = np.ascontiguousarray(sphere_nodes, dtype=float)
    l1 = _spatial_factor(phi1, sp)
    l2 = _factor("sphere", phi2, sn)
    vals = l1 @ rng.standard_normal((sp.shape[0], sn.shape[0])) @ l2.T
    w = np.full(sn.shape[0], sphere_surface_measure(sn.shape[1] - 1) / sn.shape[0]) if sphere_weights is None else sphere_weights
    return FieldGrid(sp, sn, np.asarray(w, dtype=float), vals)


# ---------------------------------------------------------------- equal-area sphere cells


class SphereCells:
    """Partition of S^k (k = 1, 2) into ``n`` cells of equal measure.

    On S^2 the cells are zonal (z, longitude) rectangles: two polar caps and
    collars split into equal sectors, with zone boundaries at z = 1 - 2c/n
    for cumulative cell counts c, so every cell has area exactly 4 pi / n.
    On S^1 the cells are equal arcs.
    """

    def __init__(self, n: int, k: int = 2):
        if k not in (1, 2):
            raise ValueError("equal-area cells are implemented for k = 1 and k = 2")
        if n < 2:
            raise ValueError("need at least 2 cells")
        self.n, self.k = int(n), int(k)
        self.cell_measure = sphere_surface_measure(k) / n
        if k == 1:
            self._phi_lo = 2.0 * math.pi * np.arange(n) / n
            self._phi_w = np.full(n, 2.0 * math.pi / n)
            mid = self._phi_lo + 0.5 * self._phi_w
            self.centres = np.column_stack([np.cos(mid), np.sin(mid)])
            return
        counts = self._zone_counts(n)
        cum = np.concatenate([[0], np.cumsum(counts)])
        zb = 1.0 - 2.0 * cum / n
        zb[-1] = -1.0
        z_hi = np.repeat(zb[:-1], counts)
        z_lo = np.repeat(zb[1:], counts)
        j = np.concatenate([np.arange(c) for c in counts])
        m = np.repeat(counts, counts).astype(float)
        self._z_lo, self._z_hi = z_lo, z_hi
        self._phi_w = 2.0 * math.pi / m
        self._phi_lo = j * self._phi_w
        zc = 0.5 * (z_lo + z_hi)
        phic = self._phi_lo + 0.5 * self._phi_w
        rr = np.sqrt(np.clip(1.0 - zc * zc, 0.0, None))
        self.centres = np.column_stack([rr * np.cos(phic), rr * np.sin(phic), zc])
        self.zone_counts = counts

    @staticmethod
    def _zone_counts(n):
        if n == 2:
            return np.array([1, 1])
        area = 4.0 * math.pi / n
        cap = math.acos(1.0 - 2.0 / n)
        n_coll = max(1, int(round((math.pi - 2.0 * cap) / math.sqrt(area))))
        fit = (math.pi - 2.0 * cap) / n_coll
        counts, carry, done = [1], 0.0, 1
        for i in range(n_coll):
            a, b = cap + i * fit, cap + (i + 1) * fit
            ideal = 2.0 * math.pi * (math.cos(a) - math.cos(b)) / area + carry
            c = int(round(ideal)) if i < n_coll - 1 else n - 1 - done
            c = max(c, 1)
            carry = ideal - c
            counts.append(c)
            done += c
        counts.append(1)
        return np.array(counts)

    @property
    def extent(self) -> float:
        """Radius of a cap with the measure of one cell."""
        if self.k == 1:
            return math.pi / self.n
        return math.acos(1.0 - 2.0 / self.n)

    @classmethod
    def for_extent(cls, extent: float, k: int = 2) -> "SphereCells":
        """Smallest partition whose cell extent does not exceed ``extent``."""
        if not extent > 0:
            raise ValueError("extent must be positive")
        if k == 1:
            n = math.ceil(math.pi / extent)
        else:
            n = math.ceil(2.0 / (1.0 - math.cos(min(extent, math.pi))))
        return cls(max(n, 2), k)

    def sample(self, cells, rng):
        """One uniform point in each listed cell."""
        cells = np.asarray(cells, dtype=np.int64)
        phi = self._phi_lo[cells] + self._phi_w[cells] * rng.random(cells.size)
        if self.k == 1:
            return np.column_stack([np.cos(phi), np.sin(phi)])
        z = self._z_lo[cells] + (self._z_hi[cells] - self._z_lo[cells]) * rng.random(cells.size)
        rr = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        return np.column_stack([rr * np.cos(phi), rr * np.sin(phi), z])

    def locate(self, u):
        """Cell index of each row of ``u``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        phi = np.mod(np.arctan2(u[:, 1], u[:, 0]), 2.0 * math.pi)
        if self.k == 1:
            return np.minimum((phi / (2.0 * math.pi) * self.n).astype(np.int64), self.n - 1)
        cum = np.concatenate([[0], np.cumsum(self.zone_counts)])
        zb = 1.0 - 2.0 * cum / self.n
        zone = np.clip(np.searchsorted(-zb, -u[:, 2], side="right") - 1, 0, self.zone_counts.size - 1)
        m = self.zone_counts[zone]
        j = np.minimum((phi / (2.0 * math.pi) * m).astype(np.int64), m - 1)
        return cum[zone] + j


# ---------------------------------------------------------------- LGCP


def _coarse(msg, on_coarse):
    if on_coarse == "error":
        raise ValueError(msg)
    warnings.warn(msg, CoarseGridWarning, stacklevel=3)


def _spatial_cells(window: BoxWindow, phi1, counts, on_coarse):
    target = phi1 / 4.0
    if counts is None:
        counts = [max(2, math.ceil(side / target - 1e-9)) for side in window.sides]
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (window.d,))
    width = window.sides / counts
    if np.any(width > target * (1 + 1e-9)):
        _coarse(f"spatial cell width {width.max():g} exceeds phi1/4 = {target:g}", on_coarse)
    axes = [window.lower[a] + width[a] * (np.arange(counts[a]) + 0.5) for a in range(window.d)]
    centres = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, window.d)
    return centres, width, counts


def sim_lgcp(rho: float, cov: LgcpCovariance, window: BoxWindow, k: int, rng,
             spatial_cells=None, sphere_cells: int | None = None, on_coarse: str = "warn") -> SpaceSpherePattern:
    """LGCP with random intensity rho exp(Z), Z piecewise constant on a product grid.

    Spatial cells default to width <= phi1/4 per axis and sphere cells to
    extent <= phi2/4 (see :class:`SphereCells`). The field is evaluated at
    cell centres; counts are Poisson per cell and points are uniform in
    their cell.
    """
    if cov.delta < 0:
        raise ValueError("delta must be nonnegative")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if cov.variance == 0.0:
        return sim_poisson(rho, window, k, rng)
    centres, width, counts = _spatial_cells(window, cov.phi1, spatial_cells, on_coarse)
    cells = SphereCells.for_extent(cov.phi2 / 4.0, k) if sphere_cells is None else SphereCells(sphere_cells, k)
    if cells.extent > cov.phi2 / 4.0 * (1 + 1e-9):
        _coarse(f"sphere cell extent {cells.extent:g} exceeds phi2/4 = {cov.phi2 / 4.0:g}", on_coarse)
    m, n = centres.shape[0], cells.n
    z = np.full((m, n), cov.alpha)
    if cov.sigma1 > 0:
        if window.d == 1:
            z1 = sim_grf_interval(cov.phi1, centres[:, 0], rng)
        else:
            z1 = _spatial_factor(cov.phi1, centres) @ rng.standard_normal(m)
        z += cov.sigma1 * z1[:, None]
    if cov.sigma2 > 0:
        z += cov.sigma2 * sim_grf_sphere(cov.phi2, cells.centres, rng)[None, :]
    if cov.delta > 0:
        z += cov.delta * sim_grf_product(cov.phi1, cov.phi2, centres, cells.centres, rng).values
    cell_mu = float(np.prod(width)) * cells.cell_measure
    cnt = rng.poisson(rho * cell_mu * np.exp(z)).ravel()
    idx = np.repeat(np.arange(m * n), cnt)
    si, ui = np.divmod(idx, n)
    y = centres[si] + (rng.random((idx.size, window.d)) - 0.5) * width
    y = np.clip(y, window.lower, window.upper)
    u = cells.sample(ui, rng)
    return SpaceSpherePattern(y, u, window, k)


# ---------------------------------------------------------------- shot noise


def _gamma_marks(m1, m2):
    var = m2 - m1 * m1
    if var <= 1e-12 * m1 * m1:
        return lambda n, rng: np.full(n, m1)
    shape, scale = m1 * m1 / var, var / m1
    return lambda n, rng: rng.gamma(shape, scale, size=n)


def sim_sncp(params: SncpParams, window: BoxWindow, rng, buffer: float = 5.0, mark_sampler=None) -> SpaceSpherePattern:
    """Shot-noise Cox process with Gaussian x von Mises-Fisher offspring kernel.

    Parents are Poisson on the window enlarged by ``buffer`` kernel standard
    deviations; marks default to a Gamma law with moments (m1, m2).
    """
    k = params.k
    if params.d != window.d:
        raise ValueError(f"kernel dimension {params.d} does not match window dimension {window.d}")
    pad = buffer * params.kernel_spatial.omega
    big = BoxWindow(window.lower - pad, window.upper + pad)
    n_par = rng.poisson(params.alpha_parent * big.volume * sphere_surface_measure(k))
    py = _uniform_in_box(n_par, big, rng)
    pu = sample_uniform_sphere(n_par, k, rng)
    sampler = _gamma_marks(params.m1, params.m2) if mark_sampler is None else mark_sampler
    gam = np.asarray(sampler(n_par, rng), dtype=float).reshape(-1)
    if gam.shape != (n_par,) or not np.all(np.isfinite(gam)) or np.any(gam < 0):
        raise ValueError("mark distribution must return one finite nonnegative weight per parent")
    n_off = rng.poisson(gam)
    par = np.repeat(np.arange(n_par), n_off)
    y = py[par] + params.kernel_spatial.sample_offsets(par.size, rng)
    u = params.kernel_sphere.sample_around(pu[par], rng)
    keep = window.contains(y)
    return SpaceSpherePattern(y[keep], u[keep], window, k)


# ---------------------------------------------------------------- thinning and permutation


def thin(x: SpaceSpherePattern, retention, rng) -> SpaceSpherePattern:
    """Keep each point independently with probability ``retention(y, u)`` (or a constant)."""
    if callable(retention):
        p = np.asarray(retention(x.y, x.u), dtype=float).reshape(-1) if x.n else np.zeros(0)
    else:
        p = np.full(x.n, float(retention))
    if p.shape != (x.n,):
        raise ValueError("retention must give one probability per point")
    bad = np.nonzero(~((p >= 0.0) & (p <= 1.0)))[0]
    if bad.size:
        raise ValueError(f"retention probability {p[bad[0]]!r} at point {int(bad[0])} is outside [0, 1]")
    return x.subset(rng.random(x.n) < p)


def permute_marks(x: SpaceSpherePattern, rng) -> SpaceSpherePattern:
    """Locations fixed, spherical components uniformly permuted."""
    return x.with_marks(x.u[rng.permutation(x.n)])


# ---------------------------------------------------------------- model specs


@dataclass(frozen=True)
class PoissonModel:
    """Picklable homogeneous Poisson null model."""

    rho: float
    window: BoxWindow
    k: int

    def simulate(self, rng) -> SpaceSpherePattern:
        return sim_poisson(self.rho, self.window, self.k, rng)

    def to_dict(self):
        return {"model": "poisson", "rho": self.rho, "window": self.window.to_dict(), "k": self.k}


@dataclass(frozen=True)
class LgcpModel:
    rho: float
    cov: LgcpCovariance
    window: BoxWindow
    k: int
    spatial_cells: tuple | None = None
    sphere_cells: int | None = None

    def simulate(self, rng) -> SpaceSpherePattern:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CoarseGridWarning)
            return sim_lgcp(self.rho, self.cov, self.window, self.k, rng,
                            spatial_cells=self.spatial_cells, sphere_cells=self.sphere_cells)

    def to_dict(self):
        return {"model": "lgcp", "rho": self.rho, "cov": self.cov.to_dict(), "window": self.window.to_dict(),
                "k": self.k, "spatial_cells": self.spatial_cells, "sphere_cells": self.sphere_cells}


@dataclass(frozen=True)
class SncpModel:
    params: SncpParams
    window: BoxWindow
    buffer: float = 5.0

    def simulate(self, rng) -> SpaceSpherePattern:
        return sim_sncp(self.params, self.window, rng, buffer=self.buffer)

    def to_dict(self):
        return {"model": "sncp", "params": self.params.to_dict(), "window": self.window.to_dict(),
                "buffer": self.buffer}

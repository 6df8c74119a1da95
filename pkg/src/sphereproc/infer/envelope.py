"""Global rank envelope tests, Monte Carlo envelope tests and permutation tests."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .._parallel import parallel_map
from ..curves import KCurve, KSurface
from ..estimate import EdgeCorrection, intensity_hom, k_statistics
from ..model import k1_pois, k2_pois
from ..pattern import SpaceSpherePattern
from ..sim import RngSeed, permute_marks

log = logging.getLogger(__name__)

__all__ = [
    "CurveSet",
    "EnvelopeResult",
    "extreme_ranks",
    "global_rank_envelope",
    "concat_statistics",
    "StatisticSpec",
    "HomogeneousIntensity",
    "SeparableIntensity",
    "ConstantIntensity",
    "envelope_test",
    "permutation_test",
    "SimulationError",
    "STATISTICS",
    "poisson_centering",
    "grid_coordinates",
]

STATISTICS = ("K", "D", "K1K2", "K1", "K2")
_ALIASES = {"K1+K2": "K1K2", "K1,K2": "K1K2", "K1_K2": "K1K2", "K1⊕K2": "K1K2"}


class SimulationError(RuntimeError):
    pass


def _normalize_stat(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in STATISTICS:
        raise ValueError(f"unknown statistic {name!r}; choose from {', '.join(STATISTICS)}")
    return name


@dataclass(frozen=True, eq=False)
class CurveSet:
    """Observed curve plus simulated curves on one grid (rows of ``simulated``)."""

    observed: np.ndarray
    simulated: np.ndarray
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=float).ravel()
        sims = np.asarray(self.simulated, dtype=float)
        if sims.ndim == 1:
            sims = sims.reshape(1, -1) if sims.size == obs.size else sims.reshape(-1, obs.size)
        if sims.shape[0] < 1:
            raise ValueError("a curve set needs at least one simulated curve")
        if sims.shape[1] != obs.size:
            raise ValueError(f"simulated curves have length {sims.shape[1]}, observed has {obs.size}")
        if np.isnan(obs).any() or np.isnan(sims).any():
            raise ValueError("curve set contains NaN")
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "simulated", sims)

    @property
    def n_sims(self) -> int:
        return self.simulated.shape[0]

    @property
    def curves(self) -> np.ndarray:
        """All curves, observed first."""
        return np.vstack([self.observed[None, :], self.simulated])


def extreme_ranks(c: CurveSet, chunk: int = 4096) -> np.ndarray:
    """Extreme rank of every curve (observed first); smaller is more extreme.

    Pointwise ranks from below (1 + #smaller) and from above (1 + #larger)
    give tied values the same minimal rank.
    """
    t = c.curves
    n, m = t.shape
    out = np.full(n, n + 1, dtype=np.int64)
    for a in range(0, m, chunk):
        block = t[:, a:a + chunk]
        srt = np.sort(block, axis=0)
        below = np.empty(block.shape, dtype=np.int64)
        above = np.empty(block.shape, dtype=np.int64)
        for j in range(block.shape[1]):
            below[:, j] = np.searchsorted(srt[:, j], block[:, j], side="left") + 1
            above[:, j] = n - np.searchsorted(srt[:, j], block[:, j], side="right") + 1
        out = np.minimum(out, np.minimum(below, above).min(axis=1))
    return out


@dataclass(eq=False)
class EnvelopeResult:
    """p-interval and global envelope at level ``alpha``.

    The envelope is the pointwise range of all curves whose extreme rank is
    at least ``rank_cutoff``; the observed curve leaves it exactly when
    ``p_plus <= alpha``.
    """

    p_minus: float
    p_plus: float
    lower: np.ndarray
    upper: np.ndarray
    obs_extreme_rank: int
    rank_cutoff: int
    alpha: float
    n_sims: int
    observed: np.ndarray
    central: np.ndarray
    grid: dict = field(default_factory=dict)
    statistic: str = ""
    ranks: np.ndarray | None = field(default=None, repr=False)
    """Extreme ranks of all curves, observed first (not serialized)."""

    @property
    def reject_liberal(self) -> bool:
        return self.p_minus <= self.alpha

    @property
    def reject_conservative(self) -> bool:
        return self.p_plus <= self.alpha

    @property
    def outside(self) -> np.ndarray:
        return (self.observed < self.lower) | (self.observed > self.upper)

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic, "alpha": self.alpha, "n_sims": self.n_sims,
            "p_minus": self.p_minus, "p_plus": self.p_plus,
            "obs_extreme_rank": self.obs_extreme_rank, "rank_cutoff": self.rank_cutoff,
            "reject_liberal": self.reject_liberal, "reject_conservative": self.reject_conservative,
            "grid": self.grid, "observed": self.observed.tolist(), "lower": self.lower.tolist(),
            "upper": self.upper.tolist(), "central": self.central.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvelopeResult":
        return cls(d["p_minus"], d["p_plus"], np.array(d["lower"]), np.array(d["upper"]),
                   d["obs_extreme_rank"], d["rank_cutoff"], d["alpha"], d["n_sims"],
                   np.array(d["observed"]), np.array(d["central"]), d.get("grid", {}), d.get("statistic", ""))

    def to_csv(self, path) -> None:
        coords = grid_coordinates(self.grid, self.observed.size)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "segment", "r", "s", "observed", "lower", "upper", "central"])
            for i in range(self.observed.size):
                seg, r, s = coords[i]
                w.writerow([i, seg, "" if r is None else repr(r), "" if s is None else repr(s),
                            repr(float(self.observed[i])), repr(float(self.lower[i])),
                            repr(float(self.upper[i])), repr(float(self.central[i]))])


def grid_coordinates(grid: dict, m: int):
    """(segment, r, s) per flattened index of a grid descriptor."""
    out = [("", None, None)] * m
    for seg in grid.get("segments", []):
        a, b = seg["start"], seg["stop"]
        if seg["kind"] == "r":
            for i, v in enumerate(seg["grid"]):
                out[a + i] = (seg["name"], float(v), None)
        elif seg["kind"] == "s":
            for i, v in enumerate(seg["grid"]):
                out[a + i] = (seg["name"], None, float(v))
        else:
            rs, ss = seg["r_grid"], seg["s_grid"]
            for i in range(b - a):
                out[a + i] = (seg["name"], float(rs[i // len(ss)]), float(ss[i % len(ss)]))
    return out


def global_rank_envelope(c: CurveSet, alpha: float = 0.05, statistic: str = "") -> EnvelopeResult:
    """Global rank envelope test with the liberal/conservative p-interval."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    s = c.n_sims
    if s < 1:
        raise ValueError("need at least one simulated curve")
    n = s + 1
    if alpha * n < 1.0:
        warnings.warn(f"alpha*(s+1) = {alpha * n:g} < 1: the test can never reject", stacklevel=2)
    ranks = extreme_ranks(c)
    r0, rs = int(ranks[0]), ranks[1:]
    p_minus = (1.0 + np.sum(rs < r0)) / n
    p_plus = (1.0 + np.sum(rs <= r0)) / n
    # largest cutoff whose count of strictly more extreme curves stays within alpha (s + 1)
    srt = np.sort(ranks)
    cutoff = 1
    for cand in range(1, int(srt[-1]) + 2):
        if np.searchsorted(srt, cand, side="left") <= alpha * n:
            cutoff = cand
        else:
            break
    keep = ranks >= cutoff
    curves = c.curves
    lower = curves[keep].min(axis=0)
    upper = curves[keep].max(axis=0)
    central = np.median(c.simulated, axis=0)
    return EnvelopeResult(float(p_minus), float(p_plus), lower, upper, r0, int(cutoff), float(alpha), s,
                          c.observed.copy(), central, dict(c.grid), statistic, ranks)


def concat_statistics(curves):
    """Join curves into one test vector; returns (values, grid descriptor)."""
    curves = list(curves)
    if not curves:
        raise ValueError("need at least one curve")
    vals, segs, start = [], [], 0
    for i, cv in enumerate(curves):
        if isinstance(cv, KSurface):
            v = cv.values.ravel()
            seg = {"kind": "rs", "r_grid": cv.r_grid.tolist(), "s_grid": cv.s_grid.tolist()}
        elif isinstance(cv, KCurve):
            v = cv.values
            seg = {"kind": "s" if cv.name == "K2" else "r", "grid": cv.grid.tolist()}
        else:
            v = np.asarray(cv, dtype=float).ravel()
            seg = {"kind": "r", "grid": list(range(v.size))}
        seg.update({"name": getattr(cv, "name", f"seg{i}"), "start": start, "stop": start + v.size})
        vals.append(v)
        segs.append(seg)
        start += v.size
    return np.concatenate(vals), {"segments": segs}


# ---------------------------------------------------------------- statistics and intensity models


@dataclass(frozen=True)
class HomogeneousIntensity:
    """Plug-in intensities n/|W|, n/sigma_k, n/(|W| sigma_k) of each pattern."""

    def intensities(self, x: SpaceSpherePattern):
        if x.n == 0:
            return 1.0, 1.0, 1.0
        r1, r2, r = intensity_hom(x)
        return r, r1, r2

    def to_dict(self):
        return {"type": "homogeneous"}


@dataclass(frozen=True)
class SeparableIntensity:
    """rho(y, u) = (n/|W|) f(u) with a fixed spherical density f; rho2 = n f."""

    density: object

    def intensities(self, x: SpaceSpherePattern):
        n = max(x.n, 1)
        r1 = n / x.window.volume
        f = self.density
        return (lambda y, u: r1 * f.pdf(u)), r1, (lambda u: n * f.pdf(u))

    def to_dict(self):
        return {"type": "separable", "density": self.density.to_dict()}


@dataclass(frozen=True)
class ConstantIntensity:
    """Known constant intensities; any left as None falls back to the homogeneous estimate."""

    rho: float | None = None
    rho1: float | None = None
    rho2: float | None = None

    def intensities(self, x: SpaceSpherePattern):
        return self.rho, self.rho1, self.rho2

    def to_dict(self):
        return {"type": "constant", "rho": self.rho, "rho1": self.rho1, "rho2": self.rho2}


class _FixedIntensity:
    def __init__(self, triple):
        self.triple = triple

    def intensities(self, x):
        return self.triple


@dataclass(frozen=True)
class StatisticSpec:
    """Which summaries to compute and on which grids."""

    names: tuple
    r_grid: tuple
    s_grid: tuple
    correction: str = "translation"
    method: str = "auto"

    @classmethod
    def make(cls, names, r_grid, s_grid, correction="translation", method="auto"):
        if isinstance(names, str):
            names = [names]
        names = tuple(_normalize_stat(n) for n in names)
        EdgeCorrection(correction)
        return cls(names, tuple(map(float, r_grid)), tuple(map(float, s_grid)), correction, method)

    def evaluate(self, x: SpaceSpherePattern, intensity, fixed_k1k2=None) -> dict:
        """Flattened test vectors per statistic name.

        ``fixed_k1k2`` supplies K1-hat and K2-hat (used when they are known
        to be invariant, as under mark permutation).
        """
        rho, rho1, rho2 = intensity.intensities(x)
        st = k_statistics(x, np.array(self.r_grid), np.array(self.s_grid), rho=rho, rho1=rho1, rho2=rho2,
                          correction=self.correction, method=self.method)
        if fixed_k1k2 is not None:
            k1, k2 = fixed_k1k2
            st["K1"], st["K2"] = k1, k2
            st["D"] = KSurface(st["K"].r_grid, st["K"].s_grid, st["K"].values - np.outer(k1.values, k2.values),
                               name="D", monotone=False)
        out = {}
        for name in self.names:
            if name == "K1K2":
                out[name] = concat_statistics([st["K1"], st["K2"]])
            else:
                out[name] = concat_statistics([st[name]])
        return out


def _task(args):
    null_model, seed, i, spec, intensity = args
    rng = RngSeed(seed, i + 1).generator()
    try:
        x = null_model.simulate(rng)
        vals = spec.evaluate(x, intensity)
    except Exception as exc:  # noqa: BLE001 - re-raised with the replicate index
        raise SimulationError(f"simulation replicate {i}: {type(exc).__name__}: {exc}") from exc
    return {k: v[0] for k, v in vals.items()}


def _perm_task(args):
    x, seed, i, spec, intensity, k1k2 = args
    rng = RngSeed(seed, i + 1).generator()
    vals = spec.evaluate(permute_marks(x, rng), intensity, fixed_k1k2=k1k2)
    return {k: v[0] for k, v in vals.items()}


def _seed_from(rng, seed):
    if seed is not None:
        return int(seed)
    rng = np.random.default_rng() if rng is None else rng
    return int(rng.integers(0, 2**63 - 1))


def _assemble(obs_vals, sims, spec, alpha):
    results = {}
    for name in spec.names:
        values, grid = obs_vals[name]
        c = CurveSet(values, np.vstack([s[name] for s in sims]), grid)
        results[name] = global_rank_envelope(c, alpha, statistic=name)
    return results


def envelope_test(observed: SpaceSpherePattern, null_model, statistic, n_sims: int, r_grid, s_grid,
                  reestimate: bool = True, alpha: float = 0.05, seed: int | None = None, rng=None,
                  intensity=None, correction: str = "translation", threads: int | None = None,
                  method: str = "auto"):
    """Monte Carlo global rank envelope test against ``null_model``.

    ``null_model`` is any picklable object with ``simulate(rng)``. With
    ``reestimate`` the plug-in intensities are recomputed for every
    simulated pattern; otherwise those of the observed pattern are reused.
    A single statistic name returns one :class:`EnvelopeResult`; a list
    returns a dict keyed by name, all sharing the same simulations.
    """
    if n_sims < 1:
        raise ValueError("n_sims must be at least 1")
    single = isinstance(statistic, str)
    spec = StatisticSpec.make(statistic, r_grid, s_grid, correction, method)
    intensity = HomogeneousIntensity() if intensity is None else intensity
    obs_vals = spec.evaluate(observed, intensity)
    sim_intensity = intensity if reestimate else _FixedIntensity(intensity.intensities(observed))
    seed = _seed_from(rng, seed)
    tasks = [(null_model, seed, i, spec, sim_intensity) for i in range(n_sims)]
    sims = parallel_map(_task, tasks, threads, chunksize=max(1, n_sims // 64))
    res = _assemble(obs_vals, sims, spec, alpha)
    return res[spec.names[0]] if single else res


def permutation_test(x: SpaceSpherePattern, statistic, n_perms: int, r_grid, s_grid, alpha: float = 0.05,
                     seed: int | None = None, rng=None, intensity=None, correction: str = "translation",
                     threads: int | None = None, method: str = "auto"):
    """Envelope test of location/orientation exchangeability by permuting the spherical components.

    K1-hat and K2-hat are invariant under the permutation, so they are taken
    from the observed pattern; D-hat then differs from K-hat by one fixed
    surface for every curve and both give the same extreme ranks.
    """
    if x.n < 2:
        raise ValueError("permutation test needs at least 2 points")
    if n_perms < 1:
        raise ValueError("n_perms must be at least 1")
    single = isinstance(statistic, str)
    spec = StatisticSpec.make(statistic, r_grid, s_grid, correction, method)
    intensity = HomogeneousIntensity() if intensity is None else intensity
    rho, rho1, rho2 = intensity.intensities(x)
    base = k_statistics(x, np.array(r_grid, float), np.array(s_grid, float), rho=rho, rho1=rho1, rho2=rho2,
                        correction=correction, method=method)
    k1k2 = (base["K1"], base["K2"])
    obs_vals = spec.evaluate(x, intensity, fixed_k1k2=k1k2)
    seed = _seed_from(rng, seed)
    tasks = [(x, seed, i, spec, intensity, k1k2) for i in range(n_perms)]
    sims = parallel_map(_perm_task, tasks, threads, chunksize=max(1, n_perms // 64))
    res = _assemble(obs_vals, sims, spec, alpha)
    return res[spec.names[0]] if single else res


def poisson_centering(grid: dict, d: int, k: int):
    """Theoretical Poisson values matching a flattened grid descriptor (for plotting)."""
    parts = []
    for seg in grid.get("segments", []):
        if seg["kind"] == "r":
            parts.append(np.asarray(k1_pois(d, np.array(seg["grid"]))))
        elif seg["kind"] == "s":
            parts.append(np.asarray(k2_pois(k, np.array(seg["grid"]))))
        elif seg.get("name") == "D":
            parts.append(np.zeros(seg["stop"] - seg["start"]))
        else:
            r, s = np.array(seg["r_grid"]), np.array(seg["s_grid"])
            parts.append(np.outer(k1_pois(d, r), k2_pois(k, s)).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


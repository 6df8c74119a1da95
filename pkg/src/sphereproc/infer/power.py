"""Power of envelope tests of second order separability for LGCPs.

For each non-separability level ``delta`` the harness simulates LGCPs,
fits the separable model (delta = 0) by composite likelihood, and tests
the fit with global rank envelope tests that share one set of
simulations across all requested statistics.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .._parallel import parallel_map, resolve_threads
from ..geom import sphere_surface_measure
from ..model import LgcpCovariance
from ..pattern import BoxWindow
from ..sim import MAX_SPHERE_NODES, LgcpModel, SphereCells, make_rng
from .composite import fit_cl
from .envelope import _normalize_stat, envelope_test

log = logging.getLogger(__name__)

__all__ = ["PowerTable", "PowerCost", "estimate_cost", "power_study", "power_null_model", "REFERENCE_COV"]

REFERENCE_COV = LgcpCovariance(0.5, 0.05, 0.5, 0.132, 0.0)

# seconds per candidate pair, per simulated point and per composite-likelihood
# fit, measured on a single core; only used for the budget report printed before a run
_SEC_PER_PAIR = 1.2e-8
_SEC_PER_POINT = 5e-6
_SEC_PER_FIT = 6.0


@dataclass(frozen=True)
class PowerCost:
    n_patterns: int
    mean_points: float
    pairs_per_pattern: float
    seconds: float
    threads: int

    def to_dict(self):
        return {"n_patterns": self.n_patterns, "mean_points": self.mean_points,
                "pairs_per_pattern": self.pairs_per_pattern, "seconds": self.seconds, "threads": self.threads}

    def __str__(self):
        return (f"{self.n_patterns} patterns of about {self.mean_points:.0f} points, "
                f"about {self.pairs_per_pattern:.3g} candidate pairs each; "
                f"estimated {self.seconds / 60:.1f} min on {self.threads} worker(s)")


def estimate_cost(deltas, n_reps, n_sims, rho, cov, window: BoxWindow, k, r_max, s_max, threads=None) -> PowerCost:
    """Rough wall-clock budget from the expected number of close pairs.

    The pair count uses the homogeneous approximation
    n^2 / 2 * (spatial ball fraction + spherical cap fraction), the two
    passes the estimators make, inflated by the clustering factor of the
    separable part of the covariance.
    """
    n = rho * window.volume * sphere_surface_measure(k)
    ball = min(1.0, 2.0 * r_max / float(window.sides.min())) ** window.d
    cap = (1.0 - math.cos(s_max)) / 2.0 if k == 2 else s_max / math.pi
    clus = math.exp(cov.sigma1**2 + cov.sigma2**2)
    pairs = 0.5 * n * n * (ball + cap) * clus
    n_patterns = len(deltas) * n_reps * (n_sims + 1)
    workers = resolve_threads(threads)
    sec = (n_patterns * (pairs * _SEC_PER_PAIR + n * _SEC_PER_POINT)
           + len(deltas) * n_reps * _SEC_PER_FIT) / workers
    return PowerCost(n_patterns, n, pairs, sec, workers)


def power_null_model(fit_theta: LgcpCovariance, n_points: int, window: BoxWindow, k: int) -> LgcpModel:
    """Fitted separable LGCP used as the null model of one replicate.

    The intensity is the homogeneous estimate. When the fitted sphere range
    would need more cells than the dense Cholesky limit, the largest
    admissible partition is used instead.
    """
    rho_hat = n_points / (window.volume * sphere_surface_measure(k))
    theta = LgcpCovariance(fit_theta.sigma1, fit_theta.phi1, fit_theta.sigma2, fit_theta.phi2, 0.0)
    cells = None
    if theta.sigma2 > 0:
        need = SphereCells.for_extent(theta.phi2 / 4.0, k).n
        if need > MAX_SPHERE_NODES:
            cells = MAX_SPHERE_NODES
    return LgcpModel(rho_hat, theta, window, k, sphere_cells=cells)


@dataclass
class PowerTable:
    deltas: list
    statistics: list
    liberal: dict
    conservative: dict
    n_ok: list
    n_failed: list
    n_reps: int
    n_sims: int
    alpha: float
    replicates: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def power(self, statistic: str, kind: str = "liberal") -> np.ndarray:
        table = self.liberal if kind == "liberal" else self.conservative
        return np.array(table[statistic], dtype=float)

    def to_dict(self):
        return {"deltas": self.deltas, "statistics": self.statistics, "liberal": self.liberal,
                "conservative": self.conservative, "n_ok": self.n_ok, "n_failed": self.n_failed,
                "n_reps": self.n_reps, "n_sims": self.n_sims, "alpha": self.alpha,
                "replicates": self.replicates, "config": self.config}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["statistic", "kind", *[f"delta={d:g}" for d in self.deltas]])
            for name in self.statistics:
                w.writerow([name, "liberal", *[f"{v:.6g}" for v in self.power(name, "liberal")]])
                w.writerow([name, "conservative", *[f"{v:.6g}" for v in self.power(name, "conservative")]])
            w.writerow(["replicates", "ok", *self.n_ok])
            w.writerow(["replicates", "failed", *self.n_failed])

    def format(self) -> str:
        head = f"{'statistic':<10}{'kind':<14}" + "".join(f"{'d=' + format(d, 'g'):>9}" for d in self.deltas)
        lines = [head]
        for name in self.statistics:
            for kind in ("liberal", "conservative"):
                lines.append(f"{name:<10}{kind:<14}" + "".join(f"{100 * v:>8.0f}%" for v in self.power(name, kind)))
        return "\n".join(lines)


def _replicate(args):
    (di, rep, delta, seed, rho, cov, window, k, stats, n_sims, r_grid, s_grid, cl_r, cl_s, alpha, method) = args
    t0 = time.perf_counter()
    truth = LgcpModel(rho, LgcpCovariance(cov.sigma1, cov.phi1, cov.sigma2, cov.phi2, delta), window, k)
    out = {"delta_index": di, "replicate": rep, "delta": delta}
    try:
        x = truth.simulate(make_rng(seed, 0, di, rep))
        fit = fit_cl(x, cl_r, cl_s, rng=make_rng(seed, 1, di, rep))
        null = power_null_model(fit.theta, x.n, window, k)
        env_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(2, di, rep)).generate_state(1, np.uint64)[0])
        res = envelope_test(x, null, list(stats), n_sims, r_grid, s_grid, alpha=alpha, seed=env_seed >> 1,
                            threads=1, method=method)
    except Exception as exc:  # noqa: BLE001 - recorded and excluded from the rates
        out["error"] = f"{type(exc).__name__}: {exc}"
        return out
    out["n"] = int(x.n)
    out["theta_hat"] = fit.theta.to_dict()
    out["boundary_hit"] = fit.boundary_hit
    for name in stats:
        out[name] = {"p_minus": res[name].p_minus, "p_plus": res[name].p_plus,
                     "liberal": bool(res[name].reject_liberal), "conservative": bool(res[name].reject_conservative)}
    out["seconds"] = time.perf_counter() - t0
    return out


def power_study(deltas=(0.0, 0.5, 1.0, 1.5, 2.0), n_reps: int = 100, n_sims: int = 199,
                statistics=("K", "D", "K1K2"), seed: int = 0, rho: float = 1000.0,
                cov: LgcpCovariance = REFERENCE_COV, window: BoxWindow | None = None, k: int = 2,
                r_grid=None, s_grid=None, cl_r: float = 0.2, cl_s: float = 0.3, alpha: float = 0.05,
                threads: int | None = None, method: str = "auto", max_seconds: float | None = None,
                progress=None) -> PowerTable:
    """Rejection rates of separability tests as the LGCP departs from delta = 0.

    ``r_grid`` and ``s_grid`` default to 4 nodes each up to 0.025 and 0.15,
    half the reference correlation ranges, where the non-separable term of
    the pair correlation is largest. The composite likelihood uses the
    close-pair distances (cl_r, cl_s).
    The cost estimate is logged (and passed to ``progress``) before any
    simulation starts; a run whose estimate exceeds ``max_seconds`` is
    refused. Replicates that fail are logged, excluded from the rates, and
    counted per delta.
    """
    window = BoxWindow([0.0], [1.0]) if window is None else window
    if n_reps < 1 or n_sims < 1:
        raise ValueError("n_reps and n_sims must be positive")
    deltas = [float(d) for d in deltas]
    if any(d < 0 for d in deltas):
        raise ValueError("deltas must be nonnegative")
    stats = [_normalize_stat(s) for s in ([statistics] if isinstance(statistics, str) else statistics)]
    r_grid = np.linspace(0.00625, 0.025, 4) if r_grid is None else np.asarray(r_grid, float)
    s_grid = np.linspace(0.0375, 0.15, 4) if s_grid is None else np.asarray(s_grid, float)
    cost = estimate_cost(deltas, n_reps, n_sims, rho, cov, window, k, float(r_grid[-1]), float(s_grid[-1]),
                         threads)
    log.info("power study budget: %s", cost)
    if progress is not None:
        progress(f"power study budget: {cost}")
    if max_seconds is not None and cost.seconds > max_seconds:
        raise ValueError(f"estimated run time {cost.seconds:.0f} s exceeds the budget of {max_seconds:.0f} s")
    tasks = [(di, rep, d, int(seed), float(rho), cov, window, int(k), tuple(stats), int(n_sims),
              r_grid, s_grid, float(cl_r), float(cl_s), float(alpha), method)
             for di, d in enumerate(deltas) for rep in range(n_reps)]
    reps = parallel_map(_replicate, tasks, threads)
    liberal = {s: [] for s in stats}
    conservative = {s: [] for s in stats}
    n_ok, n_failed = [], []
    for di in range(len(deltas)):
        rows = [r for r in reps if r["delta_index"] == di]
        ok = [r for r in rows if "error" not in r]
        for r in rows:
            if "error" in r:
                log.warning("delta=%g replicate %d failed: %s", deltas[di], r["replicate"], r["error"])
        n_ok.append(len(ok))
        n_failed.append(len(rows) - len(ok))
        for s in stats:
            liberal[s].append(float(np.mean([r[s]["liberal"] for r in ok])) if ok else float("nan"))
            conservative[s].append(float(np.mean([r[s]["conservative"] for r in ok])) if ok else float("nan"))
    config = {"deltas": deltas, "n_reps": n_reps, "n_sims": n_sims, "statistics": stats, "seed": int(seed),
              "rho": rho, "cov": cov.to_dict(), "window": window.to_dict(), "k": k,
              "r_grid": r_grid.tolist(), "s_grid": s_grid.tolist(), "cl_r": cl_r, "cl_s": cl_s, "alpha": alpha,
              "cost": cost.to_dict()}
    return PowerTable(deltas, stats, liberal, conservative, n_ok, n_failed, n_reps, n_sims, alpha, reps, config)

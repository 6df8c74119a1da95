"""Command-line front end.

Every subcommand reads one JSON config (``--config``), writes its results
into ``--out-dir`` and records a manifest (command, resolved config, seed,
package version, SHA-256 of inputs and outputs). A manifest can be passed
back as ``--config`` to replay the run.

Exit codes: 0 success, 1 usage or config error, 2 numeric failure,
3 statistical procedure error (non-convergence, inadequate model).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config, validate_config
from .curves import dump_json, read_curve_csv
from .densities import VonMisesFisherKernel
from .estimate import ConvergenceError, ModelInadequacyError, default_r_grid, default_s_grid, fit_mixture, k_statistics
from .geom import sphere_surface_measure
from .infer.composite import fit_cl
from .infer.envelope import ConstantIntensity, EnvelopeResult, HomogeneousIntensity, envelope_test, permutation_test
from .infer.power import REFERENCE_COV, power_study
from .model import GaussianKernel, LgcpCovariance, SncpParams
from .pattern import BoxWindow, PatternFormatError, read_pattern, write_pattern
from .plot import PlotKindError, plot_envelope_curves, plot_surface, plot_surface_difference
from .sim import LgcpModel, PoissonModel, SncpModel, make_rng

log = logging.getLogger("sphereproc")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_STATISTICAL = 0, 1, 2, 3
MANIFEST = "manifest.json"
COMMANDS = ("simulate", "estimate", "envelope", "fit-cl", "fit-mixture", "power-study", "plot")

CURVE_GRID_N = 512
SURFACE_GRID_N = 128
N_SIMS_CURVE = 2499
N_SIMS_SURFACE = 4999
POWER_PRESETS = {
    "desk": {"deltas": [0.0, 2.0], "n_reps": 20, "n_sims": 199},
    "reference": {"deltas": [0.0, 0.5, 1.0, 1.5, 2.0], "n_reps": 100, "n_sims": 4999},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- shared helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Resolved inputs of one command plus bookkeeping for its manifest."""

    def __init__(self, command, cfg, seed, out_dir, threads, base_dir):
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.out_dir = Path(out_dir)
        self.threads = threads
        self.base_dir = Path(base_dir)
        self.inputs = {}
        self.outputs = []

    def input_path(self, key="input") -> Path:
        p = Path(self.cfg[key])
        if not p.is_absolute():
            p = (self.base_dir / p).resolve()
        if not p.exists():
            raise ConfigError(f"config error at /{key}: file {p} not found")
        self.cfg[key] = str(p)
        self.inputs[str(p)] = _sha256(p)
        side = p.with_suffix(".json")
        if p.suffix == ".csv" and side.exists():
            self.inputs[str(side)] = _sha256(side)
        return p

    def out(self, name) -> Path:
        self.outputs.append(name)
        return self.out_dir / name

    def write_json(self, name, obj):
        dump_json(obj, self.out(name))

    def manifest(self) -> dict:
        outs = {}
        for name in self.outputs:
            p = self.out_dir / name
            if p.exists():
                outs[name] = _sha256(p)
        return {"tool": "sphereproc", "version": __version__, "command": self.command, "seed": self.seed,
                "config": self.cfg, "inputs": self.inputs, "outputs": outs}


def _window(d) -> BoxWindow:
    return BoxWindow(d["lower"], d["upper"])


def build_model(spec: dict):
    """Simulation model from its config record."""
    w = _window(spec["window"])
    k = int(spec["k"])
    kind = spec["type"]
    if kind == "poisson":
        return PoissonModel(float(spec["rho"]), w, k)
    if kind == "lgcp":
        c = spec["cov"]
        cov = LgcpCovariance(c["sigma1"], c["phi1"], c["sigma2"], c["phi2"], c.get("delta", 0.0))
        cells = tuple(spec["spatial_cells"]) if "spatial_cells" in spec else None
        return LgcpModel(float(spec["rho"]), cov, w, k, spatial_cells=cells, sphere_cells=spec.get("sphere_cells"))
    params = SncpParams(spec["alpha_parent"], spec["m1"], spec["m2"], GaussianKernel(spec["omega"], w.d),
                        VonMisesFisherKernel(spec["kappa"], k))
    return SncpModel(params, w, spec.get("buffer", 5.0))


def _grid(spec, default):
    if spec is None:
        return default
    if isinstance(spec, list):
        g = np.asarray(spec, dtype=float)
    else:
        g = np.linspace(float(spec.get("min", 0.0)), float(spec["max"]), int(spec["n"]))
    if g.size > 1 and not np.all(np.diff(g) > 0):
        raise ConfigError("config error: grids must be strictly increasing")
    return g


def _grids(cfg, window, n_r, n_s):
    r = _grid(cfg.get("r_grid"), default_r_grid(window, n_r))
    s = _grid(cfg.get("s_grid"), default_s_grid(n_s))
    if s.size and s[-1] > math.pi:
        raise ConfigError("config error at /s_grid: values must not exceed pi")
    return r, s


def _intensity(spec):
    if spec is None or spec == "homogeneous":
        return HomogeneousIntensity()
    return ConstantIntensity(spec.get("rho"), spec.get("rho1"), spec.get("rho2"))


def _stat_list(spec):
    return [spec] if isinstance(spec, str) else list(spec)


# ---------------------------------------------------------------- commands


def cmd_simulate(run: Run):
    cfg = run.cfg
    model = build_model(cfg["model"])
    n_rep = int(cfg.get("n_replicates", 1))
    prefix = cfg.get("prefix", "pattern")
    counts = []
    for i in range(n_rep):
        x = model.simulate(make_rng(run.seed, 0, i))
        name = f"{prefix}_{i:04d}.csv"
        write_pattern(x, run.out(name))
        run.outputs.append(f"{prefix}_{i:04d}.json")
        counts.append(x.n)
    mean = float(np.mean(counts))
    expected = _expected_count(model)
    log.info("simulated %d replicate(s); mean point count %.2f (expected %.2f)", n_rep, mean, expected)
    run.write_json("summary.json", {"n_replicates": n_rep, "counts": counts, "mean_count": mean,
                                    "expected_count": expected})
    return f"{n_rep} pattern(s) written; mean count {mean:.2f}"


def _expected_count(model) -> float:
    mu = model.window.volume * sphere_surface_measure(model.k if hasattr(model, "k") else model.params.k)
    if isinstance(model, SncpModel):
        return model.params.intensity * mu
    return model.rho * mu


def cmd_estimate(run: Run):
    cfg = run.cfg
    x = read_pattern(run.input_path())
    corr = cfg.get("correction", "translation")
    method = cfg.get("method", "auto")
    intens = _intensity(cfg.get("intensity"))
    rho, rho1, rho2 = intens.intensities(x)
    kw = dict(rho=rho, rho1=rho1, rho2=rho2, correction=corr, method=method)
    if "r_grid" in cfg or "s_grid" in cfg:
        r, s = _grids(cfg, x.window, CURVE_GRID_N, CURVE_GRID_N)
        curves = surf = k_statistics(x, r, s, **kw)
    else:
        r, s = _grids(cfg, x.window, CURVE_GRID_N, CURVE_GRID_N)
        curves = k_statistics(x, r, s, **kw)
        rs, ss = _grids(cfg, x.window, SURFACE_GRID_N, SURFACE_GRID_N)
        surf = k_statistics(x, rs, ss, **kw)
    curves["K1"].to_csv(run.out("k1.csv"), axis="r")
    curves["K2"].to_csv(run.out("k2.csv"), axis="s")
    surf["K"].to_csv(run.out("k.csv"))
    surf["D"].to_csv(run.out("d.csv"))
    run.write_json("estimates.json", {"n": x.n, "K1": curves["K1"].to_dict(), "K2": curves["K2"].to_dict(),
                                      "K": surf["K"].to_dict(), "D": surf["D"].to_dict(),
                                      "intensity": intens.to_dict() if hasattr(intens, "to_dict") else None})
    return f"estimated K1, K2, K and D for {x.n} points"


def cmd_envelope(run: Run):
    cfg = run.cfg
    x = read_pattern(run.input_path())
    stats = _stat_list(cfg["statistic"])
    two_d = any(s in ("K", "D") for s in stats)
    n_sims = int(cfg.get("n_sims", N_SIMS_SURFACE if two_d else N_SIMS_CURVE))
    n_grid = SURFACE_GRID_N if two_d else CURVE_GRID_N
    r, s = _grids(cfg, x.window, n_grid, n_grid)
    alpha = float(cfg.get("alpha", 0.05))
    common = dict(alpha=alpha, seed=run.seed, intensity=_intensity(cfg.get("intensity")),
                  correction=cfg.get("correction", "translation"), threads=run.threads,
                  method=cfg.get("method", "auto"))
    test = cfg.get("test", "model")
    if test == "permutation":
        res = permutation_test(x, stats, n_sims, r, s, **common)
    else:
        if "null_model" not in cfg:
            raise ConfigError("config error at /null_model: required for test = model")
        null = build_model(cfg["null_model"])
        res = envelope_test(x, null, stats, n_sims, r, s, reestimate=cfg.get("reestimate", True), **common)
    lines = []
    for name, env in res.items():
        d = env.to_dict()
        d["pattern"] = {"d": x.d, "k": x.k, "n": x.n}
        run.write_json(f"envelope_{name}.json", d)
        env.to_csv(run.out(f"envelope_{name}.csv"))
        lines.append(f"{name}: p-interval [{env.p_minus:.4g}, {env.p_plus:.4g}]")
    return "; ".join(lines)


def cmd_fit_cl(run: Run):
    cfg = run.cfg
    x = read_pattern(run.input_path())
    r = float(cfg.get("r", 0.1 * float(x.window.sides.min())))
    s = float(cfg.get("s", 0.5))
    bounds = {key: tuple(v) for key, v in cfg.get("bounds", {}).items()}
    fit = fit_cl(x, r, s, init=cfg.get("init"), bounds=bounds or None, rng=make_rng(run.seed, 1),
                 n_restarts=int(cfg.get("n_restarts", 3)))
    out = fit.to_dict()
    out["r"], out["s"] = r, s
    run.write_json("theta_hat.json", out)
    t = fit.theta
    return f"theta-hat = ({t.sigma1:.4g}, {t.phi1:.4g}, {t.sigma2:.4g}, {t.phi2:.4g})"


def cmd_fit_mixture(run: Run):
    cfg = run.cfg
    x = read_pattern(run.input_path())
    frame = np.asarray(cfg.get("frame", np.eye(3)[[2, 0, 1]].tolist()), dtype=float)
    axis = np.asarray(cfg.get("watson_axis", [0.0, 1.0, 0.0]), dtype=float)
    fit = fit_mixture(x.u, frame, axis, rng=make_rng(run.seed, 1), kappa_max=float(cfg.get("kappa_max", 500.0)),
                      n_restarts=int(cfg.get("n_restarts", 5)), joint=bool(cfg.get("joint", False)))
    run.write_json("density.json", fit.to_dict())
    return f"p-hat = {fit.p_hat:.4f}, kappa = {fit.kappa:.4g}, beta = {fit.beta:.4g}, kappa_w = {fit.kappa_w:.4g}"


def cmd_power_study(run: Run):
    cfg = dict(POWER_PRESETS.get(run.cfg.get("preset", ""), {}))
    cfg.update({k: v for k, v in run.cfg.items() if k != "preset"})
    c = cfg.get("cov")
    cov = REFERENCE_COV if c is None else LgcpCovariance(c["sigma1"], c["phi1"], c["sigma2"], c["phi2"], 0.0)
    window = _window(cfg["window"]) if "window" in cfg else BoxWindow([0.0], [1.0])
    kw = {}
    for key in ("deltas", "n_reps", "n_sims", "rho", "k", "cl_r", "cl_s", "alpha", "max_seconds", "method"):
        if key in cfg:
            kw[key] = cfg[key]
    if "statistics" in cfg:
        kw["statistics"] = _stat_list(cfg["statistics"])
    if "r_grid" in cfg:
        kw["r_grid"] = _grid(cfg["r_grid"], None)
    if "s_grid" in cfg:
        kw["s_grid"] = _grid(cfg["s_grid"], None)
    table = power_study(seed=run.seed, cov=cov, window=window, threads=run.threads,
                        progress=lambda msg: log.info("%s", msg), **kw)
    run.write_json("power.json", table.to_dict())
    table.to_csv(run.out("power.csv"))
    return table.format()


def cmd_plot(run: Run):
    cfg = run.cfg
    path = run.input_path()
    kind = cfg["kind"]
    out_name = cfg.get("output", f"{path.stem}_{kind}.svg")
    if path.suffix == ".csv":
        if kind != "heatmap":
            raise PlotKindError("a surface CSV can only be drawn as a heatmap")
        surf = read_curve_csv(path)
        if not hasattr(surf, "s_grid"):
            raise PlotKindError(f"{path} holds a curve, not a surface")
        plot_surface(surf.r_grid, surf.s_grid, surf.values, run.out(out_name), title=cfg.get("title", ""))
        return f"wrote {out_name}"
    data = json.loads(path.read_text())
    try:
        env = EnvelopeResult.from_dict(data)
    except KeyError as exc:
        raise PlotKindError(f"{path} is not an envelope result (missing {exc})") from None
    if kind == "curve":
        pat = data.get("pattern", {})
        d, k = int(cfg.get("d", pat.get("d", 1))), int(cfg.get("k", pat.get("k", 2)))
        n_out = plot_envelope_curves(env, run.out(out_name), d, k, centre=bool(cfg.get("centre", True)))
    else:
        n_out = plot_surface_difference(env, run.out(out_name))
    return f"wrote {out_name} ({n_out} grid node(s) outside the envelope)"


HANDLERS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "envelope": cmd_envelope,
    "fit-cl": cmd_fit_cl,
    "fit-mixture": cmd_fit_mixture,
    "power-study": cmd_power_study,
    "plot": cmd_plot,
}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sphereproc", description="Point processes on R^d x S^k.")
    parser.add_argument("--version", action="version", version=f"sphereproc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "simulate": "simulate replicate patterns from a model",
        "estimate": "estimate K1, K2, K and D on a pattern",
        "envelope": "global rank envelope test (model-based or permutation)",
        "fit-cl": "fit the separable LGCP by composite likelihood",
        "fit-mixture": "fit the Kent-Watson mixture with fixed directions",
        "power-study": "power of separability tests over non-separability levels",
        "plot": "draw an envelope result or surface as SVG",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="JSON config file or a manifest to replay")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", default=".", help="directory for outputs (created if missing)")
        p.add_argument("--threads", type=int, default=None, help="worker processes (capped by SPHEREPROC_THREADS)")
    return parser


def _resolve(args):
    raw = load_config(args.config)
    base = Path(args.config).resolve().parent
    if raw.get("tool") == "sphereproc" and "config" in raw and "command" in raw:
        if raw["command"] != args.command:
            raise ConfigError(f"manifest records command {raw['command']!r}, not {args.command!r}")
        raw = dict(raw["config"])
    cfg = validate_config(args.command, dict(raw))
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**63))
    if seed < 0:
        raise ConfigError("--seed must be nonnegative")
    cfg["seed"] = int(seed)
    threads = args.threads if args.threads is not None else cfg.get("threads")
    cfg.pop("threads", None)
    return cfg, int(seed), threads, base


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"sphereproc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, seed, threads, base = _resolve(args)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, seed, out_dir, threads, base)
        summary = HANDLERS[args.command](run)
        dump_json(run.manifest(), out_dir / MANIFEST)
    except (ConfigError, PatternFormatError, PlotKindError, FileNotFoundError) as exc:
        print(f"sphereproc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, ModelInadequacyError) as exc:
        print(f"sphereproc: statistical procedure error: {exc}", file=sys.stderr)
        return EXIT_STATISTICAL
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"sphereproc: numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(summary)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""SVG figures: centred summary curves with envelope bands and difference heatmaps.

Output is byte-stable for identical inputs: the Agg backend is used, the
SVG id salt is fixed and no creation date is embedded.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .infer.envelope import EnvelopeResult, poisson_centering  # noqa: E402

__all__ = ["PlotKindError", "plot_envelope_curves", "plot_surface_difference", "plot_surface"]

_RC = {"svg.hashsalt": "sphereproc", "svg.fonttype": "path", "font.size": 9}
_META = {"Date": None, "Creator": None}


class PlotKindError(ValueError):
    pass


def _save(fig, path):
    with plt.rc_context(_RC):
        fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def _segments(env: EnvelopeResult, kinds):
    segs = env.grid.get("segments", [])
    if not segs:
        raise PlotKindError("envelope result carries no grid descriptor")
    bad = [s["name"] for s in segs if s["kind"] not in kinds]
    if bad:
        raise PlotKindError(f"segments {bad} cannot be drawn as {'/'.join(sorted(kinds))}")
    return segs


def plot_envelope_curves(env: EnvelopeResult, path, d: int, k: int, centre: bool = True) -> int:
    """One panel per 1-D segment: observed curve over the grey envelope band.

    Curves are centred by the Poisson values computed for (d, k), so the
    spatial panel shows K1-hat(r) minus the ball volume and the spherical
    panel K2-hat(s) minus the cap measure. Grid nodes where the observed
    curve leaves the band are marked. Returns the number of marked nodes.
    """
    segs = _segments(env, {"r", "s"})
    offset = poisson_centering(env.grid, d, k) if centre else np.zeros(env.observed.size)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(segs), figsize=(4.2 * len(segs), 3.4), squeeze=False)
        n_out = 0
        for ax, seg in zip(axes[0], segs):
            sl = slice(seg["start"], seg["stop"])
            x = np.asarray(seg["grid"], dtype=float)
            lo, hi = env.lower[sl] - offset[sl], env.upper[sl] - offset[sl]
            obs, mid = env.observed[sl] - offset[sl], env.central[sl] - offset[sl]
            ax.fill_between(x, lo, hi, color="0.8", linewidth=0, label="envelope")
            ax.plot(x, mid, color="0.4", linestyle="--", linewidth=0.8, label="simulated median")
            ax.plot(x, obs, color="black", linewidth=1.2, label="observed")
            out = (obs < lo) | (obs > hi)
            n_out += int(out.sum())
            if out.any():
                ax.plot(x[out], obs[out], linestyle="none", marker="o", markersize=3, color="tab:red",
                        label="outside envelope")
            var = "r" if seg["kind"] == "r" else "s"
            ax.set_xlabel(var)
            ax.set_ylabel(f"{seg['name']}({var})" + (" centred" if centre else ""))
            ax.legend(loc="best", fontsize=7, frameon=False)
        fig.suptitle(f"{env.statistic or 'statistic'}: p-interval [{env.p_minus:.4g}, {env.p_plus:.4g}]")
        fig.tight_layout()
    _save(fig, path)
    return n_out


def _heat(ax, r, s, values, title):
    vmax = float(np.max(np.abs(values))) or 1.0
    mesh = ax.pcolormesh(s, r, values, cmap="RdBu", vmin=-vmax, vmax=vmax, shading="nearest")
    neg = values < 0
    if neg.any():
        rr, ss = np.meshgrid(r, s, indexing="ij")
        ax.plot(ss[neg], rr[neg], linestyle="none", marker="x", markersize=4, color="black")
    ax.set_xlabel("s")
    ax.set_ylabel("r")
    ax.set_title(title)
    return mesh


def plot_surface_difference(env: EnvelopeResult, path) -> int:
    """Heatmaps of observed minus lower and upper minus observed for the surface segment.

    Negative cells (where the observed surface leaves the envelope) are
    drawn red and crossed. Returns the number of such cells.
    """
    segs = _segments(env, {"rs"})
    seg = segs[0]
    r, s = np.asarray(seg["r_grid"]), np.asarray(seg["s_grid"])
    sl = slice(seg["start"], seg["stop"])
    shape = (r.size, s.size)
    below = (env.observed[sl] - env.lower[sl]).reshape(shape)
    above = (env.upper[sl] - env.observed[sl]).reshape(shape)
    name = seg["name"]
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(8.4, 3.6))
        m1 = _heat(axes[0], r, s, below, f"{name} - {name}_low")
        m2 = _heat(axes[1], r, s, above, f"{name}_upp - {name}")
        fig.colorbar(m1, ax=axes[0])
        fig.colorbar(m2, ax=axes[1])
        fig.tight_layout()
    _save(fig, path)
    return int((below < 0).sum() + (above < 0).sum())


def plot_surface(r, s, values, path, title: str = "") -> None:
    """Plain heatmap of a surface on its (r, s) grid."""
    values = np.asarray(values, dtype=float)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.6, 3.6))
        mesh = _heat(ax, np.asarray(r, float), np.asarray(s, float), values, title)
        fig.colorbar(mesh, ax=ax)
        fig.tight_layout()
    _save(fig, path)

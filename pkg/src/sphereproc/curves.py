"""Containers for K-function values on 1-D and 2-D grids."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["KCurve", "KSurface", "GridMismatchError"]


class GridMismatchError(ValueError):
    pass


def _check_grid(g, name):
    g = np.asarray(g, dtype=float).ravel()
    if g.size == 0:
        raise ValueError(f"{name} grid is empty")
    if g.size > 1 and not np.all(np.diff(g) > 0):
        raise ValueError(f"{name} grid must be strictly increasing")
    return g


@dataclass(frozen=True, eq=False)
class KCurve:
    """Cumulative summary curve on an increasing grid.

    ``monotone=True`` asserts the K-function invariants (nonnegative,
    nondecreasing); derived curves such as those entering D-hat skip it.
    """

    grid: np.ndarray
    values: np.ndarray
    name: str = "K"
    monotone: bool = field(default=True, repr=False)

    def __post_init__(self):
        g = _check_grid(self.grid, "curve")
        v = np.asarray(self.values, dtype=float).ravel()
        if v.shape != g.shape:
            raise GridMismatchError(f"{v.size} values for a grid of {g.size} nodes")
        if np.isnan(v).any():
            raise ValueError("curve contains NaN")
        if self.monotone:
            scale = max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
            if v.min() < -1e-12 * scale or np.any(np.diff(v) < -1e-12 * scale):
                raise ValueError("K curve must be nonnegative and nondecreasing")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.grid.size

    def to_csv(self, path, axis="r"):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([axis, "value"])
            for a, v in zip(self.grid, self.values):
                w.writerow([repr(float(a)), repr(float(v))])

    def to_dict(self):
        return {"name": self.name, "grid": self.grid.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["grid"]), np.array(d["values"]), d.get("name", "K"), monotone=False)


@dataclass(frozen=True, eq=False)
class KSurface:
    r_grid: np.ndarray
    s_grid: np.ndarray
    values: np.ndarray
    name: str = "K"
    monotone: bool = field(default=True, repr=False)

    def __post_init__(self):
        r = _check_grid(self.r_grid, "r")
        s = _check_grid(self.s_grid, "s")
        v = np.asarray(self.values, dtype=float)
        if v.shape != (r.size, s.size):
            raise GridMismatchError(f"surface shape {v.shape} does not match grids ({r.size}, {s.size})")
        if np.isnan(v).any():
            raise ValueError("surface contains NaN")
        if self.monotone:
            scale = max(1.0, float(np.max(np.abs(v))))
            tol = -1e-12 * scale
            if v.min() < tol or np.any(np.diff(v, axis=0) < tol) or np.any(np.diff(v, axis=1) < tol):
                raise ValueError("K surface must be nonnegative and nondecreasing on both axes")
        object.__setattr__(self, "r_grid", r)
        object.__setattr__(self, "s_grid", s)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self, path):
        """Long format: one ``r,s,value`` row per grid node."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "s", "value"])
            for i, r in enumerate(self.r_grid):
                for j, s in enumerate(self.s_grid):
                    w.writerow([repr(float(r)), repr(float(s)), repr(float(self.values[i, j]))])

    def to_dict(self):
        return {
            "name": self.name,
            "r_grid": self.r_grid.tolist(),
            "s_grid": self.s_grid.tolist(),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["r_grid"]), np.array(d["s_grid"]), np.array(d["values"]),
                   d.get("name", "K"), monotone=False)


def read_curve_csv(path):
    """Read a curve or surface written by ``to_csv``."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [list(map(float, r)) for r in rows[1:] if r]
    arr = np.array(body).reshape(-1, len(header))
    if header == ["r", "s", "value"]:
        r = np.unique(arr[:, 0])
        s = np.unique(arr[:, 1])
        return KSurface(r, s, arr[:, 2].reshape(r.size, s.size), monotone=False)
    return KCurve(arr[:, 0], arr[:, 1], monotone=False)


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")

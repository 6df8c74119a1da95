"""Space-sphere point patterns, box windows, projections and pair counting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _pairs
from .geom import SpatialPoint, SpherePoint

__all__ = [
    "BoxWindow",
    "SpaceSpherePattern",
    "SpatialPattern",
    "SpherePattern",
    "PatternFormatError",
    "project_spatial",
    "project_spherical",
    "close_pair_count",
    "read_pattern",
    "write_pattern",
    "sidecar_path",
]

_NORM_TOL = 1e-12


class PatternFormatError(ValueError):
    """Raised for malformed pattern files or invariant violations in them."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BoxWindow:
    """Axis-aligned box W = [lower_1, upper_1] x ... x [lower_d, upper_d]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size < 1:
            raise ValueError("window bounds must be 1-D arrays of equal length d >= 1")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("window bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError(f"window needs lower < upper on every axis, got {lo} and {hi}")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    @classmethod
    def unit(cls, d: int = 1) -> "BoxWindow":
        return cls(np.zeros(d), np.ones(d))

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def sides(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.sides))

    def contains(self, y) -> np.ndarray:
        """Closed-box membership for an (n, d) array (or a single point)."""
        y = np.asarray(y, dtype=float)
        return np.all((y >= self.lower) & (y <= self.upper), axis=-1)

    def __eq__(self, other):
        if not isinstance(other, BoxWindow):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((tuple(self.lower), tuple(self.upper)))

    def to_dict(self, k: int | None = None) -> dict:
        out = {"d": self.d, "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        if k is not None:
            out["k"] = int(k)
        return out


def _normalize_rows(u, strict: bool):
    norms = np.linalg.norm(u, axis=1)
    bad = np.nonzero(~np.isfinite(norms) | (norms == 0.0))[0]
    if bad.size:
        raise ValueError(f"spherical component of point {int(bad[0])} has zero or non-finite norm")
    off = np.abs(norms - 1.0) > _NORM_TOL
    if strict and off.any():
        i = int(np.nonzero(off)[0][0])
        raise ValueError(f"spherical component of point {i} has norm {norms[i]!r} (strict mode)")
    return u / norms[:, None] if off.any() else u


@dataclass(frozen=True, eq=False)
class SpaceSpherePattern:
    """Finite simple point pattern x on W x S^k.

    ``y`` is (n, d) and ``u`` is (n, k+1). Arrays are copied and frozen.
    Spherical rows are rescaled to unit norm unless ``strict`` is set, in
    which case rows off the sphere by more than 1e-12 are rejected.
    """

    y: np.ndarray
    u: np.ndarray
    window: BoxWindow
    k: int
    strict: bool = field(default=False, repr=False)

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"sphere dimension k must be >= 1, got {self.k!r}")
        d = self.window.d
        y = np.asarray(self.y, dtype=float).reshape(-1, d) if np.size(self.y) else np.zeros((0, d))
        u = np.asarray(self.u, dtype=float)
        u = u.reshape(-1, self.k + 1) if u.size else np.zeros((0, self.k + 1))
        if y.shape[0] != u.shape[0]:
            raise ValueError(f"{y.shape[0]} spatial rows but {u.shape[0]} spherical rows")
        if u.shape[0]:
            u = _normalize_rows(u, self.strict)
        if y.shape[0]:
            outside = np.nonzero(~self.window.contains(y))[0]
            if outside.size:
                raise ValueError(f"point {int(outside[0])} lies outside the window")
            both = np.hstack([y, u])
            if np.unique(both, axis=0).shape[0] != both.shape[0]:
                raise ValueError("pattern contains duplicated (y, u) points")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "k", int(self.k))

    @classmethod
    def from_points(cls, points, window: BoxWindow, k: int | None = None, strict: bool = False):
        """Build from a sequence of (SpatialPoint, SpherePoint) pairs."""
        pts = list(points)
        if k is None:
            if not pts:
                raise ValueError("k must be given for an empty point list")
            k = SpherePoint(pts[0][1].coords if isinstance(pts[0][1], SpherePoint) else pts[0][1]).k
        ys = [np.asarray(SpatialPoint(p[0].coords if isinstance(p[0], SpatialPoint) else p[0])) for p in pts]
        us = [np.asarray(p[1], dtype=float) for p in pts]
        for i, uu in enumerate(us):
            if uu.size != k + 1:
                raise ValueError(f"point {i} has sphere dimension {uu.size - 1}, expected {k}")
        return cls(np.array(ys).reshape(-1, window.d), np.array(us).reshape(-1, k + 1), window, k, strict)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.window.d

    def __len__(self):
        return self.n

    def points(self):
        return [(SpatialPoint(tuple(a)), SpherePoint(tuple(b))) for a, b in zip(self.y, self.u)]

    def delete(self, i: int) -> "SpaceSpherePattern":
        keep = np.ones(self.n, dtype=bool)
        keep[i] = False
        return self.subset(keep)

    def subset(self, mask) -> "SpaceSpherePattern":
        return SpaceSpherePattern(self.y[mask], self.u[mask], self.window, self.k)

    def with_marks(self, u) -> "SpaceSpherePattern":
        return SpaceSpherePattern(self.y, u, self.window, self.k)


@dataclass(frozen=True, eq=False)
class SpatialPattern:
    y: np.ndarray
    window: BoxWindow

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def __len__(self):
        return self.n


@dataclass(frozen=True, eq=False)
class SpherePattern:
    u: np.ndarray
    k: int

    @property
    def n(self) -> int:
        return self.u.shape[0]

    def __len__(self):
        return self.n


def project_spatial(x: SpaceSpherePattern) -> SpatialPattern:
    return SpatialPattern(x.y, x.window)


def project_spherical(x: SpaceSpherePattern) -> SpherePattern:
    return SpherePattern(x.u, x.k)


def close_pair_count(x: SpaceSpherePattern, r: float, s: float, method: str = "auto") -> int:
    """Number of ordered pairs of distinct points that are (r, s)-close.

    ``method`` is ``"naive"`` (plain double loop), ``"sweep"`` (sorted
    sweep), ``"cells"`` (cell list) or ``"auto"``; all give the same count.
    """
    if r < 0:
        raise ValueError("r must be nonnegative")
    if not 0.0 <= s <= math.pi:
        raise ValueError(f"s must lie in [0, pi], got {s}")
    return 2 * _pairs.pair_count(x.y, x.u, float(r), math.cos(s), strict=False, method=method)


# ---------------------------------------------------------------- file I/O


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_pattern(x: SpaceSpherePattern, path) -> None:
    """Write ``x`` as CSV plus a JSON sidecar carrying d, k and the window."""
    path = Path(path)
    header = [f"y{i + 1}" for i in range(x.d)] + [f"u{i + 1}" for i in range(x.k + 1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for yy, uu in zip(x.y, x.u):
            w.writerow([repr(float(v)) for v in yy] + [repr(float(v)) for v in uu])
    with open(sidecar_path(path), "w") as fh:
        json.dump(x.window.to_dict(k=x.k), fh, indent=2)
        fh.write("\n")


def _read_sidecar(path: Path):
    meta_path = sidecar_path(path)
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise PatternFormatError(f"missing window descriptor {meta_path}") from None
    except json.JSONDecodeError as exc:
        raise PatternFormatError(f"{meta_path}: invalid JSON ({exc})") from None
    for key in ("d", "k", "lower", "upper"):
        if key not in meta:
            raise PatternFormatError(f"{meta_path}: missing key {key!r}")
    d, k = int(meta["d"]), int(meta["k"])
    window = BoxWindow(meta["lower"], meta["upper"])
    if window.d != d:
        raise PatternFormatError(f"{meta_path}: d={d} but bounds have length {window.d}")
    return window, k


def read_pattern(path, strict: bool = False) -> SpaceSpherePattern:
    """Read a pattern written by :func:`write_pattern`.

    Errors name the offending line (1-based, header is line 1).
    """
    path = Path(path)
    window, k = _read_sidecar(path)
    d = window.d
    expected = [f"y{i + 1}" for i in range(d)] + [f"u{i + 1}" for i in range(k + 1)]
    ys, us = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PatternFormatError(f"{path}: empty file, expected header {','.join(expected)}") from None
        if [h.strip() for h in header] != expected:
            raise PatternFormatError(f"{path}: line 1: header {header} does not match {expected}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + k + 1:
                raise PatternFormatError(f"{path}: line {line}: expected {d + k + 1} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise PatternFormatError(f"{path}: line {line}: non-numeric field") from None
            uvec = np.array(vals[d:])
            nrm = float(np.linalg.norm(uvec))
            if strict and abs(nrm - 1.0) > _NORM_TOL:
                raise PatternFormatError(f"{path}: line {line}: spherical norm {nrm!r} is not 1 (strict mode)")
            if not window.contains(np.array(vals[:d])):
                raise PatternFormatError(f"{path}: line {line}: spatial point outside window")
            ys.append(vals[:d])
            us.append(vals[d:])
    try:
        return SpaceSpherePattern(np.array(ys).reshape(-1, d), np.array(us).reshape(-1, k + 1), window, k, strict)
    except ValueError as exc:
        raise PatternFormatError(f"{path}: {exc}") from None

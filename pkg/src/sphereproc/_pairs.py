"""Pair enumeration kernels shared by the estimators and the composite likelihood.

All backends produce the same pair set:

* ``"naive"``: a numpy double loop over rows (O(n^2), reference path);
* ``"sweep"``: numba kernels that sort along one axis and stop scanning
  once the sort-axis gap exceeds the search radius;
* ``"cells"``: numba kernels that bucket points on a regular grid over the
  embedding (y, u) with cells at least as wide as the search reach, so only
  neighbouring cells are scanned.

The geodesic predicate d(u_i, u_j) <= s is evaluated everywhere as
``clip(<u_i, u_j>, -1, 1) >= cos(s)`` so every backend classifies every pair
identically. Histogram bins follow the cumulative convention: a pair with
spatial lag t lands in the first grid index m with r_m >= t.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

CORR_NONE, CORR_TRANSLATION, CORR_TEMPORAL = 0, 1, 2
_SHORT_GRID = 16


def _jit(fn):
    if _HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def _jit_inline(fn):
    # small helpers are inlined so array arguments do not pay call overhead
    if _HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True, inline="always")(fn)
    return fn


@_jit_inline
def _first_geq(grid, x):
    # first index m with grid[m] >= x (grid increasing); len(grid) if none
    if grid.shape[0] <= _SHORT_GRID:
        # branch-free count for short grids: mispredicted bisection dominates there
        c = 0
        for m in range(grid.shape[0]):
            c += grid[m] < x
        return c
    lo, hi = 0, grid.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if grid[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@_jit_inline
def _first_leq(grid, x):
    # first index l with grid[l] <= x (grid decreasing); len(grid) if none
    if grid.shape[0] <= _SHORT_GRID:
        c = 0
        for m in range(grid.shape[0]):
            c += grid[m] > x
        return c
    lo, hi = 0, grid.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if grid[mid] > x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@_jit
def _sweep_space_sphere(y, u, w_rho, w_rho1, r_grid, cos_grid, corr, lower, upper, vol):
    n, d = y.shape
    kp1 = u.shape[1]
    nr, ns = r_grid.shape[0], cos_grid.shape[0]
    h_rs = np.zeros((nr, ns))
    h_r = np.zeros(nr)
    rmax = r_grid[nr - 1]
    cmin = cos_grid[ns - 1]
    sides = upper - lower
    inv_vol = 1.0 / vol
    skipped = 0
    for i in range(n):
        for j in range(i + 1, n):
            if y[j, 0] - y[i, 0] > rmax:
                break
            acc = 0.0
            for a in range(d):
                diff = y[i, a] - y[j, a]
                acc += diff * diff
            t = np.sqrt(acc)
            if t > rmax:
                continue
            # reciprocal edge weights for both orders; 0 marks an invalid pair
            if corr == 1:
                wt = 1.0
                for a in range(d):
                    side = sides[a] - abs(y[i, a] - y[j, a])
                    if side <= 0.0:
                        wt = 0.0
                        break
                    wt *= side
                if wt == 0.0:
                    skipped += 1
                    continue
                esum = 2.0 / wt
            elif corr == 2:
                esum = 0.0
                for p in range(2):
                    c = y[i, 0] if p == 0 else y[j, 0]
                    esum += inv_vol if (c - t >= lower[0] and c + t <= upper[0]) else 2.0 * inv_vol
            else:
                esum = 2.0 * inv_vol
            m = _first_geq(r_grid, t)
            h_r[m] += w_rho1[i] * w_rho1[j] * esum
            dot = 0.0
            for a in range(kp1):
                dot += u[i, a] * u[j, a]
            if dot > 1.0:
                dot = 1.0
            elif dot < -1.0:
                dot = -1.0
            if dot < cmin:
                continue
            l = _first_leq(cos_grid, dot)
            h_rs[m, l] += w_rho[i] * w_rho[j] * esum
    return h_rs, h_r, skipped


@_jit
def _sweep_sphere(u, z, w, cos_grid, chord_max):
    # u sorted by z (last coordinate); chord_max < 0 disables the early exit
    n, kp1 = u.shape
    ns = cos_grid.shape[0]
    h = np.zeros(ns)
    cmin = cos_grid[ns - 1]
    for i in range(n):
        for j in range(i + 1, n):
            if chord_max >= 0.0 and z[j] - z[i] > chord_max:
                break
            dot = 0.0
            for a in range(kp1):
                dot += u[i, a] * u[j, a]
            if dot > 1.0:
                dot = 1.0
            elif dot < -1.0:
                dot = -1.0
            if dot < cmin:
                continue
            l = _first_leq(cos_grid, dot)
            h[l] += 2.0 * w[i] * w[j]
    return h


@_jit
def _sweep_count(y, u, r, cos_s, strict):
    n, d = y.shape
    kp1 = u.shape[1]
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            if y[j, 0] - y[i, 0] > r:
                break
            acc = 0.0
            for a in range(d):
                diff = y[i, a] - y[j, a]
                acc += diff * diff
            t = np.sqrt(acc)
            dot = 0.0
            for a in range(kp1):
                dot += u[i, a] * u[j, a]
            if dot > 1.0:
                dot = 1.0
            elif dot < -1.0:
                dot = -1.0
            if strict:
                if t < r and dot > cos_s:
                    count += 1
            elif t <= r and dot >= cos_s:
                count += 1
    return count


@_jit
def _sweep_lags(y, u, r, cos_s, strict, out_t, out_dot, fill):
    n, d = y.shape
    kp1 = u.shape[1]
    c = 0
    for i in range(n):
        for j in range(i + 1, n):
            if y[j, 0] - y[i, 0] > r:
                break
            acc = 0.0
            for a in range(d):
                diff = y[i, a] - y[j, a]
                acc += diff * diff
            t = np.sqrt(acc)
            dot = 0.0
            for a in range(kp1):
                dot += u[i, a] * u[j, a]
            if dot > 1.0:
                dot = 1.0
            elif dot < -1.0:
                dot = -1.0
            if strict:
                ok = t < r and dot > cos_s
            else:
                ok = t <= r and dot >= cos_s
            if ok:
                if fill:
                    out_t[c] = t
                    out_dot[c] = dot
                c += 1
    return c


@_jit
def _line_space(y0, w_rho1, r_grid, corr, side, inv_vol):
    # K1-hat pass on a line (y0 sorted ascending, no temporal correction).
    # For each i, the neighbours falling in bin m form the contiguous block
    # between two pointers that only move forward as i grows, so the inner
    # loops are plain weighted sums.
    n = y0.shape[0]
    nr = r_grid.shape[0]
    h_r = np.zeros(nr)
    bnd = np.zeros(nr, dtype=np.int64)
    skipped = 0
    for i in range(n):
        lo = i + 1
        yi = y0[i]
        for m in range(nr):
            b = max(bnd[m], lo)
            rm = r_grid[m]
            while b < n and y0[b] - yi <= rm:
                b += 1
            bnd[m] = b
            acc = 0.0
            if corr == 1:
                for j in range(lo, b):
                    wt = side - (y0[j] - yi)
                    if wt <= 0.0:
                        skipped += 1
                        continue
                    acc += w_rho1[j] / wt
            else:
                for j in range(lo, b):
                    acc += w_rho1[j]
                acc *= inv_vol
            h_r[m] += 2.0 * w_rho1[i] * acc
            lo = b
    return h_r, skipped


@_jit
def _sweep_space(y, w_rho1, r_grid, corr, lower, upper, vol):
    # spatial-only pass for K1-hat; y sorted by its first coordinate
    n, d = y.shape
    nr = r_grid.shape[0]
    h_r = np.zeros(nr)
    rmax = r_grid[nr - 1]
    sides = upper - lower
    inv_vol = 1.0 / vol
    skipped = 0
    for i in range(n):
        for j in range(i + 1, n):
            if y[j, 0] - y[i, 0] > rmax:
                break
            acc = 0.0
            for a in range(d):
                diff = y[i, a] - y[j, a]
                acc += diff * diff
            t = np.sqrt(acc)
            if t > rmax:
                continue
            if corr == 1:
                wt = 1.0
                for a in range(d):
                    side = sides[a] - abs(y[i, a] - y[j, a])
                    if side <= 0.0:
                        wt = 0.0
                        break
                    wt *= side
                if wt == 0.0:
                    skipped += 1
                    continue
                esum = 2.0 / wt
            elif corr == 2:
                esum = 0.0
                for p in range(2):
                    c = y[i, 0] if p == 0 else y[j, 0]
                    esum += inv_vol if (c - t >= lower[0] and c + t <= upper[0]) else 2.0 * inv_vol
            else:
                esum = 2.0 * inv_vol
            h_r[_first_geq(r_grid, t)] += w_rho1[i] * w_rho1[j] * esum
    return h_r, skipped


@_jit
def _cell_space_sphere(y, u, w_rho, r_grid, cos_grid, corr, lower, upper, vol, cc, dims, stride, starts):
    # points sorted by linear cell key; each unordered pair is visited once from its lower index
    n, d = y.shape
    kp1 = u.shape[1]
    nd = dims.shape[0]
    nr, ns = r_grid.shape[0], cos_grid.shape[0]
    h_rs = np.zeros((nr, ns))
    rmax = r_grid[nr - 1]
    cmin = cos_grid[ns - 1]
    sides = upper - lower
    inv_vol = 1.0 / vol
    noff = 3**nd
    for i in range(n):
        for o in range(noff):
            code = o
            lin = 0
            ok = True
            for a in range(nd):
                c = cc[i, a] + (code % 3) - 1
                code //= 3
                if c < 0 or c >= dims[a]:
                    ok = False
                    break
                lin += c * stride[a]
            if not ok:
                continue
            j0 = starts[lin]
            if j0 <= i:
                j0 = i + 1
            for j in range(j0, starts[lin + 1]):
                acc = 0.0
                for a in range(d):
                    diff = y[i, a] - y[j, a]
                    acc += diff * diff
                t = np.sqrt(acc)
                if t > rmax:
                    continue
                dot = 0.0
                for a in range(kp1):
                    dot += u[i, a] * u[j, a]
                if dot > 1.0:
                    dot = 1.0
                elif dot < -1.0:
                    dot = -1.0
                if dot < cmin:
                    continue
                if corr == 1:
                    wt = 1.0
                    for a in range(d):
                        side = sides[a] - abs(y[i, a] - y[j, a])
                        if side <= 0.0:
                            wt = 0.0
                            break
                        wt *= side
                    if wt == 0.0:
                        continue
                    esum = 2.0 / wt
                elif corr == 2:
                    esum = 0.0
                    for p in range(2):
                        cy = y[i, 0] if p == 0 else y[j, 0]
                        esum += inv_vol if (cy - t >= lower[0] and cy + t <= upper[0]) else 2.0 * inv_vol
                else:
                    esum = 2.0 * inv_vol
                h_rs[_first_geq(r_grid, t), _first_leq(cos_grid, dot)] += w_rho[i] * w_rho[j] * esum
    return h_rs


@_jit
def _cell_sphere(u, w, cos_grid, cc, dims, stride, starts):
    n, kp1 = u.shape
    nd = dims.shape[0]
    ns = cos_grid.shape[0]
    h = np.zeros(ns)
    cmin = cos_grid[ns - 1]
    noff = 3**nd
    for i in range(n):
        for o in range(noff):
            code = o
            lin = 0
            ok = True
            for a in range(nd):
                c = cc[i, a] + (code % 3) - 1
                code //= 3
                if c < 0 or c >= dims[a]:
                    ok = False
                    break
                lin += c * stride[a]
            if not ok:
                continue
            j0 = starts[lin]
            if j0 <= i:
                j0 = i + 1
            for j in range(j0, starts[lin + 1]):
                dot = 0.0
                for a in range(kp1):
                    dot += u[i, a] * u[j, a]
                if dot > 1.0:
                    dot = 1.0
                elif dot < -1.0:
                    dot = -1.0
                if dot < cmin:
                    continue
                h[_first_leq(cos_grid, dot)] += 2.0 * w[i] * w[j]
    return h


# ---------------------------------------------------------------- naive path


def _spatial_lag_rows(y, i):
    acc = np.zeros(y.shape[0] - i - 1)
    for a in range(y.shape[1]):
        diff = y[i, a] - y[i + 1 :, a]
        acc += diff * diff
    return np.sqrt(acc)


def _dot_rows(u, i):
    acc = np.zeros(u.shape[0] - i - 1)
    for a in range(u.shape[1]):
        acc += u[i, a] * u[i + 1 :, a]
    return np.clip(acc, -1.0, 1.0)


def _edge_weight_rows(yi, yj, t, corr, lower, upper, vol):
    # reciprocal w1(y_i, y_j) for one y_i against rows yj
    if corr == CORR_NONE:
        return np.full(t.shape, 1.0 / vol)
    if corr == CORR_TRANSLATION:
        sides = (upper - lower) - np.abs(yi - yj)
        ok = np.all(sides > 0.0, axis=1)
        w = np.ones(t.shape)
        for a in range(yj.shape[1]):
            w *= sides[:, a]
        out = np.zeros(t.shape)
        out[ok] = 1.0 / w[ok]
        return out
    inside = (yi[0] - t >= lower[0]) & (yi[0] + t <= upper[0])
    return np.where(inside, 1.0 / vol, 2.0 / vol)


def _edge_weight_cols(yi, yj, t, corr, lower, upper, vol):
    # reciprocal w1(y_j, y_i) for rows yj against one y_i
    if corr == CORR_TEMPORAL:
        inside = (yj[:, 0] - t >= lower[0]) & (yj[:, 0] + t <= upper[0])
        return np.where(inside, 1.0 / vol, 2.0 / vol)
    return _edge_weight_rows(yi, yj, t, corr, lower, upper, vol)


def _dot_subset(u, i, js):
    acc = np.zeros(js.size)
    for a in range(u.shape[1]):
        acc += u[i, a] * u[js, a]
    return np.clip(acc, -1.0, 1.0)


def _naive_space_sphere(y, u, w_rho, w_rho1, r_grid, cos_grid, corr, lower, upper, vol):
    nr, ns = r_grid.size, cos_grid.size
    h_rs = np.zeros((nr, ns))
    h_r = np.zeros(nr)
    rmax, cmin = r_grid[-1], cos_grid[-1]
    skipped = 0
    for i in range(y.shape[0] - 1):
        t = _spatial_lag_rows(y, i)
        keep = t <= rmax
        if not keep.any():
            continue
        js = np.nonzero(keep)[0] + i + 1
        t = t[keep]
        eij = _edge_weight_rows(y[i], y[js], t, corr, lower, upper, vol)
        eji = _edge_weight_cols(y[i], y[js], t, corr, lower, upper, vol)
        valid = (eij > 0) & (eji > 0)
        skipped += int((~valid).sum())
        js, t, eij, eji = js[valid], t[valid], eij[valid], eji[valid]
        m = np.searchsorted(r_grid, t, side="left")
        np.add.at(h_r, m, w_rho1[i] * w_rho1[js] * (eij + eji))
        dot = _dot_subset(u, i, js)
        ok = dot >= cmin
        if not ok.any():
            continue
        l = np.searchsorted(-cos_grid, -dot[ok], side="left")
        np.add.at(h_rs, (m[ok], l), w_rho[i] * w_rho[js[ok]] * (eij[ok] + eji[ok]))
    return h_rs, h_r, skipped


def _naive_sphere(u, w, cos_grid):
    h = np.zeros(cos_grid.size)
    cmin = cos_grid[-1]
    for i in range(u.shape[0] - 1):
        dot = _dot_rows(u, i)
        ok = dot >= cmin
        if not ok.any():
            continue
        l = np.searchsorted(-cos_grid, -dot[ok], side="left")
        np.add.at(h, l, 2.0 * w[i] * w[i + 1 :][ok])
    return h


def _naive_lags(y, u, r, cos_s, strict):
    ts, dots = [], []
    for i in range(y.shape[0] - 1):
        t = _spatial_lag_rows(y, i)
        dot = _dot_rows(u, i)
        ok = (t < r) & (dot > cos_s) if strict else (t <= r) & (dot >= cos_s)
        ts.append(t[ok])
        dots.append(dot[ok])
    if not ts:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(ts), np.concatenate(dots)


# ---------------------------------------------------------------- public API


def _resolve(method):
    if method == "auto":
        return "cells" if _HAVE_NUMBA else "naive"
    if method not in ("cells", "sweep", "naive"):
        raise ValueError(f"unknown pair enumeration method {method!r}")
    return method


_MAX_CELLS_PER_AXIS = 256
_MAX_CELLS = 1 << 22


def _chord(cos_min):
    # chord length bound for geodesic lags up to arccos(cos_min), with a safety margin
    s_max = np.arccos(np.clip(cos_min, -1.0, 1.0))
    if s_max >= np.pi - 1e-9:
        return 2.0
    return 2.0 * np.sin(0.5 * s_max) * (1.0 + 1e-9) + 1e-12


def _cell_index(coords, lo, span, reach):
    """Bucket rows of ``coords`` into cells at least ``reach`` wide per axis.

    Returns the sort order, the per-point cell coordinates (sorted), cells
    per axis, strides and the start offsets of every cell.
    """
    dims = np.ones(coords.shape[1], dtype=np.int64)
    for a in range(coords.shape[1]):
        if reach[a] > 0:
            dims[a] = int(min(max(np.floor(span[a] / reach[a]), 1), _MAX_CELLS_PER_AXIS))
        else:
            dims[a] = _MAX_CELLS_PER_AXIS
    while np.prod(dims) > _MAX_CELLS:
        a = int(np.argmax(dims))
        dims[a] = max(1, dims[a] // 2)
    width = span / dims
    cc = np.floor((coords - lo) / width).astype(np.int64)
    cc = np.clip(cc, 0, dims - 1)
    stride = np.ones(coords.shape[1], dtype=np.int64)
    for a in range(coords.shape[1] - 2, -1, -1):
        stride[a] = stride[a + 1] * dims[a + 1]
    key = cc @ stride
    order = np.argsort(key, kind="stable")
    starts = np.searchsorted(key[order], np.arange(int(np.prod(dims)) + 1)).astype(np.int64)
    return order, np.ascontiguousarray(cc[order]), dims, stride, starts


def space_sphere_hist(y, u, w_rho, w_rho1, r_grid, cos_grid, corr, lower, upper, vol, method="auto"):
    """Weighted pair histograms for K-hat (2-D) and K1-hat (1-D) in one pass.

    Returns ``(h_rs, h_r, skipped)`` summed over ordered pairs; ``skipped``
    counts unordered pairs whose edge weight is undefined.
    """
    y = np.ascontiguousarray(y, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    r_grid = np.ascontiguousarray(r_grid, dtype=float)
    cos_grid = np.ascontiguousarray(cos_grid, dtype=float)
    lower = np.ascontiguousarray(lower, dtype=float)
    upper = np.ascontiguousarray(upper, dtype=float)
    if y.shape[0] < 2:
        return np.zeros((r_grid.size, cos_grid.size)), np.zeros(r_grid.size), 0
    method = _resolve(method)
    w_rho = np.asarray(w_rho, float)
    w_rho1 = np.asarray(w_rho1, float)
    if method == "naive":
        return _naive_space_sphere(y, u, w_rho, w_rho1, r_grid, cos_grid, corr, lower, upper, float(vol))
    order = np.argsort(y[:, 0], kind="stable")
    if method == "sweep":
        return _sweep_space_sphere(
            np.ascontiguousarray(y[order]), np.ascontiguousarray(u[order]),
            np.ascontiguousarray(w_rho[order]), np.ascontiguousarray(w_rho1[order]),
            r_grid, cos_grid, int(corr), lower, upper, float(vol),
        )
    if y.shape[1] == 1 and int(corr) != CORR_TEMPORAL:
        h_r, skipped = _line_space(np.ascontiguousarray(y[order, 0]), np.ascontiguousarray(w_rho1[order]),
                                   r_grid, int(corr), float(upper[0] - lower[0]), 1.0 / float(vol))
    else:
        h_r, skipped = _sweep_space(np.ascontiguousarray(y[order]), np.ascontiguousarray(w_rho1[order]),
                                    r_grid, int(corr), lower, upper, float(vol))
    d = y.shape[1]
    coords = np.hstack([y, u])
    lo = np.concatenate([lower, -np.ones(u.shape[1])])
    span = np.concatenate([upper - lower, 2.0 * np.ones(u.shape[1])])
    reach = np.concatenate([np.full(d, r_grid[-1]), np.full(u.shape[1], _chord(cos_grid[-1]))])
    co, cc, dims, stride, starts = _cell_index(coords, lo, span, reach)
    h_rs = _cell_space_sphere(np.ascontiguousarray(y[co]), np.ascontiguousarray(u[co]),
                              np.ascontiguousarray(w_rho[co]), r_grid, cos_grid, int(corr), lower, upper,
                              float(vol), cc, dims, stride, starts)
    return h_rs, h_r, skipped


def sphere_hist(u, w, cos_grid, method="auto"):
    """Weighted ordered-pair histogram of geodesic lags."""
    u = np.ascontiguousarray(u, dtype=float)
    cos_grid = np.ascontiguousarray(cos_grid, dtype=float)
    w = np.asarray(w, dtype=float)
    if u.shape[0] < 2:
        return np.zeros(cos_grid.size)
    method = _resolve(method)
    if method == "naive":
        return _naive_sphere(u, w, cos_grid)
    if method == "cells":
        k1 = u.shape[1]
        co, cc, dims, stride, starts = _cell_index(u, -np.ones(k1), 2.0 * np.ones(k1),
                                                   np.full(k1, _chord(cos_grid[-1])))
        return _cell_sphere(np.ascontiguousarray(u[co]), np.ascontiguousarray(w[co]), cos_grid,
                            cc, dims, stride, starts)
    s_max = np.arccos(np.clip(cos_grid[-1], -1.0, 1.0))
    chord = 2.0 * np.sin(0.5 * s_max) + 1e-9 if s_max < np.pi - 1e-9 else -1.0
    order = np.argsort(u[:, -1], kind="stable")
    us = np.ascontiguousarray(u[order])
    return _sweep_sphere(us, np.ascontiguousarray(us[:, -1]), np.ascontiguousarray(w[order]),
                         cos_grid, float(chord))


def pair_count(y, u, r, cos_s, strict=False, method="auto"):
    """Number of unordered pairs with spatial lag <= r and dot >= cos_s."""
    y = np.ascontiguousarray(y, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    if y.shape[0] < 2:
        return 0
    method = _resolve(method)
    if method == "naive":
        return int(_naive_lags(y, u, r, cos_s, strict)[0].size)
    order = np.argsort(y[:, 0], kind="stable")
    return int(_sweep_count(np.ascontiguousarray(y[order]), np.ascontiguousarray(u[order]),
                            float(r), float(cos_s), bool(strict)))


def pair_lags(y, u, r, cos_s, strict=True, method="auto"):
    """Spatial lags and clipped dot products of unordered close pairs."""
    y = np.ascontiguousarray(y, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    if y.shape[0] < 2:
        return np.zeros(0), np.zeros(0)
    method = _resolve(method)
    if method == "naive":
        return _naive_lags(y, u, r, cos_s, strict)
    order = np.argsort(y[:, 0], kind="stable")
    ys, us = np.ascontiguousarray(y[order]), np.ascontiguousarray(u[order])
    dummy = np.zeros(0)
    cnt = _sweep_lags(ys, us, float(r), float(cos_s), bool(strict), dummy, dummy, False)
    out_t, out_dot = np.empty(cnt), np.empty(cnt)
    _sweep_lags(ys, us, float(r), float(cos_s), bool(strict), out_t, out_dot, True)
    return out_t, out_dot

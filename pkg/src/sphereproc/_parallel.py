"""Deterministic replicate parallelism.

Work items carry their own RNG stream, so results depend only on the item
list and never on the worker count or scheduling order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

ENV_THREADS = "SPHEREPROC_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value first, then the environment cap, then 1."""
    cap = os.environ.get(ENV_THREADS)
    cap = int(cap) if cap and cap.strip().isdigit() and int(cap) > 0 else None
    if threads is None or threads <= 0:
        return cap or 1
    return min(threads, cap) if cap else threads


def parallel_map(fn, items, threads: int | None = None, chunksize: int = 1):
    """``list(map(fn, items))`` with optional process parallelism, order preserved."""
    items = list(items)
    n = resolve_threads(threads)
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=max(1, chunksize)))

"""Backend selection for the trajectory kernels.

The compiled extension is used when importable; set ``PILOTWAVE_PURE_PYTHON=1``
to force the numpy fallback.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels_py

_compiled = None
if not os.environ.get("PILOTWAVE_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled  # type: ignore[no-redef]
    except ImportError:
        _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

BACKEND = "compiled" if _compiled is not None else "python"


def get_backend(name: str | None = None):
    name = name or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


def interp_field(field, grid, points, backend: str | None = None) -> np.ndarray:
    """Multilinear interpolation of a component field ``(C, *grid.shape)`` at ``points``."""
    mod = get_backend(backend)
    field = np.asarray(field, dtype=float)
    flat = np.ascontiguousarray(field.reshape(field.shape[0], -1))
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    return mod.interp_field(
        flat,
        tuple(grid.shape),
        pts,
        np.ascontiguousarray(grid.lower, dtype=float),
        np.ascontiguousarray(grid.spacing, dtype=float),
        grid.periodic,
    )


def rk4_ensemble(
    positions: np.ndarray,
    active: np.ndarray,
    fields: np.ndarray,
    times: np.ndarray,
    grid,
    t: float,
    dt: float,
    max_halvings: int = 8,
    threads: int = 1,
    backend: str | None = None,
) -> np.ndarray:
    """Advance ``positions`` (n, d) in place by one RK4 step; returns per-trajectory status.

    Trajectories are independent, so splitting them across ``threads`` workers
    gives results identical to a single worker.
    """
    mod = get_backend(backend)
    n, dims = positions.shape
    flat = np.ascontiguousarray(fields.reshape(fields.shape[0], dims, -1), dtype=float)
    tm = np.ascontiguousarray(times, dtype=float)
    lower = np.ascontiguousarray(grid.lower, dtype=float)
    spacing = np.ascontiguousarray(grid.spacing, dtype=float)
    lo, hi = grid.support()
    lo = np.ascontiguousarray(lo, dtype=float)
    hi = np.ascontiguousarray(hi, dtype=float)

    def work(sl: slice) -> np.ndarray:
        pos = np.ascontiguousarray(positions[sl])
        act = np.ascontiguousarray(active[sl], dtype=np.uint8)
        st = mod.rk4_ensemble(pos, act, flat, tm, tuple(grid.shape), float(t), float(dt),
                              lower, spacing, lo, hi, grid.periodic, int(max_halvings))
        positions[sl] = pos
        active[sl] = act
        return np.asarray(st)

    if threads <= 1 or n < 2 * threads:
        return work(slice(0, n))
    bounds = np.linspace(0, n, threads + 1).astype(int)
    slices = [slice(bounds[i], bounds[i + 1]) for i in range(threads)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(work, slices))
    return np.concatenate(parts)

"""Numpy implementation of the trajectory kernels.

Same contract as the compiled ``_kernels`` module; used when the extension
is not built or when ``PILOTWAVE_PURE_PYTHON`` is set.
"""

from __future__ import annotations

import numpy as np


def interp_field(field, shape, points, lower, spacing, periodic):
    field = np.asarray(field, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    shape = tuple(shape)
    dims = len(shape)
    n = points.shape[0]
    u = (points - np.asarray(lower)) / np.asarray(spacing)
    i0 = np.floor(u).astype(np.int64)
    fr = u - i0
    strides = np.ones(dims, dtype=np.int64)
    for d in range(dims - 2, -1, -1):
        strides[d] = strides[d + 1] * shape[d + 1]
    out = np.zeros((n, field.shape[0]))
    shp = np.asarray(shape, dtype=np.int64)
    for corner in range(1 << dims):
        w = np.ones(n)
        idx = np.zeros(n, dtype=np.int64)
        inside = np.ones(n, dtype=bool)
        for d in range(dims):
            if (corner >> d) & 1:
                w = w * fr[:, d]
                j = i0[:, d] + 1
            else:
                w = w * (1.0 - fr[:, d])
                j = i0[:, d]
            if periodic:
                j = np.mod(j, shp[d])
            else:
                inside &= (j >= 0) & (j < shp[d])
                j = np.clip(j, 0, shp[d] - 1)
            idx = idx + j * strides[d]
        contrib = w[:, None] * field[:, idx].T
        out += np.where(inside[:, None], contrib, 0.0)
    return out


def _velocity(fields, times, shape, x, s, lower, spacing, periodic):
    nt = len(times)
    if nt == 1:
        return interp_field(fields[0], shape, x, lower, spacing, periodic)
    s = np.broadcast_to(np.asarray(s, float), (x.shape[0],))
    k = np.clip(np.searchsorted(times, s, side="left") - 1, 0, nt - 2)
    w = np.clip((s - times[k]) / (times[k + 1] - times[k]), 0.0, 1.0)
    out = np.empty_like(x)
    for kk in np.unique(k):
        sel = k == kk
        va = interp_field(fields[kk], shape, x[sel], lower, spacing, periodic)
        ws = w[sel]
        if np.all(ws == 0.0):
            out[sel] = va
            continue
        vb = interp_field(fields[kk + 1], shape, x[sel], lower, spacing, periodic)
        mixed = (1.0 - ws)[:, None] * va + ws[:, None] * vb
        out[sel] = np.where((ws == 0.0)[:, None], va, mixed)
    return out


def rk4_ensemble(positions, active, fields, times, shape, t, dt, lower, spacing, sup_lo, sup_hi, periodic, max_halvings):
    n, dims = positions.shape
    status = np.where(active.astype(bool), 0, 2).astype(np.uint8)
    live = np.flatnonzero(active)
    if live.size == 0:
        return status
    times = np.asarray(times, float)
    spacing = np.asarray(spacing, float)
    x0 = positions[live]
    k1 = _velocity(fields, times, shape, x0, t, lower, spacing, periodic)
    worst = np.max(np.abs(k1) * dt / spacing, axis=1)
    halvings = np.zeros(live.size, dtype=np.int64)
    for _ in range(max_halvings):
        over = worst > 0.5
        halvings[over] += 1
        worst = np.where(over, worst * 0.5, worst)
    for hv in np.unique(halvings):
        sel = halvings == hv
        idx = live[sel]
        x = x0[sel].copy()
        first = k1[sel]
        nsub = 1 << int(hv)
        h = dt / nsub
        alive = np.ones(idx.size, dtype=bool)
        for sub in range(nsub):
            s = t + sub * h
            a = first if sub == 0 else _velocity(fields, times, shape, x, s, lower, spacing, periodic)
            b = _velocity(fields, times, shape, x + 0.5 * h * a, s + 0.5 * h, lower, spacing, periodic)
            c = _velocity(fields, times, shape, x + 0.5 * h * b, s + 0.5 * h, lower, spacing, periodic)
            d = _velocity(fields, times, shape, x + h * c, s + h, lower, spacing, periodic)
            step = x + h / 6.0 * (a + 2.0 * b + 2.0 * c + d)
            x = np.where(alive[:, None], step, x)
            if not periodic:
                out = np.any((x < sup_lo) | (x > sup_hi), axis=1) & alive
                alive &= ~out
        if periodic:
            span = np.asarray(sup_hi) - np.asarray(sup_lo)
            r = np.fmod(x - sup_lo, span)
            x = sup_lo + np.where(r < 0, r + span, r)
        positions[idx[alive]] = x[alive]
        status[idx[~alive]] = 1
        active[idx[~alive]] = 0
    return status

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled trajectory kernels: multilinear velocity interpolation and RK4."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs, fmod

cnp.import_array()

DEF MAXDIM = 8


cdef inline void _interp(const double[:, ::1] field, Py_ssize_t ncomp, int dims,
                         const Py_ssize_t* shape, const Py_ssize_t* strides,
                         const double* x, const double* lower, const double* spacing,
                         bint periodic, double* out) noexcept nogil:
    cdef Py_ssize_t i0[MAXDIM]
    cdef double fr[MAXDIM]
    cdef Py_ssize_t d, c, corner, idx, j
    cdef double u, w
    cdef bint inside
    for d in range(dims):
        u = (x[d] - lower[d]) / spacing[d]
        j = <Py_ssize_t>floor(u)
        fr[d] = u - j
        i0[d] = j
    for c in range(ncomp):
        out[c] = 0.0
    for corner in range(1 << dims):
        w = 1.0
        idx = 0
        inside = True
        for d in range(dims):
            if (corner >> d) & 1:
                w = w * fr[d]
                j = i0[d] + 1
            else:
                w = w * (1.0 - fr[d])
                j = i0[d]
            if periodic:
                j = j % shape[d]
                if j < 0:
                    j = j + shape[d]
            elif j < 0 or j >= shape[d]:
                inside = False
                break
            idx = idx + j * strides[d]
        if not inside:
            continue
        for c in range(ncomp):
            out[c] = out[c] + w * field[c, idx]


cdef inline void _velocity(const double[:, :, ::1] fields, const double[::1] times, Py_ssize_t nt,
                           int dims, const Py_ssize_t* shape, const Py_ssize_t* strides,
                           const double* x, double s, const double* lower, const double* spacing,
                           bint periodic, double* va, double* vb, double* out) noexcept nogil:
    cdef Py_ssize_t k = 0
    cdef double w
    cdef int d
    if nt == 1:
        _interp(fields[0], dims, dims, shape, strides, x, lower, spacing, periodic, out)
        return
    while k < nt - 2 and s > times[k + 1]:
        k += 1
    w = (s - times[k]) / (times[k + 1] - times[k])
    if w < 0.0:
        w = 0.0
    elif w > 1.0:
        w = 1.0
    _interp(fields[k], dims, dims, shape, strides, x, lower, spacing, periodic, va)
    if w == 0.0:
        for d in range(dims):
            out[d] = va[d]
        return
    _interp(fields[k + 1], dims, dims, shape, strides, x, lower, spacing, periodic, vb)
    for d in range(dims):
        out[d] = (1.0 - w) * va[d] + w * vb[d]


def interp_field(const double[:, ::1] field, tuple shape, const double[:, ::1] points,
                 const double[::1] lower, const double[::1] spacing, bint periodic):
    """Multilinear interpolation of ``field`` (components x flattened grid)."""
    cdef int dims = len(shape)
    cdef Py_ssize_t n = points.shape[0], ncomp = field.shape[0], i, d
    cdef Py_ssize_t shp[MAXDIM]
    cdef Py_ssize_t st[MAXDIM]
    if dims > MAXDIM:
        raise ValueError("too many grid dimensions")
    for d in range(dims):
        shp[d] = shape[d]
    st[dims - 1] = 1
    for d in range(dims - 2, -1, -1):
        st[d] = st[d + 1] * shp[d + 1]
    out = np.zeros((n, ncomp))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            _interp(field, ncomp, dims, shp, st, &points[i, 0], &lower[0], &spacing[0], periodic, &o[i, 0])
    return out


def rk4_ensemble(double[:, ::1] positions, cnp.uint8_t[::1] active, const double[:, :, ::1] fields,
                 const double[::1] times, tuple shape, double t, double dt,
                 const double[::1] lower, const double[::1] spacing,
                 const double[::1] sup_lo, const double[::1] sup_hi,
                 bint periodic, int max_halvings):
    """Advance active trajectories one RK4 step in place.

    Returns a status array: 0 ok, 1 left the grid (reflecting walls), 2 inactive.
    """
    cdef int dims = len(shape)
    cdef Py_ssize_t n = positions.shape[0], nt = times.shape[0], i, d, sub, nsub
    cdef Py_ssize_t shp[MAXDIM]
    cdef Py_ssize_t st[MAXDIM]
    cdef double x[MAXDIM]
    cdef double y[MAXDIM]
    cdef double k1[MAXDIM]
    cdef double k2[MAXDIM]
    cdef double k3[MAXDIM]
    cdef double k4[MAXDIM]
    cdef double va[MAXDIM]
    cdef double vb[MAXDIM]
    cdef double h, s, ratio, worst, span
    cdef int halvings
    cdef bint escaped
    if dims > MAXDIM:
        raise ValueError("too many grid dimensions")
    for d in range(dims):
        shp[d] = shape[d]
    st[dims - 1] = 1
    for d in range(dims - 2, -1, -1):
        st[d] = st[d + 1] * shp[d + 1]
    status = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] stat = status
    with nogil:
        for i in range(n):
            if not active[i]:
                stat[i] = 2
                continue
            for d in range(dims):
                x[d] = positions[i, d]
            _velocity(fields, times, nt, dims, shp, st, x, t, &lower[0], &spacing[0], periodic, va, vb, k1)
            halvings = 0
            worst = 0.0
            for d in range(dims):
                ratio = fabs(k1[d]) * dt / spacing[d]
                if ratio > worst:
                    worst = ratio
            while halvings < max_halvings and worst > 0.5:
                halvings += 1
                worst = worst * 0.5
            nsub = 1 << halvings
            h = dt / nsub
            escaped = False
            for sub in range(nsub):
                s = t + sub * h
                if sub > 0:
                    _velocity(fields, times, nt, dims, shp, st, x, s, &lower[0], &spacing[0], periodic, va, vb, k1)
                for d in range(dims):
                    y[d] = x[d] + 0.5 * h * k1[d]
                _velocity(fields, times, nt, dims, shp, st, y, s + 0.5 * h, &lower[0], &spacing[0], periodic, va, vb, k2)
                for d in range(dims):
                    y[d] = x[d] + 0.5 * h * k2[d]
                _velocity(fields, times, nt, dims, shp, st, y, s + 0.5 * h, &lower[0], &spacing[0], periodic, va, vb, k3)
                for d in range(dims):
                    y[d] = x[d] + h * k3[d]
                _velocity(fields, times, nt, dims, shp, st, y, s + h, &lower[0], &spacing[0], periodic, va, vb, k4)
                for d in range(dims):
                    x[d] = x[d] + h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d])
                if not periodic:
                    for d in range(dims):
                        if x[d] < sup_lo[d] or x[d] > sup_hi[d]:
                            escaped = True
                    if escaped:
                        break
            if escaped:
                stat[i] = 1
                active[i] = 0
                continue
            if periodic:
                for d in range(dims):
                    span = sup_hi[d] - sup_lo[d]
                    ratio = fmod(x[d] - sup_lo[d], span)
                    if ratio < 0.0:
                        ratio = ratio + span
                    x[d] = sup_lo[d] + ratio
            for d in range(dims):
                positions[i, d] = x[d]
    return status

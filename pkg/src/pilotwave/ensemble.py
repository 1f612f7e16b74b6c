"""Equilibrium ensembles of beables and their statistical checks.

Samples are drawn from the multilinear interpolant of the nodal density, and
the KS reference CDF is the exact marginal of that same interpolant, so a
correct sampler has no discretization bias against its own reference.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .collapse import BranchDecomposition, classify_points
from .state import ConfigurationGrid, DensityField, LabeledWavefunction, beable_density

KS_ALPHA_1PCT = 1.63
KS_ALPHA_5PCT = 1.36
BURN_IN = 1000
THIN = 10
MIN_ACCEPTANCE = 1e-4


@dataclass
class EnsembleSample:
    points: np.ndarray
    seed: int
    method: str
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class FitReport:
    ks: list[float]
    n: int
    threshold: float
    passed: bool

    def to_json(self) -> dict:
        return asdict(self)


def _as_density(obj) -> DensityField:
    if isinstance(obj, DensityField):
        return obj
    if isinstance(obj, LabeledWavefunction):
        return beable_density(obj)
    raise TypeError(f"expected a DensityField or LabeledWavefunction, got {type(obj).__name__}")


def _interp_density(rho: DensityField, pts: np.ndarray) -> np.ndarray:
    return kernels.interp_field(rho.values[None], rho.grid, pts)[:, 0]


def acceptance_rate(rho: DensityField) -> float:
    """Expected acceptance of box-uniform rejection sampling with envelope ``max rho``."""
    peak = float(np.max(rho.values))
    return float(np.mean(rho.values)) / peak if peak > 0 else 0.0


def _rejection(rho: DensityField, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = rho.grid.support()
    peak = float(np.max(rho.values))
    rate = max(acceptance_rate(rho), MIN_ACCEPTANCE)
    out = []
    have = 0
    while have < n:
        batch = int(np.ceil((n - have) / rate * 1.1)) + 16
        x = lo + (hi - lo) * rng.random((batch, rho.grid.dims))
        u = rng.random(batch) * peak
        keep = x[u < _interp_density(rho, x)]
        out.append(keep)
        have += len(keep)
    return np.concatenate(out)[:n]


def _metropolis(rho: DensityField, n: int, rng: np.random.Generator) -> np.ndarray:
    g = rho.grid
    lo, hi = g.support()
    axes = g.axes()
    scale = np.empty(g.dims)
    for d in range(g.dims):
        m = rho.marginal(d)
        w = m / m.sum()
        mu = np.sum(w * axes[d])
        scale[d] = max(np.sqrt(np.sum(w * (axes[d] - mu) ** 2)), g.spacing[d])
    scale *= 2.38 / np.sqrt(g.dims)
    start = np.unravel_index(int(np.argmax(rho.values)), g.shape)
    x = np.array([axes[d][start[d]] for d in range(g.dims)])
    px = _interp_density(rho, x[None])[0]
    total = BURN_IN + n * THIN
    steps = rng.normal(size=(total, g.dims)) * scale
    us = rng.random(total)
    out = np.empty((n, g.dims))
    k = 0
    for i in range(total):
        y = x + steps[i]
        if g.periodic:
            y = g.wrap(y)
            ok = True
        else:
            ok = bool(np.all(y >= lo) and np.all(y <= hi))
        if ok:
            py = _interp_density(rho, y[None])[0]
            if us[i] * px < py:
                x, px = y, py
        if i >= BURN_IN and (i - BURN_IN) % THIN == THIN - 1:
            out[k] = x
            k += 1
    return out


def sample_equilibrium(rho, n: int, seed: int, method: str | None = None) -> EnsembleSample:
    """Draw ``n`` beable configurations distributed as ``rho``.

    Rejection sampling for one or two coordinates, Metropolis otherwise; a
    rejection acceptance rate below 1e-4 switches to Metropolis with a warning.
    """
    rho = _as_density(rho)
    if n < 1:
        raise ValueError("need at least one sample")
    if np.max(rho.values) <= 0:
        raise ValueError("density vanishes everywhere")
    rng = np.random.default_rng(seed)
    if method is None:
        method = "rejection" if rho.grid.dims <= 2 else "metropolis"
    notes = []
    if method == "rejection" and acceptance_rate(rho) < MIN_ACCEPTANCE:
        msg = f"rejection acceptance {acceptance_rate(rho):.2g} below {MIN_ACCEPTANCE:g}; using Metropolis"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        method = "metropolis"
    if method == "rejection":
        pts = _rejection(rho, n, rng)
    elif method == "metropolis":
        pts = _metropolis(rho, n, rng)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    return EnsembleSample(pts, int(seed), method, notes)


def _trapezoid_weights(grid: ConfigurationGrid, d: int) -> np.ndarray:
    w = np.full(grid.points[d], grid.spacing[d])
    if not grid.periodic:
        w[0] *= 0.5
        w[-1] *= 0.5
    return w


class MarginalCDF:
    """CDF of one coordinate under the multilinear interpolant of a density."""

    def __init__(self, rho: DensityField, d: int):
        g = rho.grid
        vals = rho.values
        for ax in range(g.dims):
            if ax != d:
                shape = [1] * g.dims
                shape[ax] = -1
                vals = vals * _trapezoid_weights(g, ax).reshape(shape)
        others = tuple(ax for ax in range(g.dims) if ax != d)
        m = np.sum(vals, axis=others) if others else np.asarray(vals)
        self.h = g.spacing[d]
        self.x0 = g.lower[d]
        if g.periodic:
            left, right = m, np.roll(m, -1)
        else:
            left, right = m[:-1], m[1:]
        self.left = left
        self.slope = right - left
        cells = self.h * 0.5 * (left + right)
        self.cum = np.concatenate([[0.0], np.cumsum(cells)])
        self.total = self.cum[-1]
        self.ncells = len(cells)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = (x - self.x0) / self.h
        i = np.clip(np.floor(u).astype(np.int64), 0, self.ncells - 1)
        s = np.clip(u - i, 0.0, 1.0)
        part = self.h * (self.left[i] * s + 0.5 * self.slope[i] * s**2)
        out = (self.cum[i] + part) / self.total
        out = np.where(u < 0, 0.0, out)
        return np.where(u >= self.ncells, 1.0, out)


def ks_statistics(points, rho) -> list[float]:
    rho = _as_density(rho)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("empty ensemble")
    return [float(stats.kstest(pts[:, d], MarginalCDF(rho, d)).statistic) for d in range(rho.grid.dims)]


def equivariance_test(points, psi_t, threshold: float | None = None, coefficient: float = KS_ALPHA_1PCT) -> FitReport:
    """Per-coordinate KS test of an ensemble against the marginals of ``|Psi_T|^2``."""
    pts = np.atleast_2d(np.asarray(getattr(points, "points", points), dtype=float))
    n = pts.shape[0]
    if n == 0:
        raise ValueError("empty ensemble")
    thr = coefficient / np.sqrt(n) if threshold is None else float(threshold)
    ks = ks_statistics(pts, psi_t)
    return FitReport(ks, n, float(thr), bool(all(k < thr for k in ks)))


@dataclass
class BornReport:
    fractions: list[float]
    stderr: list[float]
    counts: list[int]
    ambiguous: int
    unclassifiable: int
    n: int

    def to_json(self) -> dict:
        return asdict(self)


def born_fraction(points, decomposition: BranchDecomposition) -> BornReport:
    """Fraction of beables found in each branch, with binomial standard errors."""
    pts = np.atleast_2d(np.asarray(getattr(points, "points", points), dtype=float))
    idx, amb, unc = classify_points(pts, decomposition)
    nb = len(decomposition)
    counts = np.bincount(idx[~unc], minlength=nb)
    n = len(pts)
    frac = counts / n
    se = np.sqrt(frac * (1 - frac) / n)
    return BornReport(frac.tolist(), se.tolist(), counts.tolist(), int(amb.sum()), int(unc.sum()), n)


def write_ensemble_csv(path, points, t: float = 0.0) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "t"] + [f"coord_{d}" for d in range(pts.shape[1])])
        for i, p in enumerate(pts):
            w.writerow([i, repr(float(t))] + [repr(float(c)) for c in p])


def write_fit_report(path, report: FitReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)

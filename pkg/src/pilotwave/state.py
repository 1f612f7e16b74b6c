"""Labeled wavefunctions on uniform configuration grids.

A wavefunction here carries a finite discrete label index (spin component or
fermionic basis state) on top of a real configuration space that holds the
beables. Densities and reduced density matrices are obtained by summing over
the label index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_AMPLITUDES_PER_LABEL = 2**26
MIN_POINTS = 8

BOUNDARIES = ("periodic", "reflecting")


class GridError(ValueError):
    """Raised when a grid cannot be constructed or coordinates do not fit it."""


class StateError(ValueError):
    """Raised for invalid wavefunction data or incompatible states."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ConfigurationGrid:
    """Uniform grid over the beable configuration space.

    Nodes sit at ``lower + i * spacing`` for ``i = 0 .. points - 1`` so that
    the upper bound is excluded (periodic index convention). Under reflecting
    walls the amplitude is taken to vanish on the ghost nodes ``i = -1`` and
    ``i = points``.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points: tuple[int, ...]
    boundary: str = "periodic"

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.points)) or not self.points:
            raise GridError("grid extents must be non-empty and consistent in length")
        if self.boundary not in BOUNDARIES:
            raise GridError(f"unknown boundary {self.boundary!r}; expected one of {BOUNDARIES}")

    @property
    def dims(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.points)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def length(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def axis(self, d: int) -> np.ndarray:
        return self.lower[d] + self.spacing[d] * np.arange(self.points[d])

    def axes(self) -> list[np.ndarray]:
        return [self.axis(d) for d in range(self.dims)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def wavenumbers(self, d: int) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.points[d], d=self.spacing[d])

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Interval per axis on which beables may live."""
        lo = np.asarray(self.lower, dtype=float)
        if self.periodic:
            return lo, np.asarray(self.upper, dtype=float)
        return lo, lo + self.spacing * (np.asarray(self.points) - 1)

    def wrap(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        if not self.periodic:
            return coords
        lo = np.asarray(self.lower)
        return lo + np.mod(coords - lo, self.length)

    def node_index(self, coords: Sequence[float], tol: float = 1e-9) -> tuple[int, ...]:
        """Index of the grid node at ``coords``; off-node coordinates are rejected."""
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (self.dims,):
            raise GridError(f"expected {self.dims} coordinates, got shape {coords.shape}")
        if self.periodic:
            coords = self.wrap(coords)
        u = (coords - np.asarray(self.lower)) / self.spacing
        idx = np.rint(u)
        if np.any(np.abs(u - idx) > tol):
            raise GridError(f"coordinates {coords.tolist()} do not lie on grid nodes")
        idx = idx.astype(int)
        if self.periodic:
            idx = np.mod(idx, self.points)
        elif np.any(idx < 0) or np.any(idx >= np.asarray(self.points)):
            raise GridError(f"coordinates {coords.tolist()} lie outside the grid")
        return tuple(int(i) for i in idx)

    def to_dict(self) -> dict:
        return {
            "extents": [[lo, hi, n] for lo, hi, n in zip(self.lower, self.upper, self.points)],
            "boundary": self.boundary,
        }


def make_grid(
    extents: Sequence[Sequence[float]],
    boundary: str = "periodic",
    max_amplitudes: int = MAX_AMPLITUDES_PER_LABEL,
) -> ConfigurationGrid:
    """Build a uniform grid from ``(min, max, points)`` triples.

    >>> make_grid([(-10, 10, 256)]).spacing[0]
    0.078125
    """
    if len(extents) == 0:
        raise GridError("at least one extent is required")
    lower, upper, points = [], [], []
    for d, ext in enumerate(extents):
        if len(ext) != 3:
            raise GridError(f"extent {d} must be (min, max, points), got {ext!r}")
        lo, hi, n = float(ext[0]), float(ext[1]), ext[2]
        if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
            raise GridError(f"extent {d}: need finite min < max, got ({lo}, {hi})")
        if int(n) != n or int(n) < MIN_POINTS:
            raise GridError(f"extent {d}: need an integer number of points >= {MIN_POINTS}, got {n}")
        lower.append(lo)
        upper.append(hi)
        points.append(int(n))
    total = int(np.prod(points, dtype=object))
    if total > max_amplitudes:
        raise GridError(f"grid of {total} points exceeds the cap of {max_amplitudes} amplitudes per label")
    return ConfigurationGrid(tuple(lower), tuple(upper), tuple(points), boundary)


@dataclass(frozen=True)
class LabeledWavefunction:
    """Complex amplitudes ``Psi_f(q)`` of shape ``(labels, *grid.shape)``."""

    grid: ConfigurationGrid
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128, copy=True)
        if amps.ndim == self.grid.dims:
            amps = amps[None]
        if amps.shape[1:] != self.grid.shape or amps.shape[0] < 1:
            raise StateError(
                f"amplitude shape {amps.shape} incompatible with grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(amps)):
            raise StateError("amplitudes contain non-finite values")
        object.__setattr__(self, "amplitudes", _readonly(amps))
        object.__setattr__(self, "time", float(self.time))

    @property
    def labels(self) -> int:
        return self.amplitudes.shape[0]

    def norm2(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.cell_volume)

    def label_weights(self) -> np.ndarray:
        axes = tuple(range(1, self.amplitudes.ndim))
        return np.sum(np.abs(self.amplitudes) ** 2, axis=axes) * self.grid.cell_volume

    def replace(self, amplitudes: np.ndarray | None = None, time: float | None = None) -> "LabeledWavefunction":
        return LabeledWavefunction(
            self.grid,
            self.amplitudes if amplitudes is None else amplitudes,
            self.time if time is None else time,
        )

    def __add__(self, other: "LabeledWavefunction") -> "LabeledWavefunction":
        _check_compatible(self, other)
        return self.replace(self.amplitudes + other.amplitudes)

    def __sub__(self, other: "LabeledWavefunction") -> "LabeledWavefunction":
        _check_compatible(self, other)
        return self.replace(self.amplitudes - other.amplitudes)


@dataclass(frozen=True)
class DensityField:
    grid: ConfigurationGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != self.grid.shape:
            raise StateError(f"density shape {vals.shape} does not match grid {self.grid.shape}")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise StateError("density must be finite and non-negative")
        object.__setattr__(self, "values", _readonly(vals))

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def marginal(self, d: int) -> np.ndarray:
        """Marginal density along axis ``d`` (integrated over the other axes)."""
        others = tuple(i for i in range(self.grid.dims) if i != d)
        cell = float(np.prod([self.grid.spacing[i] for i in others])) if others else 1.0
        return np.sum(self.values, axis=others) * cell


@dataclass(frozen=True)
class ReducedDensitySample:
    q: np.ndarray
    q_prime: np.ndarray
    value: complex


def _check_compatible(a: LabeledWavefunction, b: LabeledWavefunction) -> None:
    if a.grid != b.grid:
        raise StateError("wavefunctions live on different grids")
    if a.labels != b.labels:
        raise StateError(f"label counts differ ({a.labels} vs {b.labels})")


def normalize(psi: LabeledWavefunction) -> LabeledWavefunction:
    n2 = psi.norm2()
    if not np.isfinite(n2) or n2 <= 0.0:
        raise StateError(f"cannot normalize a state with squared norm {n2}")
    return psi.replace(psi.amplitudes / np.sqrt(n2))


def beable_density(psi: LabeledWavefunction) -> DensityField:
    """Label-traced density ``sum_f |Psi_f(q)|^2``."""
    a = psi.amplitudes
    values = np.sum(a.real**2 + a.imag**2, axis=0)
    return DensityField(psi.grid, values, psi.time)


def reduced_density(psi: LabeledWavefunction, q, q_prime) -> ReducedDensitySample:
    """Element ``rho(q; q')`` of the label-traced reduced density matrix."""
    i = psi.grid.node_index(q)
    j = psi.grid.node_index(q_prime)
    a = psi.amplitudes
    ai = a[(slice(None),) + i]
    aj = a[(slice(None),) + j]
    if i == j:
        # same arithmetic as beable_density so the diagonal agrees bit for bit
        value = complex(np.sum(ai.real**2 + ai.imag**2), 0.0)
    else:
        value = complex(np.sum(np.conj(aj) * ai))
    return ReducedDensitySample(np.asarray(q, float), np.asarray(q_prime, float), value)


def inner_product(psi1: LabeledWavefunction, psi2: LabeledWavefunction) -> complex:
    _check_compatible(psi1, psi2)
    return complex(np.vdot(psi1.amplitudes, psi2.amplitudes) * psi1.grid.cell_volume)


def gaussian_packet(
    grid: ConfigurationGrid,
    center: Sequence[float],
    width: Sequence[float] | float,
    momentum: Sequence[float] | float = 0.0,
) -> np.ndarray:
    """Normalized Gaussian amplitude whose density has standard deviation ``width``."""
    center = np.broadcast_to(np.asarray(center, float), (grid.dims,))
    width = np.broadcast_to(np.asarray(width, float), (grid.dims,))
    momentum = np.broadcast_to(np.asarray(momentum, float), (grid.dims,))
    if np.any(width <= 0):
        raise StateError("Gaussian widths must be positive")
    out = np.ones(grid.shape, dtype=np.complex128)
    for d, x in enumerate(grid.mesh()):
        out = out * np.exp(-((x - center[d]) ** 2) / (4 * width[d] ** 2) + 1j * momentum[d] * x)
        out = out / (2 * np.pi * width[d] ** 2) ** 0.25
    return out


def from_labels(grid: ConfigurationGrid, spatial: np.ndarray, label_amplitudes: Sequence[complex], time: float = 0.0) -> LabeledWavefunction:
    """Product state ``c_f * phi(q)``."""
    c = np.asarray(label_amplitudes, dtype=np.complex128)
    amps = c.reshape((-1,) + (1,) * grid.dims) * np.asarray(spatial)[None]
    return LabeledWavefunction(grid, amps, time)

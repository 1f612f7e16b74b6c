"""Branch decompositions, overlap functionals and effective collapse.

Two branches are non-overlapping only if their supports are disjoint in the
beable configuration space for *every* pair of labels. Orthogonality in the
label index alone does not separate them: the beables see the label-summed
density and current.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .dynamics import HamiltonianSpec
from .guidance import NODE_EPS, Trajectory, guidance_velocity
from .state import (
    ConfigurationGrid,
    LabeledWavefunction,
    StateError,
    _check_compatible,
    beable_density,
    gaussian_packet,
    inner_product,
)

DEFAULT_THRESHOLD = 1e-6
AMBIGUITY_RATIO = 10.0
MAX_LEVELS = 4


@dataclass(frozen=True)
class BranchDecomposition:
    total: LabeledWavefunction
    branches: tuple[LabeledWavefunction, ...]
    residual: float
    weights: np.ndarray
    cross_terms: np.ndarray

    @property
    def time(self) -> float:
        return self.total.time

    def __len__(self) -> int:
        return len(self.branches)


def decompose(psi: LabeledWavefunction, branches: Sequence[LabeledWavefunction], tol: float = 1e-10) -> BranchDecomposition:
    """Validate that ``branches`` sum to ``psi`` and record weights and cross terms."""
    if not branches:
        raise StateError("a decomposition needs at least one branch")
    for b in branches:
        _check_compatible(psi, b)
    diff = psi.amplitudes - np.sum([b.amplitudes for b in branches], axis=0)
    residual = float(np.sqrt(np.sum(np.abs(diff) ** 2) * psi.grid.cell_volume))
    if residual >= tol:
        raise StateError(f"branches do not sum to the state (residual {residual:.3g})")
    weights = np.array([b.norm2() for b in branches])
    n = len(branches)
    cross = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            cross[i, j] = cross[j, i] = 2.0 * inner_product(branches[i], branches[j]).real
    return BranchDecomposition(psi, tuple(branches), residual, weights, cross)


def branch_overlap(psi1: LabeledWavefunction, psi2: LabeledWavefunction) -> float:
    """Support overlap summed over all label pairs, normalized by both norms."""
    if psi1.grid != psi2.grid:
        raise StateError("branches live on different grids")
    s1 = np.sum(np.abs(psi1.amplitudes), axis=0)
    s2 = np.sum(np.abs(psi2.amplitudes), axis=0)
    n1, n2 = np.sqrt(psi1.norm2()), np.sqrt(psi2.norm2())
    if n1 == 0 or n2 == 0:
        raise StateError("overlap of a zero-norm branch is undefined")
    return float(np.sum(s1 * s2) * psi1.grid.cell_volume / (n1 * n2))


def density_overlap(psi1: LabeledWavefunction, psi2: LabeledWavefunction) -> float:
    if psi1.grid != psi2.grid:
        raise StateError("branches live on different grids")
    r1 = beable_density(psi1).values
    r2 = beable_density(psi2).values
    cell = psi1.grid.cell_volume
    n1 = np.sqrt(np.sum(r1**2) * cell)
    n2 = np.sqrt(np.sum(r2**2) * cell)
    if n1 == 0 or n2 == 0:
        raise StateError("overlap of a zero-norm branch is undefined")
    return float(np.sum(r1 * r2) * cell / (n1 * n2))


def collapse_probability(branch: LabeledWavefunction, psi: LabeledWavefunction) -> float:
    """``|<branch|psi>|^2 / (||branch||^2 ||psi||^2)``."""
    nb = branch.norm2()
    if nb <= 0:
        raise StateError("collapse probability of a zero-norm branch is undefined")
    return float(abs(inner_product(branch, psi)) ** 2 / (nb * psi.norm2()))


@dataclass(frozen=True)
class Classification:
    index: int | None
    ambiguous: bool
    unclassifiable: bool
    densities: np.ndarray


def branch_densities_at(points, decomposition: BranchDecomposition) -> np.ndarray:
    """Beable density of each branch interpolated at ``points``; shape ``(n, branches)``."""
    grid = decomposition.total.grid
    stack = np.stack([beable_density(b).values for b in decomposition.branches])
    return kernels.interp_field(stack, grid, points)


def _classify_rows(dens: np.ndarray, floor: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = np.argsort(-dens, axis=1, kind="stable")
    top = np.take_along_axis(dens, order[:, :1], axis=1)[:, 0]
    if dens.shape[1] > 1:
        second = np.take_along_axis(dens, order[:, 1:2], axis=1)[:, 0]
        ambiguous = top < AMBIGUITY_RATIO * second
    else:
        ambiguous = np.zeros(len(dens), dtype=bool)
    unclass = top < floor
    return order[:, 0], ambiguous & ~unclass, unclass


def _density_floor(decomposition: BranchDecomposition, node_eps: float) -> float:
    peak = max(float(np.max(beable_density(b).values)) for b in decomposition.branches)
    return node_eps * peak


def classify_trajectory(q, decomposition: BranchDecomposition, node_eps: float = NODE_EPS) -> Classification:
    """Branch whose density is largest at ``q``.

    Ambiguous when the runner-up density is within a factor 10; unclassifiable
    when every branch density is below the node threshold.
    """
    pt = np.asarray(getattr(q, "coords", q), dtype=float).reshape(1, -1)
    dens = branch_densities_at(pt, decomposition)
    idx, amb, unc = _classify_rows(dens, _density_floor(decomposition, node_eps))
    return Classification(None if unc[0] else int(idx[0]), bool(amb[0]), bool(unc[0]), dens[0])


def classify_points(points, decomposition: BranchDecomposition, node_eps: float = NODE_EPS):
    """Vectorized classification; returns ``(index, ambiguous, unclassifiable)`` arrays."""
    dens = branch_densities_at(np.atleast_2d(points), decomposition)
    return _classify_rows(dens, _density_floor(decomposition, node_eps))


@dataclass
class CollapseReport:
    trajectory_id: int
    branch_index: int | None
    collapse_time: float | None
    overlap_history: list[float]
    times: list[float]
    velocity_agreement_error: float
    threshold: float

    def to_json(self) -> dict:
        return asdict(self)


def overlap_series(decompositions: Sequence[BranchDecomposition]) -> np.ndarray:
    """Largest pairwise ``branch_overlap`` at each stored time (0 for a single branch)."""
    out = []
    for dec in decompositions:
        worst = 0.0
        for i in range(len(dec)):
            for j in range(i + 1, len(dec)):
                if dec.weights[i] > 0 and dec.weights[j] > 0:
                    worst = max(worst, branch_overlap(dec.branches[i], dec.branches[j]))
        out.append(worst)
    return np.asarray(out)


def first_sustained_below(values: np.ndarray, threshold: float) -> int | None:
    below = np.asarray(values) < threshold
    if not below.size or not below[-1]:
        return None
    above = np.flatnonzero(~below)
    return 0 if above.size == 0 else int(above[-1] + 1)


def report_from_series(
    times,
    overlaps,
    branch_at,
    v_total,
    v_branches,
    threshold: float = DEFAULT_THRESHOLD,
    trajectory_id: int = 0,
    eps: float = 1e-12,
) -> CollapseReport:
    """Collapse report from per-sample overlaps and velocities at the beable.

    ``branch_at[k]`` is the classified branch at sample ``k`` (``None`` or -1
    if unclassifiable), ``v_total`` has shape ``(T, d)`` and ``v_branches``
    shape ``(T, branches, d)``.
    """
    times = np.asarray(times, float)
    ov = np.asarray(overlaps, float)
    vb_all = np.asarray(v_branches, float)
    if vb_all.shape[1] < 2:
        return CollapseReport(trajectory_id, 0, None, ov.tolist(), times.tolist(), 0.0, threshold)
    start = first_sustained_below(ov, threshold)
    if start is None:
        return CollapseReport(trajectory_id, None, None, ov.tolist(), times.tolist(), float("nan"), threshold)
    branch = branch_at[start]
    if branch is None or branch < 0:
        return CollapseReport(trajectory_id, None, float(times[start]), ov.tolist(), times.tolist(), float("nan"), threshold)
    vt = np.asarray(v_total, float)[start:]
    vb = vb_all[start:, branch]
    err = np.linalg.norm(vt - vb, axis=1) / (np.linalg.norm(vb, axis=1) + eps)
    return CollapseReport(trajectory_id, int(branch), float(times[start]), ov.tolist(), times.tolist(), float(np.max(err)), threshold)


def detect_effective_collapse(
    trajectory: Trajectory,
    decompositions: Sequence[BranchDecomposition],
    hamiltonian: HamiltonianSpec,
    threshold: float = DEFAULT_THRESHOLD,
    trajectory_id: int = 0,
    overlaps: np.ndarray | None = None,
    eps: float = 1e-12,
) -> CollapseReport:
    """Find the first time from which branch overlap stays below ``threshold``.

    From that time on, the velocity of the total state at the beable is
    compared with the velocity of the branch the beable sat in at that time.
    """
    if len(decompositions) != len(trajectory):
        raise ValueError("need one decomposition per trajectory sample")
    times = trajectory.times
    dec_times = np.array([d.time for d in decompositions])
    if np.any(np.abs(dec_times - times) > 1e-9 * np.maximum(1.0, np.abs(times))):
        raise ValueError("decomposition times do not match the trajectory samples")
    ov = overlap_series(decompositions) if overlaps is None else np.asarray(overlaps)
    nb = len(decompositions[0])
    dims = trajectory.points.shape[1]
    start = first_sustained_below(ov, threshold) if nb > 1 else None
    branch_at: list[int | None] = [None] * len(trajectory)
    v_total = np.zeros((len(trajectory), dims))
    v_branches = np.zeros((len(trajectory), nb, dims))
    if start is not None:
        cls = classify_trajectory(trajectory.points[start], decompositions[start])
        branch_at[start] = cls.index
        for k in range(start, len(trajectory)):
            dec = decompositions[k]
            pt = trajectory.points[k : k + 1]
            v_total[k] = guidance_velocity(dec.total, hamiltonian).at(pt)[0]
            if cls.index is not None:
                v_branches[k, cls.index] = guidance_velocity(dec.branches[cls.index], hamiltonian).at(pt)[0]
    return report_from_series(times, ov, branch_at, v_total, v_branches, threshold, trajectory_id, eps)


@dataclass
class MeasurementScenario:
    hamiltonian: HamiltonianSpec
    psi0: LabeledWavefunction
    amplitudes: np.ndarray
    coupling: float
    duration: float
    width: float
    mass: float
    warnings: list[str] = field(default_factory=list)

    def branches(self, psi: LabeledWavefunction) -> BranchDecomposition:
        """Split ``psi`` into one branch per system level (the pointer packet of that level)."""
        parts = []
        for i in range(psi.labels):
            a = np.zeros_like(psi.amplitudes)
            a[i] = psi.amplitudes[i]
            parts.append(psi.replace(a))
        return decompose(psi, parts)

    def pointer_width(self, t: float) -> float:
        w = self.width
        return float(np.sqrt(w**2 + t**2 / (4 * self.mass**2 * w**2)))

    def pointer_center(self, level: int, t: float, center: float = 0.0) -> float:
        return center + level * self.coupling * t


def build_measurement_scenario(
    levels: int,
    pointer_grid: ConfigurationGrid,
    coupling: float,
    duration: float,
    amplitudes: Sequence[complex] | None = None,
    width: float = 1.0,
    mass: float = 1.0,
    center: float = 0.0,
) -> MeasurementScenario:
    """Pointer coupled to a ``levels``-state system through ``coupling * i * p``.

    Level ``i`` drags the pointer packet at speed ``i * coupling``; the pointer
    coordinate is the only beable.
    """
    if pointer_grid.dims != 1:
        raise ValueError("the pointer grid must be one-dimensional")
    if not 1 <= levels <= MAX_LEVELS:
        raise ValueError(f"levels must be between 1 and {MAX_LEVELS}")
    c = np.ones(levels, complex) if amplitudes is None else np.asarray(amplitudes, complex)
    if c.shape != (levels,):
        raise ValueError(f"need {levels} level amplitudes")
    c = c / np.linalg.norm(c)
    drift = (np.arange(levels) * coupling).reshape(levels, 1)
    h = HamiltonianSpec(grid=pointer_grid, labels=levels, mass=mass, potential=0.0, label_drift=drift)
    phi = gaussian_packet(pointer_grid, [center], width)
    psi0 = LabeledWavefunction(pointer_grid, c[:, None] * phi[None], 0.0)
    sc = MeasurementScenario(h, psi0, c, float(coupling), float(duration), float(width), float(mass))
    if levels > 1:
        sep = abs(coupling) * duration
        sig = sc.pointer_width(duration)
        if sep <= 5 * sig:
            msg = (f"pointer packets separate by {sep:.3g} = {sep / sig:.2f} sigma at t = {duration:g}; "
                   "need more than 5 sigma for effective collapse")
            sc.warnings.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return sc


def write_reports(path, reports: Sequence[CollapseReport]) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_json() for r in reports], fh, indent=2, sort_keys=True)

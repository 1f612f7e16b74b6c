"""Traced probability currents and beable trajectories.

The current is summed over the label index, so the beables feel a single
velocity field ``J / rho`` even when the state carries spin or fermionic
labels that have no beables of their own.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .dynamics import HamiltonianSpec, Propagator, _check_pair, _derivative
from .state import ConfigurationGrid, DensityField, GridError, LabeledWavefunction, beable_density

NODE_EPS = 1e-12
MAX_HALVINGS = 8


class TrajectoryError(RuntimeError):
    pass


@dataclass(frozen=True)
class BeableConfiguration:
    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float, copy=True).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise GridError("beable coordinates must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def on(cls, grid: ConfigurationGrid, coords) -> "BeableConfiguration":
        c = np.asarray(coords, dtype=float).reshape(-1)
        if c.shape != (grid.dims,):
            raise GridError(f"expected {grid.dims} coordinates, got {c.shape}")
        c = grid.wrap(c)
        lo, hi = grid.support()
        if not grid.periodic and (np.any(c < lo) or np.any(c > hi)):
            raise GridError(f"configuration {c.tolist()} lies outside the grid")
        return cls(c)


@dataclass(frozen=True)
class CurrentField:
    grid: ConfigurationGrid
    components: np.ndarray
    time: float = 0.0


@dataclass(frozen=True)
class VelocityField:
    grid: ConfigurationGrid
    components: np.ndarray
    node_mask: np.ndarray
    time: float = 0.0

    def at(self, points, backend: str | None = None) -> np.ndarray:
        return kernels.interp_field(self.components, self.grid, points, backend)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    aborted: bool = False
    reason: str | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if len(t) != len(p):
            raise TrajectoryError("times and points must have equal length")
        if np.any(np.diff(t) <= 0):
            raise TrajectoryError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.times)

    def configuration(self, i: int) -> BeableConfiguration:
        return BeableConfiguration(self.points[i])

    def max_speed(self) -> float:
        if len(self.times) < 2:
            return 0.0
        disp = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return float(np.max(disp / np.diff(self.times)))


def current(psi: LabeledWavefunction, h: HamiltonianSpec) -> CurrentField:
    """Label-traced probability current, one component per beable coordinate."""
    _check_pair(psi, h)
    g = psi.grid
    a = psi.amplitudes
    dens = a.real**2 + a.imag**2
    rho = np.sum(dens, axis=0)
    comps = np.empty((g.dims,) + g.shape)
    for d in range(g.dims):
        da = _derivative(a, g, d)
        j = h.kinetic_metric[d] * np.sum(a.real * da.imag - a.imag * da.real, axis=0)
        if h.vector_potential is not None:
            j = j - h.charge * h.kinetic_metric[d] * h.vector_potential[d] * rho
        drift = h.label_drift[:, d]
        if np.any(drift != 0):
            j = j + np.tensordot(drift, dens, axes=(0, 0))
        comps[d] = j
    return CurrentField(g, comps, psi.time)


def velocity_field(rho: DensityField, j: CurrentField, node_eps: float = NODE_EPS) -> VelocityField:
    """``v = J / rho`` away from nodes; frozen to zero where ``rho < node_eps * max(rho)``."""
    if rho.grid != j.grid:
        raise GridError("density and current live on different grids")
    if abs(rho.time - j.time) > 1e-12 * max(1.0, abs(rho.time)):
        raise ValueError("density and current are taken at different times")
    vals = rho.values
    cut = node_eps * float(np.max(vals)) if vals.size else 0.0
    mask = vals < cut
    safe = np.where(mask, 1.0, vals)
    v = np.where(mask[None], 0.0, j.components / safe[None])
    return VelocityField(rho.grid, v, mask, rho.time)


def guidance_velocity(psi: LabeledWavefunction, h: HamiltonianSpec, node_eps: float = NODE_EPS) -> VelocityField:
    return velocity_field(beable_density(psi), current(psi, h), node_eps)


def divergence(components: np.ndarray, grid: ConfigurationGrid) -> np.ndarray:
    """Central-difference divergence (periodic wrap or zero ghosts)."""
    out = np.zeros(grid.shape)
    for d in range(grid.dims):
        c = components[d]
        if grid.periodic:
            out += (np.roll(c, -1, axis=d) - np.roll(c, 1, axis=d)) / (2 * grid.spacing[d])
        else:
            pad = [(0, 0)] * grid.dims
            pad[d] = (1, 1)
            p = np.pad(c, pad)
            hi = [slice(None)] * grid.dims
            lo = [slice(None)] * grid.dims
            hi[d] = slice(2, None)
            lo[d] = slice(None, -2)
            out += (p[tuple(hi)] - p[tuple(lo)]) / (2 * grid.spacing[d])
    return out


def continuity_residual(psi_a: LabeledWavefunction, psi_b: LabeledWavefunction, h: HamiltonianSpec) -> float:
    """L2 norm of ``d rho/dt + div J`` at the midpoint of two consecutive snapshots."""
    dt = psi_b.time - psi_a.time
    if dt <= 0:
        raise ValueError("snapshots must be ordered in time")
    drho = (beable_density(psi_b).values - beable_density(psi_a).values) / dt
    jm = 0.5 * (current(psi_a, h).components + current(psi_b, h).components)
    r = drho + divergence(jm, h.grid)
    return float(np.sqrt(np.sum(r**2) * h.grid.cell_volume))


class VelocityCache:
    """Time-ordered velocity fields; stage times are interpolated linearly in between."""

    def __init__(self, grid: ConfigurationGrid, capacity: int | None = None):
        self.grid = grid
        self.capacity = capacity
        self._times: list[float] = []
        self._fields: list[np.ndarray] = []

    def push(self, v: VelocityField | np.ndarray, t: float | None = None) -> None:
        comps = v.components if isinstance(v, VelocityField) else np.asarray(v, float)
        t = v.time if t is None else t
        if self._times and t <= self._times[-1]:
            raise ValueError("velocity fields must be pushed in increasing time order")
        self._times.append(float(t))
        self._fields.append(comps)
        if self.capacity is not None and len(self._times) > self.capacity:
            self._times.pop(0)
            self._fields.pop(0)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self._times)

    def stack(self) -> np.ndarray:
        return np.stack(self._fields)

    def covers(self, t0: float, t1: float) -> bool:
        if not self._times:
            return False
        tol = 1e-12 * max(1.0, abs(t1))
        return self._times[0] <= t0 + tol and self._times[-1] >= t1 - tol


def step_trajectory(
    q: BeableConfiguration,
    velocities: VelocityCache,
    t: float,
    dt: float,
    backend: str | None = None,
) -> BeableConfiguration:
    """One RK4 step of ``dq/dt = v(q, t)`` from ``t`` to ``t + dt``."""
    if not velocities.covers(t, t + dt):
        raise TrajectoryError(f"velocity fields do not bracket [{t}, {t + dt}]")
    pos = np.array(q.coords, dtype=float).reshape(1, -1)
    active = np.ones(1, dtype=np.uint8)
    status = kernels.rk4_ensemble(pos, active, velocities.stack(), velocities.times, velocities.grid,
                                  t, dt, MAX_HALVINGS, 1, backend)
    if status[0] == 1:
        raise TrajectoryError(f"beable left the grid between t = {t} and t = {t + dt}")
    return BeableConfiguration(pos[0])


@dataclass
class EnsembleRun:
    times: np.ndarray
    positions: np.ndarray
    alive_until: np.ndarray
    aborted: list[int]
    psi: LabeledWavefunction
    abort_times: dict[int, float] = field(default_factory=dict)

    @property
    def final_positions(self) -> np.ndarray:
        return self.positions[-1]

    def trajectories(self) -> list[Trajectory]:
        out = []
        for i in range(self.positions.shape[1]):
            n = int(self.alive_until[i])
            aborted = i in self.abort_times
            out.append(Trajectory(self.times[:n], self.positions[:n, i], aborted,
                                  f"left the grid at t = {self.abort_times[i]:.6g}" if aborted else None))
        return out


def _starts_array(starts, grid: ConfigurationGrid) -> np.ndarray:
    if isinstance(starts, np.ndarray):
        arr = np.array(starts, dtype=float)
    else:
        arr = np.array([getattr(s, "coords", s) for s in starts], dtype=float)
    arr = arr.reshape(len(arr), -1)
    if arr.shape[1] != grid.dims:
        raise GridError(f"start configurations need {grid.dims} coordinates")
    return np.ascontiguousarray(grid.wrap(arr))


class EnsemblePropagator:
    """Evolve one wavefunction and integrate many beables against it in lockstep.

    Each trajectory step spans ``stride`` evolution steps; the velocity field
    is cached at every evolution step, so with the default stride of 2 the
    RK4 stage times fall exactly on cached fields.
    """

    def __init__(self, h: HamiltonianSpec, dt: float, stride: int = 2, threads: int = 1,
                 velocity_scale: float = 1.0, backend: str | None = None, node_eps: float = NODE_EPS):
        if stride < 1:
            raise ValueError("stride must be at least 1")
        self.h = h
        self.dt = float(dt)
        self.stride = int(stride)
        self.threads = int(threads)
        self.velocity_scale = float(velocity_scale)
        self.backend = backend
        self.node_eps = node_eps
        self.propagator = Propagator(h, dt)

    def velocity(self, psi: LabeledWavefunction) -> np.ndarray:
        v = guidance_velocity(psi, self.h, self.node_eps).components
        if self.velocity_scale != 1.0:
            v = v * self.velocity_scale
        return v

    def advance(self, psi: LabeledWavefunction, positions: np.ndarray, active: np.ndarray,
                nsteps: int, v_start: np.ndarray | None = None, step_offset: int = 0):
        """Advance by ``nsteps`` evolution steps (one trajectory step).

        Returns ``(psi, v_end, status)``; ``positions`` and ``active`` are updated in place.
        """
        cache = VelocityCache(self.h.grid)
        cache.push(self.velocity(psi) if v_start is None else v_start, psi.time)
        t0 = psi.time
        for k in range(nsteps):
            psi = self.propagator.run(psi, 1, start_step=step_offset + k)
            cache.push(self.velocity(psi), psi.time)
        status = kernels.rk4_ensemble(positions, active, cache.stack(), cache.times, self.h.grid,
                                      t0, psi.time - t0, MAX_HALVINGS, self.threads, self.backend)
        return psi, cache.stack()[-1], status


def propagate_ensemble(
    starts,
    psi0: LabeledWavefunction,
    h: HamiltonianSpec,
    dt: float,
    steps: int,
    stride: int = 2,
    record_every: int = 1,
    threads: int = 1,
    velocity_scale: float = 1.0,
    backend: str | None = None,
) -> EnsembleRun:
    """Evolve ``psi0`` for ``steps`` steps and carry every start configuration along.

    Trajectory samples are recorded every ``record_every`` trajectory steps.
    A beable that leaves the grid under reflecting walls is dropped from
    further integration; the others proceed.
    """
    _check_pair(psi0, h)
    pos = _starts_array(starts, h.grid)
    n = pos.shape[0]
    active = np.ones(n, dtype=np.uint8)
    prop = EnsemblePropagator(h, dt, stride, threads, velocity_scale, backend)
    times = [psi0.time]
    frames = [pos.copy()]
    alive_until = np.ones(n, dtype=np.int64)
    abort_times: dict[int, float] = {}
    psi = psi0
    v = None
    done = 0
    k = 0
    while done < steps:
        s = min(prop.stride, steps - done)
        t_before = psi.time
        psi, v, status = prop.advance(psi, pos, active, s, v, step_offset=done)
        done += s
        k += 1
        for i in np.flatnonzero(status == 1):
            abort_times[int(i)] = t_before
        if k % record_every == 0 or done == steps:
            times.append(psi.time)
            frames.append(pos.copy())
            alive_until[active.astype(bool)] = len(times)
    return EnsembleRun(np.asarray(times), np.stack(frames), alive_until, sorted(abort_times), psi, abort_times)


TRAJECTORY_CSV_HEADER = ["id", "t"]


def write_trajectory_csv(path, run: EnsembleRun, ids: Sequence[int] | None = None) -> None:
    import csv

    ids = range(run.positions.shape[1]) if ids is None else ids
    dims = run.positions.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_CSV_HEADER + [f"coord_{d}" for d in range(dims)])
        for i in ids:
            for r in range(int(run.alive_until[i])):
                w.writerow([i, repr(float(run.times[r]))] + [repr(float(c)) for c in run.positions[r, i]])

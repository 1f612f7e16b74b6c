"""Hamiltonians on labeled wavefunctions and their Strang-split evolution.

The Hamiltonian acting on ``Psi_f(q)`` is

    H = sum_d (metric_d / 2) (-i d_d - e A_d)^2 + sum_d c_fd (-i d_d)
        + V(q) + M_ff'(q)

with ``metric = 1/mass`` per coordinate, an optional vector potential ``A``,
per-label constant momentum couplings ``c_fd`` (label-dependent drifts of a
pointer coordinate) and a Hermitian label-coupling matrix ``M(q)`` that is a
constant plus terms linear in the coordinates plus an optional full field.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import ModeBasis
from .state import ConfigurationGrid, LabeledWavefunction, StateError, make_grid

SIGMA = (
    np.array([[0, 1], [1, 0]], dtype=np.complex128),
    np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    np.array([[1, 0], [0, -1]], dtype=np.complex128),
)


class HamiltonianError(ValueError):
    pass


class NumericalBlowup(FloatingPointError):
    def __init__(self, step: int, time: float):
        super().__init__(f"non-finite amplitudes produced at step {step} (t = {time:.6g})")
        self.step = step
        self.time = time


def _is_hermitian(m: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.all(np.abs(m - np.conj(np.swapaxes(m, -1, -2))) <= tol * max(1.0, np.max(np.abs(m), initial=0.0))))


@dataclass(frozen=True)
class HamiltonianSpec:
    grid: ConfigurationGrid
    labels: int
    mass: np.ndarray
    potential: np.ndarray
    charge: float = 1.0
    vector_potential: np.ndarray | None = None
    coupling_constant: np.ndarray | None = None
    coupling_linear: tuple[tuple[int, np.ndarray], ...] = ()
    coupling_field: np.ndarray | None = None
    label_drift: np.ndarray | None = None

    def __post_init__(self):
        g = self.grid
        mass = np.broadcast_to(np.asarray(self.mass, float), (g.dims,)).copy()
        if np.any(mass <= 0):
            raise HamiltonianError("masses must be positive")
        object.__setattr__(self, "mass", mass)
        pot = np.broadcast_to(np.asarray(self.potential, float), g.shape).copy()
        if not np.all(np.isfinite(pot)):
            raise HamiltonianError("potential contains non-finite values")
        object.__setattr__(self, "potential", pot)
        L = int(self.labels)
        if L < 1:
            raise HamiltonianError("need at least one label")
        if self.vector_potential is not None:
            a = np.asarray(self.vector_potential, float)
            if a.shape == (g.dims,):
                a = a.reshape((g.dims,) + (1,) * g.dims) * np.ones((1,) + g.shape)
            if a.shape != (g.dims,) + g.shape:
                raise HamiltonianError(f"vector potential must have shape {(g.dims,) + g.shape}")
            if not np.all(np.isfinite(a)):
                raise HamiltonianError("vector potential contains non-finite values")
            object.__setattr__(self, "vector_potential", a)
        c0 = np.zeros((L, L), complex) if self.coupling_constant is None else np.asarray(self.coupling_constant, complex)
        if c0.shape != (L, L) or not _is_hermitian(c0):
            raise HamiltonianError("constant label coupling must be a Hermitian LxL matrix")
        object.__setattr__(self, "coupling_constant", c0)
        lin = []
        for axis, gmat in self.coupling_linear:
            gmat = np.asarray(gmat, complex)
            if not 0 <= int(axis) < g.dims:
                raise HamiltonianError(f"coupling axis {axis} outside grid dimensions")
            if gmat.shape != (L, L) or not _is_hermitian(gmat):
                raise HamiltonianError("coupling matrices must be Hermitian LxL matrices")
            lin.append((int(axis), gmat))
        object.__setattr__(self, "coupling_linear", tuple(lin))
        if self.coupling_field is not None:
            cf = np.asarray(self.coupling_field, complex)
            if cf.shape != g.shape + (L, L):
                raise HamiltonianError(f"coupling field must have shape {g.shape + (L, L)}")
            if not _is_hermitian(cf):
                raise HamiltonianError("coupling field is not Hermitian at every node")
            object.__setattr__(self, "coupling_field", cf)
        drift = np.zeros((L, g.dims)) if self.label_drift is None else np.asarray(self.label_drift, float)
        if drift.shape != (L, g.dims):
            raise HamiltonianError(f"label drift must have shape {(L, g.dims)}")
        object.__setattr__(self, "label_drift", drift)

    @property
    def kinetic_metric(self) -> np.ndarray:
        return 1.0 / self.mass

    @property
    def uniform_vector_potential(self) -> np.ndarray | None:
        """The constant value of ``A`` if it does not vary over the grid."""
        a = self.vector_potential
        if a is None:
            return np.zeros(self.grid.dims)
        flat = a.reshape(self.grid.dims, -1)
        if np.all(flat == flat[:, :1]):
            return flat[:, 0].copy()
        return None

    @property
    def kinetic_scheme(self) -> str:
        if self.grid.periodic and self.uniform_vector_potential is not None:
            return "spectral"
        return "crank-nicolson"

    def label_coupling(self) -> np.ndarray:
        """Full coupling field of shape ``grid.shape + (L, L)``."""
        g = self.grid
        out = np.broadcast_to(self.coupling_constant, g.shape + self.coupling_constant.shape).copy()
        if self.coupling_linear:
            mesh = g.mesh()
            for axis, gmat in self.coupling_linear:
                out += mesh[axis][..., None, None] * gmat
        if self.coupling_field is not None:
            out += self.coupling_field
        return out

    def local_matrix(self) -> np.ndarray:
        """``V(q) I + M(q)`` at every node, shape ``grid.shape + (L, L)``."""
        m = self.label_coupling()
        idx = np.arange(self.labels)
        m[..., idx, idx] += self.potential[..., None]
        return m

    def is_label_diagonal(self) -> bool:
        off = ~np.eye(self.labels, dtype=bool)
        if np.any(self.coupling_constant[off] != 0):
            return False
        if any(np.any(gm[off] != 0) for _, gm in self.coupling_linear):
            return False
        if self.coupling_field is not None and np.any(self.coupling_field[..., off] != 0):
            return False
        return True


def _vector_field(value, grid: ConfigurationGrid, name: str) -> np.ndarray | None:
    if value is None:
        return None
    v = np.asarray(value, float)
    if v.shape == (3,):
        return v.reshape((3,) + (1,) * grid.dims) * np.ones((1,) + grid.shape)
    if v.shape == (3,) + grid.shape:
        return v
    raise HamiltonianError(f"{name} must be a 3-vector or an array of shape {(3,) + grid.shape}")


def build_pauli_hamiltonian(
    grid: ConfigurationGrid,
    A=None,
    V=None,
    B=None,
    mu: float = 1.0,
    e: float = 1.0,
    m: float = 1.0,
) -> HamiltonianSpec:
    """Spin-1/2 particle: ``-(1/2m)(grad - ieA)^2 + mu sigma.B + V``.

    Label 0 is the ``sigma_3 = +1`` component. Components of ``A`` transverse
    to a lower-dimensional grid enter only through ``e^2 A_perp^2 / 2m``.
    """
    if grid.dims > 3:
        raise HamiltonianError("the Pauli Hamiltonian needs a grid of dimension 1, 2 or 3")
    pot = np.zeros(grid.shape) if V is None else np.broadcast_to(np.asarray(V, float), grid.shape).copy()
    a3 = _vector_field(A, grid, "A")
    vec = None
    if a3 is not None:
        vec = a3[: grid.dims]
        if grid.dims < 3:
            pot = pot + e**2 * np.sum(a3[grid.dims :] ** 2, axis=0) / (2 * m)
    b3 = _vector_field(B, grid, "B")
    const = np.zeros((2, 2), complex)
    cfield = None
    if b3 is not None:
        flat = b3.reshape(3, -1)
        if np.all(flat == flat[:, :1]):
            const = mu * sum(flat[i, 0] * SIGMA[i] for i in range(3))
        else:
            cfield = mu * np.einsum("i...,iab->...ab", b3, np.stack(SIGMA))
    return HamiltonianSpec(
        grid=grid,
        labels=2,
        mass=m,
        potential=pot,
        charge=e,
        vector_potential=vec,
        coupling_constant=const,
        coupling_field=cfield,
    )


def default_mode_grid(modes: ModeBasis, points: int | None = None, width: float = 8.0) -> ConfigurationGrid:
    n = len(modes)
    if points is None:
        points = {1: 128, 2: 64, 3: 32}.get(n, 16)
    ext = [(-width / np.sqrt(w), width / np.sqrt(w), points) for w in modes.frequencies]
    return make_grid(ext)


def build_mode_field_hamiltonian(modes: ModeBasis, grid: ConfigurationGrid | None = None) -> HamiltonianSpec:
    """Independent unit-mass oscillators ``sum_j (p_j^2 + omega_j^2 q_j^2) / 2``."""
    if len(modes) == 0:
        raise HamiltonianError("mode basis is empty")
    if grid is None:
        grid = default_mode_grid(modes)
    if grid.dims != len(modes):
        raise HamiltonianError(f"grid has {grid.dims} coordinates but the basis has {len(modes)} modes")
    omega = modes.frequencies
    pot = sum(0.5 * omega[j] ** 2 * x**2 for j, x in enumerate(grid.mesh()))
    return HamiltonianSpec(grid=grid, labels=1, mass=1.0, potential=pot)


def build_coupled_hamiltonian(
    modes: ModeBasis,
    labels: int,
    coupling: Sequence[tuple[int, np.ndarray]],
    level_energies: Sequence[float],
    grid: ConfigurationGrid | None = None,
) -> HamiltonianSpec:
    """Mode oscillators plus a finite label sector.

    The label coupling is ``diag(level_energies) + sum_j q_j g_j``; constant
    Coulomb-like shifts belong in ``level_energies``.
    """
    base = build_mode_field_hamiltonian(modes, grid)
    levels = np.asarray(level_energies, float)
    if levels.shape != (labels,):
        raise HamiltonianError(f"need {labels} level energies, got {levels.shape}")
    for j, gmat in coupling:
        gmat = np.asarray(gmat, complex)
        if gmat.shape != (labels, labels) or not _is_hermitian(gmat):
            raise HamiltonianError(f"coupling matrix for mode {j} is not Hermitian {labels}x{labels}")
    return HamiltonianSpec(
        grid=base.grid,
        labels=labels,
        mass=1.0,
        potential=base.potential,
        coupling_constant=np.diag(levels).astype(complex),
        coupling_linear=tuple((int(j), np.asarray(g, complex)) for j, g in coupling),
    )


# ---------------------------------------------------------------------------
# kinetic operators


def _spectral_multiplier(h: HamiltonianSpec) -> np.ndarray:
    """Fourier-space kinetic multiplier per label, shape ``(L, *grid.shape)``."""
    g = h.grid
    a = h.uniform_vector_potential
    ks = np.meshgrid(*[g.wavenumbers(d) for d in range(g.dims)], indexing="ij")
    base = sum(0.5 * h.kinetic_metric[d] * (ks[d] - h.charge * a[d]) ** 2 for d in range(g.dims))
    out = np.empty((h.labels,) + g.shape)
    for f in range(h.labels):
        out[f] = base + sum(h.label_drift[f, d] * ks[d] for d in range(g.dims))
    return out


def _sparse_kinetic(h: HamiltonianSpec, label: int) -> sp.csr_matrix:
    """Finite-difference kinetic operator with Peierls link phases."""
    g = h.grid
    n_tot = g.size
    out = sp.csr_matrix((n_tot, n_tot), dtype=complex)
    a = h.vector_potential
    for d in range(g.dims):
        hd = g.spacing[d]
        nd = g.points[d]
        if a is None:
            theta = np.zeros(g.shape)
        else:
            ad = a[d]
            nxt = np.roll(ad, -1, axis=d)
            theta = h.charge * 0.5 * (ad + nxt) * hd
        link = np.exp(-1j * theta).reshape(-1)
        # build the shift on the flattened grid: psi(idx + e_d)
        idx = np.arange(n_tot).reshape(g.shape)
        nb = np.roll(idx, -1, axis=d).reshape(-1)
        valid = np.ones(n_tot, bool)
        if not g.periodic:
            last = np.zeros(g.shape, bool)
            sl = [slice(None)] * g.dims
            sl[d] = nd - 1
            last[tuple(sl)] = True
            valid = ~last.reshape(-1)
        rows = np.arange(n_tot)[valid]
        shift = sp.csr_matrix((link[valid], (rows, nb[valid])), shape=(n_tot, n_tot))
        lap = (shift + shift.getH() - 2.0 * sp.identity(n_tot, format="csr")) / hd**2
        out = out - 0.5 * h.kinetic_metric[d] * lap
        c = h.label_drift[label, d]
        if c != 0.0:
            plain = sp.csr_matrix((np.ones(valid.sum()), (rows, nb[valid])), shape=(n_tot, n_tot))
            deriv = (plain - plain.T) / (2 * hd)
            out = out + c * (-1j) * deriv
    return out.tocsc()


def _derivative(amps: np.ndarray, grid: ConfigurationGrid, axis: int) -> np.ndarray:
    """First derivative along grid axis ``axis`` of ``amps`` shaped ``(L, *grid)``."""
    ax = axis + 1
    if grid.periodic:
        n = grid.points[axis]
        k = grid.wavenumbers(axis)
        if n % 2 == 0:
            k = k.copy()
            k[n // 2] = 0.0
        shape = [1] * amps.ndim
        shape[ax] = n
        return np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(amps, axis=ax), axis=ax)
    pad = [(0, 0)] * amps.ndim
    pad[ax] = (1, 1)
    p = np.pad(amps, pad)
    hi = [slice(None)] * amps.ndim
    lo = [slice(None)] * amps.ndim
    hi[ax] = slice(2, None)
    lo[ax] = slice(None, -2)
    return (p[tuple(hi)] - p[tuple(lo)]) / (2 * grid.spacing[axis])


def apply_hamiltonian(psi: LabeledWavefunction, h: HamiltonianSpec) -> np.ndarray:
    _check_pair(psi, h)
    g = h.grid
    a = psi.amplitudes
    if h.kinetic_scheme == "spectral":
        axes = tuple(range(1, g.dims + 1))
        kin = np.fft.ifftn(_spectral_multiplier(h) * np.fft.fftn(a, axes=axes), axes=axes)
    else:
        kin = np.empty_like(a)
        for f in range(h.labels):
            kin[f] = (_sparse_kinetic(h, f) @ a[f].reshape(-1)).reshape(g.shape)
    local = np.einsum("...ab,b...->a...", h.local_matrix(), a)
    return kin + local


def _check_pair(psi: LabeledWavefunction, h: HamiltonianSpec) -> None:
    if psi.grid != h.grid:
        raise StateError("wavefunction and Hamiltonian live on different grids")
    if psi.labels != h.labels:
        raise StateError(f"wavefunction has {psi.labels} labels, Hamiltonian expects {h.labels}")


class Propagator:
    """One Strang step: half local exponential, full kinetic, half local.

    The operators are built once per (Hamiltonian, dt); ``step`` works on a
    private amplitude buffer.
    """

    def __init__(self, h: HamiltonianSpec, dt: float):
        if not dt > 0:
            raise HamiltonianError("dt must be positive")
        self.h = h
        self.dt = float(dt)
        g = h.grid
        bound = float(np.min(g.spacing**2 * h.mass))
        if dt >= bound:
            warnings.warn(
                f"dt = {dt:g} exceeds the stability guide spacing^2 * m = {bound:g}",
                RuntimeWarning,
                stacklevel=2,
            )
        m = h.local_matrix()
        if h.labels == 1:
            self._local = np.exp(-0.5j * dt * m[..., 0, 0])
            self._local_diag = True
        elif h.is_label_diagonal():
            d = np.diagonal(m, axis1=-2, axis2=-1).real
            self._local = np.moveaxis(np.exp(-0.5j * dt * d), -1, 0)
            self._local_diag = True
        else:
            w, v = np.linalg.eigh(m)
            phase = np.exp(-0.5j * dt * w)
            self._local = np.einsum("...ij,...j,...kj->...ik", v, phase, np.conj(v))
            self._local_diag = False
        self._scheme = h.kinetic_scheme
        self._axes = tuple(range(1, g.dims + 1))
        if self._scheme == "spectral":
            self._kinetic = np.exp(-1j * dt * _spectral_multiplier(h))
        else:
            self._cn = []
            eye = sp.identity(g.size, format="csc", dtype=complex)
            for f in range(h.labels):
                k = _sparse_kinetic(h, f)
                self._cn.append((splu((eye + 0.5j * dt * k).tocsc()), (eye - 0.5j * dt * k).tocsr()))

    def _apply_local(self, a: np.ndarray) -> np.ndarray:
        if self._local_diag:
            return self._local * a
        return np.einsum("...ab,b...->a...", self._local, a)

    def _apply_kinetic(self, a: np.ndarray) -> np.ndarray:
        if self._scheme == "spectral":
            return np.fft.ifftn(self._kinetic * np.fft.fftn(a, axes=self._axes), axes=self._axes)
        out = np.empty_like(a)
        shape = self.h.grid.shape
        for f, (lu, rhs) in enumerate(self._cn):
            out[f] = lu.solve(rhs @ a[f].reshape(-1)).reshape(shape)
        return out

    def step_amplitudes(self, a: np.ndarray) -> np.ndarray:
        a = self._apply_local(a)
        a = self._apply_kinetic(a)
        return self._apply_local(a)

    def run(self, psi: LabeledWavefunction, steps: int, start_step: int = 0) -> LabeledWavefunction:
        _check_pair(psi, self.h)
        a = np.array(psi.amplitudes)
        for n in range(steps):
            a = self.step_amplitudes(a)
            if not np.all(np.isfinite(a)):
                raise NumericalBlowup(start_step + n + 1, psi.time + (n + 1) * self.dt)
        return LabeledWavefunction(psi.grid, a, psi.time + steps * self.dt)


def evolve(psi: LabeledWavefunction, h: HamiltonianSpec, dt: float, steps: int) -> LabeledWavefunction:
    """Advance ``psi`` by ``steps`` Strang steps of size ``dt``."""
    if steps < 0:
        raise HamiltonianError("steps must be non-negative")
    return Propagator(h, dt).run(psi, int(steps))


def expectation(psi: LabeledWavefunction, obs, hamiltonian: HamiltonianSpec | None = None, axis: int = 0) -> float:
    """Expectation value of a Hermitian observable.

    ``obs`` is one of ``"identity"``, ``"position"``, ``"position2"``,
    ``"momentum"``, ``"momentum2"``, ``"energy"`` (needs ``hamiltonian``), an
    ``(L, L)`` Hermitian label matrix, or a real function sampled on the grid.
    """
    g = psi.grid
    a = psi.amplitudes
    cell = g.cell_volume
    if isinstance(obs, str):
        if obs in ("identity", "norm"):
            val = complex(np.vdot(a, a))
        elif obs in ("position", "position2"):
            x = g.mesh()[axis]
            if obs == "position2":
                x = x**2
            val = complex(np.sum((np.abs(a) ** 2) * x[None]))
        elif obs == "momentum":
            val = complex(np.vdot(a, -1j * _derivative(a, g, axis)))
        elif obs == "momentum2":
            val = complex(np.vdot(_derivative(a, g, axis), _derivative(a, g, axis)))
        elif obs == "energy":
            if hamiltonian is None:
                raise StateError("energy expectation needs a Hamiltonian")
            val = complex(np.vdot(a, apply_hamiltonian(psi, hamiltonian)))
        else:
            raise StateError(f"unknown observable {obs!r}")
    else:
        o = np.asarray(obs)
        if o.shape == (psi.labels, psi.labels):
            if not _is_hermitian(o.astype(complex)):
                raise StateError("label observable is not Hermitian")
            val = complex(np.vdot(a, np.einsum("ab,b...->a...", o, a)))
        elif o.shape == g.shape:
            if np.iscomplexobj(o) and np.any(o.imag != 0):
                raise StateError("grid observable must be real")
            val = complex(np.sum(np.abs(a) ** 2 * o.real[None]))
        else:
            raise StateError(f"observable of shape {o.shape} does not fit the state")
    val *= cell
    if abs(val.imag) > 1e-9 * max(1.0, abs(val.real)):
        raise StateError(f"observable expectation has imaginary part {val.imag:.3g}")
    return float(val.real)


def label_populations(psi: LabeledWavefunction) -> np.ndarray:
    return psi.label_weights()


STATIONARY_MAX_SIZE = 4096


def stationary_state(h: HamiltonianSpec, dt: float, guess: LabeledWavefunction) -> LabeledWavefunction:
    """Eigenvector of the one-step propagator closest to ``guess``.

    A continuum eigenstate is stationary only up to the O(dt^2) splitting
    error; this state is stationary under the discrete evolution to roundoff.
    The global phase is fixed so the largest amplitude is real and positive.
    """
    _check_pair(guess, h)
    n = guess.amplitudes.size
    if n > STATIONARY_MAX_SIZE:
        raise HamiltonianError(f"stationary_state builds a dense {n}x{n} propagator; limit is {STATIONARY_MAX_SIZE}")
    prop = Propagator(h, dt)
    shape = guess.amplitudes.shape
    u = np.empty((n, n), complex)
    for c in range(n):
        e = np.zeros(n, complex)
        e[c] = 1.0
        u[:, c] = prop.step_amplitudes(e.reshape(shape)).reshape(-1)
    _, vecs = np.linalg.eig(u)
    g = guess.amplitudes.reshape(-1)
    best = vecs[:, int(np.argmax(np.abs(np.conj(vecs).T @ g)))]
    best = best * np.exp(-1j * np.angle(best[int(np.argmax(np.abs(best)))]))
    if np.max(np.abs(best.imag)) < 1e-8 * np.max(np.abs(best)):
        # symmetric propagators have real eigenvectors; drop the eig roundoff
        best = best.real.astype(complex)
    best = best * np.sqrt(guess.norm2() / (np.sum(np.abs(best) ** 2) * h.grid.cell_volume))
    return guess.replace(best.reshape(shape))

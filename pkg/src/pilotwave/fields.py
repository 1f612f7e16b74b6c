"""Truncated transversal mode basis and physical-space field reconstruction.

Each retained wave vector ``k`` contributes up to four real coordinates: two
transversal polarizations times a cosine and a sine standing wave. With box
volume ``V`` the mode functions ``sqrt(2/V) * eps * trig(k.x)`` are orthonormal,
so the field energy is exactly ``sum_j (p_j**2 + omega_j**2 q_j**2) / 2`` in
unit-mass coordinates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PARITIES = ("cos", "sin")
_ZHAT = np.array([0.0, 0.0, 1.0])


class ModeError(ValueError):
    pass


@dataclass(frozen=True)
class Mode:
    k: np.ndarray
    polarization: int
    eps: np.ndarray
    parity: str

    @property
    def omega(self) -> float:
        return float(np.linalg.norm(self.k))


@dataclass(frozen=True)
class ModeBasis:
    modes: tuple[Mode, ...]
    volume: float = 1.0

    @property
    def normalization(self) -> float:
        return float(np.sqrt(2.0 / self.volume))

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([m.omega for m in self.modes])

    @property
    def wavevectors(self) -> np.ndarray:
        return np.array([m.k for m in self.modes]).reshape(-1, 3)

    @property
    def polarization_vectors(self) -> np.ndarray:
        return np.array([m.eps for m in self.modes]).reshape(-1, 3)

    @property
    def parities(self) -> list[str]:
        return [m.parity for m in self.modes]

    def __len__(self) -> int:
        return len(self.modes)

    def select(self, indices: Sequence[int]) -> "ModeBasis":
        return ModeBasis(tuple(self.modes[i] for i in indices), self.volume)

    def to_dict(self) -> dict:
        return {
            "volume": self.volume,
            "normalization": self.normalization,
            "modes": [
                {"k": m.k.tolist(), "polarization": m.polarization, "eps": m.eps.tolist(), "parity": m.parity}
                for m in self.modes
            ],
        }


def canonical_polarizations(k) -> tuple[np.ndarray, np.ndarray]:
    k = np.asarray(k, dtype=float)
    kn = np.linalg.norm(k)
    if kn == 0.0:
        raise ModeError("k = 0 has no transversal polarizations")
    c = np.cross(k, _ZHAT)
    if np.linalg.norm(c) <= 1e-12 * kn:
        return np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    e1 = c / np.linalg.norm(c)
    e2 = np.cross(k, e1)
    return e1, e2 / np.linalg.norm(e2)


def build_mode_basis(
    k_list: Sequence[Sequence[float]],
    polarizations: Sequence[int] = (1, 2),
    parities: Sequence[str] = PARITIES,
    volume: float = 1.0,
) -> ModeBasis:
    """Expand wave vectors into real transversal modes.

    Ordering is wave vector, then polarization, then parity. Only one
    representative of each ``+-k`` pair may appear.
    """
    ks = [np.asarray(k, dtype=float).reshape(3) for k in k_list]
    if not ks:
        raise ModeError("at least one wave vector is required")
    if volume <= 0:
        raise ModeError("box volume must be positive")
    for p in parities:
        if p not in PARITIES:
            raise ModeError(f"unknown parity {p!r}")
    for l in polarizations:
        if l not in (1, 2):
            raise ModeError(f"polarization index must be 1 or 2, got {l}")
    for i, k in enumerate(ks):
        if np.linalg.norm(k) == 0.0:
            raise ModeError(f"wave vector {i} is zero; zero-frequency transversal modes are undefined")
        for j in range(i):
            scale = 1e-12 * max(1.0, np.linalg.norm(k))
            if np.linalg.norm(k - ks[j]) <= scale or np.linalg.norm(k + ks[j]) <= scale:
                raise ModeError(f"wave vectors {j} and {i} form a duplicate +-k pair")
    modes = []
    for k in ks:
        e = canonical_polarizations(k)
        for l in polarizations:
            for p in parities:
                modes.append(Mode(k.copy(), int(l), e[l - 1].copy(), p))
    return ModeBasis(tuple(modes), float(volume))


def rotate_polarizations(basis: ModeBasis, k_index: int, angle: float) -> ModeBasis:
    """Rotate the polarization pair of one wave vector within its transversal plane."""
    ks = []
    for m in basis.modes:
        if not any(np.array_equal(m.k, k) for k in ks):
            ks.append(m.k)
    target = ks[k_index]
    c, s = np.cos(angle), np.sin(angle)
    e1, e2 = canonical_polarizations(target)
    current = {}
    for m in basis.modes:
        if np.array_equal(m.k, target):
            current[m.polarization] = m.eps
    e1 = current.get(1, e1)
    e2 = current.get(2, e2)
    new = {1: c * e1 + s * e2, 2: -s * e1 + c * e2}
    modes = tuple(
        Mode(m.k, m.polarization, new[m.polarization], m.parity) if np.array_equal(m.k, target) else m
        for m in basis.modes
    )
    return ModeBasis(modes, basis.volume)


def rotate_coordinates(basis: ModeBasis, q, k_index: int, angle: float) -> np.ndarray:
    """Mode coordinates transformed so that fields are unchanged by ``rotate_polarizations``."""
    q = np.array(q, dtype=float, copy=True)
    ks = []
    for m in basis.modes:
        if not any(np.array_equal(m.k, k) for k in ks):
            ks.append(m.k)
    target = ks[k_index]
    c, s = np.cos(angle), np.sin(angle)
    for parity in PARITIES:
        idx = {
            m.polarization: j
            for j, m in enumerate(basis.modes)
            if np.array_equal(m.k, target) and m.parity == parity
        }
        if 1 in idx and 2 in idx:
            q1, q2 = q[..., idx[1]].copy(), q[..., idx[2]].copy()
            q[..., idx[1]] = c * q1 + s * q2
            q[..., idx[2]] = -s * q1 + c * q2
    return q


@dataclass
class FieldSamples:
    x: np.ndarray
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    E: np.ndarray | None = None
    t: float | None = None
    accuracy_downgraded: bool = False


def _check_q(q, basis: ModeBasis) -> np.ndarray:
    q = np.asarray(getattr(q, "coords", q), dtype=float)
    if q.shape != (len(basis),):
        raise ModeError(f"expected {len(basis)} mode coordinates, got shape {q.shape}")
    return q


def _trig(basis: ModeBasis, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[-1] != 3:
        raise ModeError("sample points must be 3-vectors")
    phase = x @ basis.wavevectors.T
    is_cos = np.array([p == "cos" for p in basis.parities])
    value = np.where(is_cos, np.cos(phase), np.sin(phase))
    # d/d(phase) of value: cos -> -sin, sin -> cos
    slope = np.where(is_cos, -np.sin(phase), np.cos(phase))
    return x, value, slope


def _a_field(coeffs: np.ndarray, basis: ModeBasis, points) -> tuple[np.ndarray, np.ndarray]:
    x, value, _ = _trig(basis, points)
    return x, basis.normalization * (value * coeffs) @ basis.polarization_vectors


def _b_field(coeffs: np.ndarray, basis: ModeBasis, points) -> np.ndarray:
    _, _, slope = _trig(basis, points)
    kxe = np.cross(basis.wavevectors, basis.polarization_vectors)
    return basis.normalization * (slope * coeffs) @ kxe


def reconstruct_A(q, modes: ModeBasis, points) -> FieldSamples:
    q = _check_q(q, modes)
    x, a = _a_field(q, modes, points)
    return FieldSamples(x=x, A=a)


def reconstruct_B(q, modes: ModeBasis, points) -> FieldSamples:
    """Analytic curl of the reconstructed vector potential."""
    q = _check_q(q, modes)
    x = np.atleast_2d(np.asarray(points, dtype=float))
    return FieldSamples(x=x, B=_b_field(q, modes, points))


def trajectory_velocity(times, points, t: float) -> tuple[np.ndarray, bool]:
    """Finite-difference time derivative of a sampled trajectory at ``t``.

    Centered at interior samples; one-sided (and flagged) at the ends.
    """
    times = np.asarray(times, dtype=float)
    pts = np.asarray(points, dtype=float)
    if len(times) < 2:
        raise ModeError("a trajectory needs at least two samples to differentiate")
    span = times[-1] - times[0]
    tol = 1e-9 * max(abs(span), 1.0)
    if t < times[0] - tol or t > times[-1] + tol:
        raise ModeError(f"t = {t} lies outside the trajectory's time range")
    i = int(np.argmin(np.abs(times - t)))
    if abs(times[i] - t) <= tol:
        if 0 < i < len(times) - 1:
            return (pts[i + 1] - pts[i - 1]) / (times[i + 1] - times[i - 1]), False
        j = 1 if i == 0 else len(times) - 2
        lo, hi = min(i, j), max(i, j)
        return (pts[hi] - pts[lo]) / (times[hi] - times[lo]), True
    hi = int(np.searchsorted(times, t))
    lo = hi - 1
    return (pts[hi] - pts[lo]) / (times[hi] - times[lo]), False


def reconstruct_E(trajectory, modes: ModeBasis, points, t: float) -> FieldSamples:
    """Transversal electric field ``-dA/dt`` along a beable trajectory."""
    qdot, downgraded = trajectory_velocity(trajectory.times, trajectory.points, t)
    qdot = _check_q(qdot, modes)
    x, a = _a_field(qdot, modes, points)
    return FieldSamples(x=x, E=-a, t=float(t), accuracy_downgraded=downgraded)


def reconstruct_fields(q, modes: ModeBasis, points, qdot=None, t=None) -> FieldSamples:
    q = _check_q(q, modes)
    x, a = _a_field(q, modes, points)
    b = _b_field(q, modes, points)
    e = None if qdot is None else -_a_field(_check_q(qdot, modes), modes, points)[1]
    return FieldSamples(x=x, A=a, B=b, E=e, t=t)


def curl_of_E_coefficients(p, modes: ModeBasis, points) -> np.ndarray:
    """Curl of ``E = -Pi`` where ``Pi`` has mode coefficients ``p``."""
    return -_b_field(np.asarray(p, float), modes, points)


def ehrenfest_residual(history, hamiltonian, modes: ModeBasis, points, t: float) -> float:
    """Max-norm over ``points`` of ``d<B>/dt + curl <E>`` at time ``t``.

    ``<B>`` comes from the mode-coordinate means ``<q_j>`` of each snapshot and
    ``<E> = -<Pi>`` from the conjugate-momentum means ``<p_j>``.
    """
    from .dynamics import expectation

    if len(history) < 3:
        raise ModeError("the Ehrenfest residual needs at least three snapshots")
    times = np.array([s.time for s in history])
    if np.any(np.diff(times) <= 0):
        raise ModeError("snapshots must be ordered in time")
    n = len(modes)
    if history[0].grid.dims != n:
        raise ModeError("wavefunction grid dimension does not match the mode count")
    i = int(np.argmin(np.abs(times - t)))
    i = min(max(i, 1), len(history) - 2)
    qm = [np.array([expectation(history[j], "position", axis=d) for d in range(n)]) for j in (i - 1, i + 1)]
    pm = np.array([expectation(history[i], "momentum", axis=d) for d in range(n)])
    dqdt = (qm[1] - qm[0]) / (times[i + 1] - times[i - 1])
    db_dt = _b_field(dqdt, modes, points)
    curl_e = curl_of_E_coefficients(pm, modes, points)
    return float(np.max(np.abs(db_dt + curl_e)))


FIELD_CSV_COLUMNS = ["t", "x", "y", "z", "Ax", "Ay", "Az", "Bx", "By", "Bz", "Ex", "Ey", "Ez"]


def write_field_csv(path, samples: Sequence[FieldSamples]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIELD_CSV_COLUMNS)
        for s in samples:
            n = len(s.x)
            zeros = np.zeros((n, 3))
            cols = [s.A, s.B, s.E]
            cols = [zeros if c is None else c for c in cols]
            for r in range(n):
                row = [s.t if s.t is not None else 0.0, *s.x[r], *cols[0][r], *cols[1][r], *cols[2][r]]
                w.writerow([repr(float(v)) for v in row])

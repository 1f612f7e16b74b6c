"""Scenario orchestration: build the model, evolve, integrate beables, analyse, emit.

A run is a loop over trajectory steps of ``trajectory_stride`` evolution
steps each. Its whole mutable state lives in ``SimulationState`` so that a
checkpoint taken at any trajectory-step boundary can be resumed with results
identical to an uninterrupted run.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from . import __version__
from .checkpoint import checkpoint as write_checkpoint
from .collapse import (
    MeasurementScenario,
    build_measurement_scenario,
    classify_points,
    overlap_series,
    report_from_series,
    write_reports,
)
from .config import FIELD_KINDS, ScenarioConfig, as_complex
from .dynamics import (
    HamiltonianSpec,
    NumericalBlowup,
    Propagator,
    build_coupled_hamiltonian,
    build_mode_field_hamiltonian,
    build_pauli_hamiltonian,
    default_mode_grid,
    expectation,
    stationary_state,
)
from .ensemble import born_fraction, equivariance_test, sample_equilibrium, write_ensemble_csv, write_fit_report
from .fields import ModeBasis, build_mode_basis, reconstruct_fields, trajectory_velocity, write_field_csv, ehrenfest_residual
from .guidance import EnsemblePropagator, guidance_velocity
from .kernels import interp_field
from .state import LabeledWavefunction, from_labels, gaussian_packet, make_grid, normalize, beable_density

log = logging.getLogger(__name__)

EXIT_OK, EXIT_ASSERTION, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class Setup:
    """Everything a run derives from its configuration."""

    config: ScenarioConfig
    h: HamiltonianSpec
    psi0: LabeledWavefunction
    modes: ModeBasis | None = None
    measurement: MeasurementScenario | None = None
    analytic: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def _vec(v, n: int, default: float) -> np.ndarray:
    if v is None:
        return np.full(n, float(default))
    return np.broadcast_to(np.asarray(v, float), (n,)).copy()


def _potential(ham: dict, grid, mass) -> np.ndarray | float:
    pot = ham.get("potential", {"type": "none"})
    if pot["type"] == "none":
        return 0.0
    omega = _vec(pot.get("omega"), grid.dims, 1.0)
    center = _vec(pot.get("center"), grid.dims, 0.0)
    m = _vec(mass, grid.dims, 1.0)
    return sum(0.5 * m[d] * omega[d] ** 2 * (x - center[d]) ** 2 for d, x in enumerate(grid.mesh()))


def _label_amps(spec: dict, labels: int) -> np.ndarray:
    la = spec.get("label_amplitudes")
    if la is None:
        c = np.zeros(labels, complex)
        c[0] = 1.0
        return c
    return np.array([as_complex(v) for v in la])


def _packet_state(grid, spec: dict, labels: int) -> LabeledWavefunction:
    phi = gaussian_packet(grid, spec["center"], spec.get("width", 1.0), spec.get("momentum", 0.0))
    return from_labels(grid, phi, _label_amps(spec, labels))


def _initial_state(cfg: ScenarioConfig, grid, h: HamiltonianSpec, modes: ModeBasis | None, analytic: dict):
    init = cfg.section("initial_state")
    t = init["type"]
    L = h.labels
    if t == "gaussian":
        psi = _packet_state(grid, init, L)
        if cfg.kind == "free_particle" and cfg.section("hamiltonian")["potential"]["type"] == "none":
            analytic["free_gaussian"] = {
                "center": _vec(init["center"], grid.dims, 0.0),
                "width": _vec(init.get("width"), grid.dims, 1.0),
                "momentum": _vec(init.get("momentum"), grid.dims, 0.0),
                "mass": h.mass.copy(),
            }
    elif t == "superposition":
        amps = np.zeros((L,) + grid.shape, complex)
        for comp in init["components"]:
            amps += as_complex(comp.get("weight", 1.0)) * _packet_state(grid, comp, L).amplitudes
        psi = LabeledWavefunction(grid, amps)
    else:
        omega = modes.frequencies
        q0 = _vec(init.get("displacement"), len(modes), 0.0) if t == "coherent" else np.zeros(len(modes))
        p0 = _vec(init.get("momentum"), len(modes), 0.0) if t == "coherent" else np.zeros(len(modes))
        phi = gaussian_packet(grid, q0, 1.0 / np.sqrt(2.0 * omega), p0)
        psi = from_labels(grid, phi, _label_amps(init, L))
        if t == "coherent" and cfg.kind == "free_field_modes":
            analytic["coherent"] = {"displacement": q0, "momentum": p0, "omega": omega}
        elif t == "ground" and cfg.kind == "free_field_modes":
            analytic["stationary"] = True
    psi = normalize(psi)
    if t == "ground" and init.get("stationary", True):
        psi = stationary_state(h, cfg.section("run")["dt"], psi)
    return psi


def build_setup(cfg: ScenarioConfig) -> Setup:
    ham = cfg.section("hamiltonian")
    run = cfg.section("run")
    g = cfg.section("grid")
    analytic: dict = {}
    notes: list[str] = []
    modes = None
    meas = None
    grid = make_grid(g["extents"], g["boundary"]) if "extents" in g else None
    if cfg.kind in FIELD_KINDS:
        m = cfg.section("modes")
        modes = build_mode_basis(m["k"], m.get("polarizations", (1, 2)), m.get("parities", ("cos", "sin")), m.get("volume", 1.0))
        if grid is None:
            grid = default_mode_grid(modes, g.get("points"), g.get("width", 8.0))
    if cfg.kind == "free_particle":
        h = HamiltonianSpec(grid=grid, labels=ham.get("labels", 1), mass=ham["mass"], potential=_potential(ham, grid, ham["mass"]))
    elif cfg.kind == "pauli_spin":
        h = build_pauli_hamiltonian(
            grid,
            A=ham.get("vector_potential"),
            V=_potential(ham, grid, ham["mass"]),
            B=ham.get("magnetic_field"),
            mu=ham["magnetic_moment"],
            e=ham["charge"],
            m=ham["mass"],
        )
        if h.coupling_field is None:
            analytic["spin"] = {"matrix": h.coupling_constant.copy()}
    elif cfg.kind == "free_field_modes":
        h = build_mode_field_hamiltonian(modes, grid)
    elif cfg.kind == "coupled_qed_toy":
        levels = ham["level_energies"]
        couplings = [(c["mode"], np.array([[as_complex(v) for v in row] for row in c["matrix"]])) for c in ham.get("couplings", [])]
        h = build_coupled_hamiltonian(modes, len(levels), couplings, levels, grid)
    else:
        mm = cfg.section("measurement")
        amps = None if "amplitudes" not in mm else [as_complex(v) for v in mm["amplitudes"]]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            meas = build_measurement_scenario(
                mm["levels"], grid, mm["coupling"], run["dt"] * run["steps"], amps, mm["width"], mm["mass"], mm["center"]
            )
        notes.extend(meas.warnings)
        return Setup(cfg, meas.hamiltonian, meas.psi0, None, meas, analytic, notes)
    psi0 = _initial_state(cfg, grid, h, modes, analytic)
    return Setup(cfg, h, psi0, modes, meas, analytic, notes)


# ---------------------------------------------------------------------------
# run state


SERIES_KEYS = ("step", "t", "norm", "energy", "populations", "max_speed", "overlap", "tracking_error")


@dataclass
class SimulationState:
    config: dict
    step: int
    psi: LabeledWavefunction
    positions: np.ndarray
    active: np.ndarray
    initial_positions: np.ndarray
    rng_state: dict | None
    n_tracked: int
    frame_times: list = field(default_factory=list)
    frames: list = field(default_factory=list)
    series: dict = field(default_factory=lambda: {k: [] for k in SERIES_KEYS})
    collapse: dict = field(default_factory=lambda: {"branch": [], "v_total": [], "v_branches": []})
    abort_times: dict = field(default_factory=dict)
    chunks: int = 0

    def to_sections(self) -> dict:
        d = {
            "code_version": __version__,
            "config": self.config,
            "step": np.array([self.step, self.chunks], dtype=np.int64),
            "psi.grid": self.psi.grid.to_dict(),
            "psi.time": np.array([self.psi.time]),
            "psi.amplitudes": np.asarray(self.psi.amplitudes),
            "ensemble.positions": self.positions,
            "ensemble.active": self.active.astype(np.uint8),
            "ensemble.initial": self.initial_positions,
            "ensemble.tracked": np.array([self.n_tracked], dtype=np.int64),
            "rng": self.rng_state,
            "frames.times": np.asarray(self.frame_times, float),
            "frames.positions": np.asarray(self.frames, float).reshape(len(self.frames), self.n_tracked, -1),
            "series": self.series,
            "collapse.branch": np.asarray(self.collapse["branch"], np.int64),
            "collapse.v_total": np.asarray(self.collapse["v_total"], float),
            "collapse.v_branches": np.asarray(self.collapse["v_branches"], float),
            "aborts": {str(k): v for k, v in self.abort_times.items()},
        }
        return d

    @classmethod
    def from_sections(cls, s: dict) -> "SimulationState":
        from .checkpoint import _wavefunction_from

        psi = _wavefunction_from(s)
        step, chunks = (int(v) for v in s["step"])
        n_tracked = int(s["ensemble.tracked"][0])
        return cls(
            config=s["config"],
            step=step,
            psi=psi,
            positions=np.ascontiguousarray(s["ensemble.positions"]),
            active=np.ascontiguousarray(s["ensemble.active"], dtype=np.uint8),
            initial_positions=s["ensemble.initial"],
            rng_state=s["rng"],
            n_tracked=n_tracked,
            frame_times=[float(t) for t in s["frames.times"]],
            frames=[f for f in s["frames.positions"]],
            series=s["series"],
            collapse={
                "branch": [row for row in s["collapse.branch"]],
                "v_total": [row for row in s["collapse.v_total"]],
                "v_branches": [row for row in s["collapse.v_branches"]],
            },
            abort_times={int(k): v for k, v in s["aborts"].items()},
            chunks=chunks,
        )


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    started: str
    finished: str
    files: list[str]
    metrics: dict
    assertions: dict
    status: str
    exit_code: int
    failure: dict | None = None
    scenario: str = ""
    kind: str = ""

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "kind": self.kind,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "started": self.started,
            "finished": self.finished,
            "files": self.files,
            "metrics": self.metrics,
            "assertions": self.assertions,
            "status": self.status,
            "exit_code": self.exit_code,
            "failure": self.failure,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RunManifest":
        return cls(
            d["config_hash"], d["code_version"], d["started"], d["finished"], d["files"], d["metrics"],
            d["assertions"], d["status"], d["exit_code"], d.get("failure"), d.get("scenario", ""), d.get("kind", ""),
        )


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _clean(v):
    """JSON-safe metrics: numpy to Python, non-finite floats to strings."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


class Simulation:
    """One scenario run; drive it with ``run()`` or ``resume()``."""

    def __init__(self, config: ScenarioConfig, threads: int = 1, backend: str | None = None):
        self.config = config
        self.threads = int(threads)
        self.backend = backend
        self.setup = build_setup(config)
        run = config.section("run")
        self.dt = float(run["dt"])
        self.steps = int(run["steps"])
        self.stride = int(run["trajectory_stride"])
        self.snapshot_stride = int(run["snapshot_stride"])
        self.checkpoint_every = run.get("checkpoint_every")
        ens = config.section("ensemble")
        self.velocity_scale = float(ens.get("velocity_scale", 1.0))
        self.record_every = int(ens.get("record_every", 1))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            self.prop = EnsemblePropagator(self.setup.h, self.dt, self.stride, self.threads, self.velocity_scale, backend)
        self.out = Path(config.section("output")["directory"])
        self.formats = set(config.section("output")["formats"])
        self.state: SimulationState | None = None
        self._v = None

    # -- initialisation -----------------------------------------------------

    def initial_state(self) -> SimulationState:
        psi = self.setup.psi0
        dims = psi.grid.dims
        rng_state = None
        if self.config.has_ensemble:
            ens = self.config.section("ensemble")
            method = None if ens["method"] == "auto" else ens["method"]
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", RuntimeWarning)
                sample = sample_equilibrium(beable_density(psi), ens["n"], ens["seed"], method)
            self.setup.warnings.extend(str(w.message) for w in caught)
            pos = np.ascontiguousarray(sample.points, dtype=float)
            rng = np.random.default_rng(ens["seed"])
            rng_state = rng.bit_generator.state
            n_tracked = min(len(pos), max(ens["write_trajectories"], self.config.section("collapse")["track"] if self.setup.measurement else 0, 1))
        else:
            pos = np.zeros((0, dims))
            n_tracked = 0
        st = SimulationState(
            config=self.config.data,
            step=0,
            psi=psi,
            positions=pos,
            active=np.ones(len(pos), dtype=np.uint8),
            initial_positions=pos.copy(),
            rng_state=rng_state,
            n_tracked=n_tracked,
        )
        self._record_frame(st)
        self._v = self.prop.velocity(psi)
        self._snapshot(st)
        return st

    # -- per-step bookkeeping -------------------------------------------------

    def _record_frame(self, st: SimulationState) -> None:
        if st.n_tracked:
            st.frame_times.append(float(st.psi.time))
            st.frames.append(st.positions[: st.n_tracked].copy())

    def _snapshot(self, st: SimulationState) -> None:
        psi, h = st.psi, self.setup.h
        s = st.series
        s["step"].append(int(st.step))
        s["t"].append(float(psi.time))
        s["norm"].append(float(psi.norm2()))
        s["energy"].append(expectation(psi, "energy", h))
        s["populations"].append([float(w) for w in psi.label_weights()])
        live = st.active.astype(bool)
        speed = 0.0
        if np.any(live):
            v = interp_field(self._v, psi.grid, st.positions[live], self.backend)
            speed = float(np.max(np.linalg.norm(v, axis=1)))
        s["max_speed"].append(speed)
        coh = self.setup.analytic.get("coherent")
        if coh is not None and np.any(live):
            shift = self._classical(coh, psi.time) - self._classical(coh, 0.0)
            err = st.positions[live] - st.initial_positions[live] - shift
            s["tracking_error"].append(float(np.max(np.abs(err))))
        if self.setup.measurement is not None:
            dec = self.setup.measurement.branches(psi)
            s["overlap"].append(float(overlap_series([dec])[0]))
            k = st.n_tracked
            if k:
                pts = st.positions[:k]
                idx, _, unc = classify_points(pts, dec)
                st.collapse["branch"].append(np.where(unc, -1, idx).astype(np.int64))
                st.collapse["v_total"].append(interp_field(self._v, psi.grid, pts, self.backend))
                vb = [guidance_velocity(b, h).at(pts, self.backend) if w > 0 else np.zeros_like(pts)
                      for b, w in zip(dec.branches, dec.weights)]
                st.collapse["v_branches"].append(np.stack(vb))

    @staticmethod
    def _classical(coh: dict, t: float) -> np.ndarray:
        w = coh["omega"]
        return coh["displacement"] * np.cos(w * t) + coh["momentum"] / w * np.sin(w * t)

    # -- main loop ------------------------------------------------------------

    def advance(self, st: SimulationState, until: int | None = None, on_checkpoint=None) -> SimulationState:
        until = self.steps if until is None else min(until, self.steps)
        if self._v is None:
            self._v = self.prop.velocity(st.psi)
        while st.step < until:
            s = min(self.stride, self.steps - st.step)
            before = st.step
            t_before = st.psi.time
            psi, v, status = self.prop.advance(st.psi, st.positions, st.active, s, self._v, step_offset=before)
            st.psi, self._v = psi, v
            st.step += s
            st.chunks += 1
            for i in np.flatnonzero(status == 1):
                st.abort_times[int(i)] = float(t_before)
            if st.chunks % self.record_every == 0 or st.step == self.steps:
                self._record_frame(st)
            if st.step // self.snapshot_stride > before // self.snapshot_stride or st.step == self.steps:
                self._snapshot(st)
            ce = self.checkpoint_every
            if ce and st.step // ce > before // ce and st.step < self.steps and on_checkpoint is not None:
                on_checkpoint(st)
        return st

    # -- analysis -------------------------------------------------------------

    def metrics(self, st: SimulationState) -> tuple[dict, dict, dict]:
        """Summary metrics, assertion outcomes and extra per-file payloads."""
        s = st.series
        a = self.config.section("assertions")
        m: dict = {}
        extra: dict = {}
        norms = np.asarray(s["norm"])
        energies = np.asarray(s["energy"])
        m["steps"] = st.step
        if self.setup.modes is not None:
            # the finite truncation of the field measure is a modeling choice; record it with the results
            m["mode_basis"] = self.setup.modes.to_dict()
        m["norm_initial"] = norms[0]
        m["norm_final"] = norms[-1]
        m["norm_drift"] = float(np.max(np.abs(norms - norms[0])))
        m["norm_drift_per_1000_steps"] = m["norm_drift"] * 1000.0 / max(st.step, 1000)
        e0 = energies[0]
        m["energy_initial"] = e0
        m["energy_drift"] = float(np.max(np.abs(energies - e0)) / (abs(e0) if e0 != 0 else 1.0))
        m["populations_final"] = s["populations"][-1]
        checks = {
            "norm_drift": (m["norm_drift_per_1000_steps"], a["norm_drift"]),
            "energy_drift": (m["energy_drift"], a["energy_drift"]),
        }
        live = st.active.astype(bool)
        if self.config.has_ensemble:
            m["ensemble_size"] = int(len(st.positions))
            m["aborted_trajectories"] = int(np.sum(~live))
            m["max_speed"] = float(np.max(s["max_speed"]))
            fit = equivariance_test(st.positions[live], st.psi)
            extra["fit"] = fit
            m["ks"] = fit.ks
            m["ks_threshold"] = fit.threshold
            m["equivariance_passed"] = fit.passed
        an = self.setup.analytic
        if "free_gaussian" in an:
            m["velocity_field_error"] = self._free_gaussian_error(st.psi, an["free_gaussian"])
            if "velocity_field" in a:
                checks["velocity_field"] = (m["velocity_field_error"], a["velocity_field"])
        if "coherent" in an and s["tracking_error"]:
            m["coherent_tracking_error"] = float(np.max(s["tracking_error"]))
            if "coherent_tracking" in a:
                checks["coherent_tracking"] = (m["coherent_tracking_error"], a["coherent_tracking"])
        if "stationary" in an and self.config.has_ensemble:
            if "stationary_speed" in a:
                checks["stationary_speed"] = (m["max_speed"], a["stationary_speed"])
        if "spin" in an:
            m["spin_population_error"] = self._spin_error(an["spin"]["matrix"], s)
        if self.setup.modes is not None and "points" in self.config.section("fields"):
            m["ehrenfest_residual"] = self._ehrenfest(st.psi)
        if self.setup.measurement is not None:
            self._measurement_metrics(st, m, checks, extra, a)
        results = {}
        for name, (value, limit) in checks.items():
            results[name] = {"value": value, "limit": limit, "passed": bool(value < limit)}
        mode = a.get("equivariance", "off")
        if self.config.has_ensemble and mode != "off":
            want = mode == "pass"
            results["equivariance"] = {"value": max(m["ks"]), "limit": m["ks_threshold"], "expect": mode,
                                       "passed": bool(m["equivariance_passed"] == want)}
        return m, results, extra

    def _measurement_metrics(self, st, m, checks, extra, a) -> None:
        meas = self.setup.measurement
        s = st.series
        dec = meas.branches(st.psi)
        m["overlap_final"] = s["overlap"][-1]
        w = np.abs(meas.amplitudes) ** 2
        m["born_expected"] = w.tolist()
        m["collapse_probabilities"] = [float(x) for x in dec.weights / st.psi.norm2()]
        live = st.active.astype(bool)
        if self.config.has_ensemble:
            born = born_fraction(st.positions[live], dec)
            extra["born"] = born
            m["born_fractions"] = born.fractions
            m["born_stderr"] = born.stderr
            m["born_unclassifiable"] = born.unclassifiable
            m["born_ambiguous"] = born.ambiguous
            n = born.n
            nsig = a.get("born_sigma", 3.0)
            dev = [abs(f - p) / math.sqrt(p * (1 - p) / n) if 0 < p < 1 else (0.0 if abs(f - p) == 0 else math.inf)
                   for f, p in zip(born.fractions, w)]
            m["born_max_sigma"] = float(max(dev))
            if "born_sigma" in a:
                checks["born_fractions"] = (m["born_max_sigma"], nsig)
        thr = self.config.section("collapse")["threshold"]
        if st.n_tracked:
            times = np.asarray(s["t"])
            branch = np.stack(st.collapse["branch"])
            vt = np.stack(st.collapse["v_total"])
            vb = np.stack(st.collapse["v_branches"])
            reports = []
            for i in range(st.n_tracked):
                idx = [int(b) for b in branch[:, i]]
                reports.append(report_from_series(times, s["overlap"], idx, vt[:, i], vb[:, :, i], thr, i))
            extra["collapse"] = reports
            ct = [r.collapse_time for r in reports if r.collapse_time is not None]
            m["collapse_time"] = ct[0] if ct else None
            errs = [r.velocity_agreement_error for r in reports if r.branch_index is not None and r.collapse_time is not None]
            m["velocity_agreement_max"] = float(max(errs)) if errs else None
            if "velocity_agreement" in a and errs:
                checks["velocity_agreement"] = (m["velocity_agreement_max"], a["velocity_agreement"])
        sep = meas.coupling * (st.psi.time)
        m["pointer_separation_sigma"] = float(abs(sep) / meas.pointer_width(st.psi.time))

    def _free_gaussian_error(self, psi: LabeledWavefunction, fg: dict) -> float:
        """Max deviation from the spreading-packet velocity, relative to its peak, where rho > 1e-3 max."""
        t = psi.time
        v = guidance_velocity(psi, self.setup.h).components
        rho = beable_density(psi).values
        region = rho > 1e-3 * rho.max()
        worst = 0.0
        for d, x in enumerate(psi.grid.mesh()):
            m, s0, p0, x0 = fg["mass"][d], fg["width"][d], fg["momentum"][d], fg["center"][d]
            tau = t / (2 * m * s0**2)
            va = p0 / m + (x - x0 - p0 * t / m) * tau / ((1 + tau**2) * 2 * m * s0**2)
            scale = max(float(np.max(np.abs(va[region]))), 1e-300)
            worst = max(worst, float(np.max(np.abs(v[d][region] - va[region]))) / scale)
        return worst

    def _spin_error(self, mat: np.ndarray, s: dict) -> float:
        """Largest deviation of label populations from the precessing spinor of a product state."""
        flat = self.setup.psi0.amplitudes.reshape(2, -1)
        j = int(np.argmax(np.sum(np.abs(flat) ** 2, axis=0)))
        c = flat[:, j] / np.linalg.norm(flat[:, j])
        worst = 0.0
        for t, pop in zip(s["t"], s["populations"]):
            ct = expm(-1j * (t - s["t"][0]) * mat) @ c
            worst = max(worst, float(np.max(np.abs(np.abs(ct) ** 2 * sum(pop) - np.asarray(pop)))))
        return worst

    def _ehrenfest(self, psi: LabeledWavefunction) -> float:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            p = Propagator(self.setup.h, self.dt)
        hist = [psi]
        for _ in range(2):
            hist.append(p.run(hist[-1], 1))
        pts = np.asarray(self.config.section("fields")["points"], float)
        return ehrenfest_residual(hist, self.setup.h, self.setup.modes, pts, hist[1].time)

    # -- output ---------------------------------------------------------------

    def write_outputs(self, st: SimulationState, metrics: dict, extra: dict) -> list[str]:
        self.out.mkdir(parents=True, exist_ok=True)
        files: list[str] = []

        def emit(name: str) -> Path:
            files.append(name)
            return self.out / name

        with open(emit("config.json"), "w") as fh:
            json.dump(self.config.portable(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if "csv" in self.formats:
            with open(emit("observables.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                L = len(st.series["populations"][0])
                w.writerow(["step", "t", "norm", "energy"] + [f"population_{f}" for f in range(L)] + ["max_speed"])
                for i in range(len(st.series["t"])):
                    row = [st.series["step"][i]] + [repr(float(st.series[k][i])) for k in ("t", "norm", "energy")]
                    row += [repr(float(p)) for p in st.series["populations"][i]] + [repr(float(st.series["max_speed"][i]))]
                    w.writerow(row)
            if self.config.has_ensemble:
                write_ensemble_csv(emit("ensemble_initial.csv"), st.initial_positions, 0.0)
                write_ensemble_csv(emit("ensemble_final.csv"), st.positions, st.psi.time)
                self._write_tracked(emit("trajectories.csv"), st)
            if self.setup.measurement is not None:
                with open(emit("overlap.csv"), "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["t", "branch_overlap"])
                    for t, o in zip(st.series["t"], st.series["overlap"]):
                        w.writerow([repr(float(t)), repr(float(o))])
            if self.setup.modes is not None and st.n_tracked and "points" in self.config.section("fields"):
                self._write_fields(emit("fields.csv"), st)
        if "json" in self.formats:
            if "fit" in extra:
                write_fit_report(emit("fit_report.json"), extra["fit"])
            if "born" in extra:
                with open(emit("born.json"), "w") as fh:
                    json.dump(_clean(extra["born"].to_json()), fh, indent=2, sort_keys=True)
            if "collapse" in extra:
                write_reports(emit("collapse_reports.json"), extra["collapse"])
        return files

    def _write_tracked(self, path: Path, st: SimulationState) -> None:
        frames = np.asarray(st.frames)
        dims = st.positions.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "t"] + [f"coord_{d}" for d in range(dims)])
            for i in range(st.n_tracked):
                stop = st.abort_times.get(i)
                for t, f in zip(st.frame_times, frames):
                    if stop is not None and t > stop:
                        break
                    w.writerow([i, repr(float(t))] + [repr(float(c)) for c in f[i]])

    def _write_fields(self, path: Path, st: SimulationState) -> None:
        pts = np.asarray(self.config.section("fields")["points"], float)
        times = np.asarray(st.frame_times)
        traj = np.asarray(st.frames)[:, 0, :]
        samples = []
        for k, t in enumerate(times):
            qdot = trajectory_velocity(times, traj, t)[0] if len(times) > 1 else None
            samples.append(reconstruct_fields(traj[k], self.setup.modes, pts, qdot, float(t)))
        write_field_csv(path, samples)

    # -- drivers --------------------------------------------------------------

    def _checkpoint_path(self, st: SimulationState) -> Path:
        return self.out / f"checkpoint_{st.step:08d}.pwsim"

    def _save(self, st: SimulationState) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        write_checkpoint(st, self._checkpoint_path(st))

    def run(self, state: SimulationState | None = None, stop_at: int | None = None) -> RunManifest:
        started = _now()
        failure = None
        try:
            st = self.initial_state() if state is None else state
            self.state = st
            self.advance(st, stop_at, on_checkpoint=self._save)
        except NumericalBlowup as exc:
            failure = {"type": "numeric", "step": exc.step, "time": exc.time, "message": str(exc)}
        except FloatingPointError as exc:
            failure = {"type": "numeric", "step": getattr(self.state, "step", 0), "message": str(exc)}
        if failure is not None:
            return self._finish(started, {}, {}, [], "numeric_failure", EXIT_NUMERIC, failure)
        if st.step < self.steps:
            self._save(st)
            return self._finish(started, {"steps": st.step}, {}, [self._checkpoint_path(st).name], "stopped", EXIT_OK, None)
        metrics, results, extra = self.metrics(st)
        if not np.isfinite(metrics["norm_final"]):
            failure = {"type": "numeric", "step": st.step, "message": "non-finite norm"}
            return self._finish(started, metrics, results, [], "numeric_failure", EXIT_NUMERIC, failure)
        files = self.write_outputs(st, metrics, extra)
        files.extend(sorted(p.name for p in self.out.glob("checkpoint_*.pwsim")))
        ok = all(r["passed"] for r in results.values())
        return self._finish(started, metrics, results, files, "passed" if ok else "assertion_failed",
                            EXIT_OK if ok else EXIT_ASSERTION, None)

    def _finish(self, started, metrics, results, files, status, code, failure) -> RunManifest:
        metrics = dict(metrics)
        if self.setup.warnings:
            metrics["warnings"] = list(self.setup.warnings)
        man = RunManifest(
            config_hash=self.config.hash(),
            code_version=__version__,
            started=started,
            finished=_now(),
            files=sorted(set(files)) + ["manifest.json"],
            metrics=_clean(metrics),
            assertions=_clean(results),
            status=status,
            exit_code=code,
            failure=_clean(failure),
            scenario=self.config.name,
            kind=self.config.kind,
        )
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(man.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return man


def run_scenario(config: ScenarioConfig, threads: int = 1, backend: str | None = None) -> RunManifest:
    """Execute a validated scenario end to end and write its outputs."""
    return Simulation(config, threads, backend).run()


def resume_run(path, out: str | None = None, threads: int = 1, backend: str | None = None) -> RunManifest:
    """Continue a run from a checkpoint written by ``Simulation``."""
    from .checkpoint import restore

    st = restore(path)
    if not isinstance(st, SimulationState):
        raise TypeError(f"{path} holds a {type(st).__name__}, not a run state")
    cfg = ScenarioConfig(st.config)
    if out is not None:
        cfg = cfg.with_overrides(out=out)
    sim = Simulation(cfg, threads, backend)
    st.config = cfg.data
    return sim.run(st)

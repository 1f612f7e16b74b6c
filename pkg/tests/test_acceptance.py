"""Acceptance criteria, one test per criterion.

Run under pytest (a summary line per criterion is printed at the end of the
session) or directly with ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import copy
import csv
import filecmp
import json
import math
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from pilotwave.checkpoint import restore
from pilotwave.collapse import branch_overlap, decompose, detect_effective_collapse
from pilotwave.config import ScenarioConfig, config_from_dict, load_scenario, shipped_scenarios
from pilotwave.dynamics import HamiltonianSpec, Propagator, build_mode_field_hamiltonian
from pilotwave.fields import build_mode_basis, ehrenfest_residual, reconstruct_A, reconstruct_B, rotate_coordinates, rotate_polarizations
from pilotwave.guidance import continuity_residual, propagate_ensemble
from pilotwave.runner import Simulation
from pilotwave.state import LabeledWavefunction, beable_density, gaussian_packet, make_grid

pytestmark = pytest.mark.acceptance

_WORK = Path(tempfile.mkdtemp(prefix="pilotwave-acceptance-"))
_RUNS: dict[str, tuple[dict, float, Path]] = {}


def _run(name: str) -> tuple[dict, float, Path]:
    """Run a shipped scenario once per session; returns (manifest, seconds, out dir)."""
    if name not in _RUNS:
        out = _WORK / name
        cfg = load_scenario(name).with_overrides(out=str(out))
        t0 = time.perf_counter()
        man = Simulation(cfg).run()
        _RUNS[name] = (man.to_json(), time.perf_counter() - t0, out)
    return _RUNS[name]


def _fmt(x) -> str:
    return f"{x:.3g}" if isinstance(x, float) else str(x)


# ---------------------------------------------------------------------------


def criterion_1():
    """Unitarity and energy for every shipped scenario."""
    bad = []
    worst_n = worst_e = worst_t = 0.0
    for name in shipped_scenarios():
        man, secs, _ = _run(name)
        m = man["metrics"]
        worst_n = max(worst_n, m["norm_drift_per_1000_steps"])
        worst_e = max(worst_e, m["energy_drift"])
        worst_t = max(worst_t, secs)
        if not (m["norm_drift_per_1000_steps"] < 1e-10 and m["energy_drift"] < 1e-6 and secs < 60):
            bad.append(f"{name}(norm {m['norm_drift_per_1000_steps']:.2g}, energy {m['energy_drift']:.2g}, {secs:.0f}s)")
    detail = f"{len(shipped_scenarios())} scenarios; max norm drift/1e3 steps {worst_n:.2g}, max rel energy drift {worst_e:.2g}, slowest {worst_t:.1f}s"
    if bad:
        detail += "; failing: " + ", ".join(bad)
    return not bad, detail


def criterion_2():
    """Equivariance: free Gaussian and coherent mode pass KS, x1.1 velocities fail."""
    fg, t_fg, _ = _run("free_gaussian")
    cm, t_cm, _ = _run("coherent_mode")
    bad, t_bad, _ = _run("free_gaussian_corrupted")
    ok = (
        fg["metrics"]["ensemble_size"] == 10_000
        and fg["metrics"]["equivariance_passed"]
        and cm["metrics"]["equivariance_passed"]
        and not bad["metrics"]["equivariance_passed"]
        and max(t_fg, t_cm, t_bad) < 300
    )
    detail = (
        f"free Gaussian KS {fg['metrics']['ks'][0]:.4f}, coherent KS {cm['metrics']['ks'][0]:.4f} "
        f"(limit {fg['metrics']['ks_threshold']:.4f}); corrupted KS {bad['metrics']['ks'][0]:.4f} rejected="
        f"{not bad['metrics']['equivariance_passed']}"
    )
    return ok, detail


def criterion_3():
    """Born-rule fractions for the 0.3/0.7 and four-outcome measurements."""
    two, t2, _ = _run("born_30_70")
    four, t4, _ = _run("born_4_outcome")
    n2 = two["metrics"]["ensemble_size"]
    f1 = two["metrics"]["born_fractions"][0]
    ok2 = n2 == 10_000 and abs(f1 - 0.3) <= 3 * math.sqrt(0.21 / n2)
    n4 = four["metrics"]["ensemble_size"]
    w = [0.1, 0.2, 0.3, 0.4]
    f4 = four["metrics"]["born_fractions"]
    ok4 = n4 == 10_000 and all(abs(f - p) <= 3 * math.sqrt(p * (1 - p) / n4) for f, p in zip(f4, w))
    detail = f"branch-1 fraction {f1:.4f} (0.30 +- {3 * math.sqrt(0.21 / n2):.4f}); four-outcome {[round(f, 4) for f in f4]}"
    return ok2 and ok4 and max(t2, t4) < 300, detail


def _disjoint_branch_errors() -> float:
    g = make_grid([(-40.0, 40.0, 1024)])
    h = HamiltonianSpec(grid=g, labels=1, mass=1.0, potential=0.0)
    b1 = LabeledWavefunction(g, math.sqrt(0.3) * gaussian_packet(g, [-15.0], 1.0, 1.0)[None])
    b2 = LabeledWavefunction(g, math.sqrt(0.7) * gaussian_packet(g, [15.0], 1.0, -0.5)[None])
    dt, chunk, chunks = 0.005, 20, 20
    rng = np.random.default_rng(4)
    starts = np.concatenate([rng.normal(-15.0, 1.0, 10), rng.normal(15.0, 1.0, 10)])[:, None]
    run = propagate_ensemble(starts, b1 + b2, h, dt, chunk * chunks, record_every=chunk // 2)
    prop = Propagator(h, dt)
    decs = [decompose(b1 + b2, [b1, b2])]
    for _ in range(chunks):
        b1, b2 = prop.run(b1, chunk), prop.run(b2, chunk)
        decs.append(decompose(b1 + b2, [b1, b2]))
    worst = 0.0
    for i, traj in enumerate(run.trajectories()):
        rep = detect_effective_collapse(traj, decs, h, trajectory_id=i)
        if rep.collapse_time != 0.0:
            return math.inf
        worst = max(worst, rep.velocity_agreement_error)
    return worst


def criterion_4():
    """Post-collapse autonomy and the overlap series of separating packets."""
    err_disjoint = _disjoint_branch_errors()
    man, _, out = _run("separating_packets")
    err_split = man["metrics"]["velocity_agreement_max"]
    cfg = load_scenario("separating_packets").section("measurement")
    with open(out / "overlap.csv") as fh:
        rows = [(float(r["t"]), float(r["branch_overlap"])) for r in csv.DictReader(fh)]
    t = np.array([r[0] for r in rows])
    ov = np.array([r[1] for r in rows])
    sigma = np.sqrt(cfg["width"] ** 2 + t**2 / (4 * cfg["mass"] ** 2 * cfg["width"] ** 2))
    sep = np.abs(cfg["coupling"]) * t / sigma
    monotone = bool(np.all(np.diff(ov) <= 1e-15))
    window = sep > 10.0
    worst = float(np.max(ov[window]))
    below = ov < 1e-6
    first = float(sep[np.argmax(below)]) if below.any() else math.nan
    ok = err_disjoint < 1e-8 and err_split < 1e-8 and monotone and worst < 1e-6
    detail = (
        f"velocity agreement {err_disjoint:.2g} (disjoint), {err_split:.2g} (after split); overlap monotone={monotone}; "
        f"max overlap beyond 10 sigma {worst:.3g} (needs < 1e-6; first falls below at {first:.2f} sigma)"
    )
    return ok, detail


def criterion_5():
    """Branches orthogonal only in the label index still overlap."""
    g = make_grid([(-10.0, 10.0, 256)])
    phi = gaussian_packet(g, [0.0], 1.0)
    a1 = np.zeros((2,) + g.shape, complex)
    a2 = np.zeros_like(a1)
    a1[0] = phi
    a2[1] = phi
    psi1, psi2 = LabeledWavefunction(g, a1), LabeledWavefunction(g, a2)
    inner = abs(np.vdot(a1, a2))
    om = branch_overlap(psi1, psi2)
    return om > 0.9 and inner == 0.0, f"label-only orthogonal branches: Omega = {om:.12f}, <psi1|psi2> = {inner}"


def criterion_6():
    """With zero coupling, traced guidance of a product state equals single-label guidance."""
    base = json.loads(Path(shipped_scenarios()["spin_boson"]).read_text())
    coupled = copy.deepcopy(base)
    coupled["hamiltonian"]["couplings"] = []
    coupled["initial_state"]["label_amplitudes"] = [0.6, [0.0, 0.8]]
    coupled["ensemble"] = {"n": 2000, "seed": 99, "write_trajectories": 50, "record_every": 5}
    coupled["run"]["steps"] = 1000
    single = copy.deepcopy(coupled)
    single["kind"] = "free_field_modes"
    del single["hamiltonian"]
    del single["initial_state"]["label_amplitudes"]
    results = []
    for tag, d in (("traced", coupled), ("single", single)):
        d["output"] = {"directory": str(_WORK / f"reduction_{tag}")}
        sim = Simulation(config_from_dict(d))
        sim.run()
        results.append((sim.state.positions.copy(), np.asarray(sim.state.frames)))
    d_final = float(np.max(np.abs(results[0][0] - results[1][0])))
    d_frames = float(np.max(np.abs(results[0][1] - results[1][1])))
    same_start = bool(np.array_equal(results[0][1][0], results[1][1][0]))
    return max(d_final, d_frames) < 1e-12 and same_start, f"max trajectory difference {max(d_final, d_frames):.3g} over 2000 beables, identical starts={same_start}"


def _continuity_levels() -> list[float]:
    res = []
    for lev in range(3):
        n, dt = 64 * 2**lev, 0.02 / 2**lev
        g = make_grid([(-10.0, 10.0, n)])
        x = g.mesh()[0]
        h = HamiltonianSpec(grid=g, labels=1, mass=1.0, potential=0.5 * x**2)
        psi = LabeledWavefunction(g, gaussian_packet(g, [1.0], 0.8, 1.5)[None])
        prop = Propagator(h, dt)
        a = prop.run(psi, int(round(0.5 / dt)))
        res.append(continuity_residual(a, prop.run(a, 1), h))
    return res


def criterion_7():
    """Continuity residual converges at second order under joint refinement."""
    r = _continuity_levels()
    orders = [math.log2(r[0] / r[1]), math.log2(r[1] / r[2])]
    return min(orders) >= 1.9, f"residuals {[f'{v:.3g}' for v in r]}, orders {[round(o, 3) for o in orders]}"


def criterion_8():
    """Analytic trajectory oracles."""
    gs, _, _ = _run("ground_state_mode")
    cm, _, _ = _run("coherent_mode")
    fg, _, _ = _run("free_gaussian")
    speed = gs["metrics"]["max_speed"]
    track = cm["metrics"]["coherent_tracking_error"]
    vel = fg["metrics"]["velocity_field_error"]
    period = 2 * math.pi
    covered = cm["metrics"]["steps"] * load_scenario("coherent_mode").section("run")["dt"] >= period
    ok = speed < 1e-10 and track < 1e-5 and vel < 0.01 and covered
    return ok, f"ground-state max |qdot| {speed:.3g}; coherent tracking {track:.3g} over one period; free-Gaussian velocity error {vel:.3g}"


def _stencil(f, x, axis, h=1e-3):
    e = np.zeros(3)
    e[axis] = h
    return (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)


def criterion_9():
    """Field reconstruction: transversality, basis freedom and curl consistency."""
    modes = build_mode_basis([[1.0, 2.0, 0.5], [0.0, 0.0, 1.5], [-1.0, 0.3, 2.0]])
    rng = np.random.default_rng(9)
    q = rng.normal(size=len(modes))
    pts = rng.uniform(-2, 2, size=(8, 3))

    def A(x):
        return reconstruct_A(q, modes, x[None]).A[0]

    def B(x):
        return reconstruct_B(q, modes, x[None]).B[0]

    div_a = div_b = curl_err = 0.0
    for x in pts:
        dA = np.array([_stencil(A, x, i) for i in range(3)])  # dA[i, j] = d_i A_j
        dB = np.array([_stencil(B, x, i) for i in range(3)])
        div_a = max(div_a, abs(np.trace(dA)))
        div_b = max(div_b, abs(np.trace(dB)))
        curl = np.array([dA[1, 2] - dA[2, 1], dA[2, 0] - dA[0, 2], dA[0, 1] - dA[1, 0]])
        curl_err = max(curl_err, float(np.max(np.abs(curl - B(x)))))
    rot = 0.0
    for k_index in range(3):
        angle = rng.uniform(0, 2 * np.pi)
        m2 = rotate_polarizations(modes, k_index, angle)
        q2 = rotate_coordinates(modes, q, k_index, angle)
        a1, a2 = reconstruct_A(q, modes, pts).A, reconstruct_A(q2, m2, pts).A
        b1, b2 = reconstruct_B(q, modes, pts).B, reconstruct_B(q2, m2, pts).B
        rot = max(rot, float(np.max(np.abs(a1 - a2))), float(np.max(np.abs(b1 - b2))))
    ok = div_a < 1e-8 and div_b < 1e-8 and rot < 1e-10 and curl_err < 1e-6
    return ok, f"div A {div_a:.2g}, div B {div_b:.2g}, rotation invariance {rot:.2g}, curl(A) - B {curl_err:.2g}"


def _ehrenfest_levels(spacing: int) -> list[float]:
    modes = build_mode_basis([[0.0, 0.0, 1.0]], [1, 2], ["cos"])
    h = build_mode_field_hamiltonian(modes)
    g = h.grid
    psi = LabeledWavefunction(g, gaussian_packet(g, [1.5, -0.7], 1 / np.sqrt(2), [0.4, 1.0])[None])
    pts = np.array([[0.1, 0.2, 0.3], [0.5, -0.2, 1.1], [0.0, 0.0, 2.0]])
    out = []
    for dt in (0.04, 0.02, 0.01):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            prop = Propagator(h, dt)
        a = prop.run(psi, int(round(1.0 / dt)) - spacing)
        b = prop.run(a, spacing)
        c = prop.run(b, spacing)
        out.append(ehrenfest_residual([a, b, c], h, modes, pts, b.time))
    return out


def criterion_10():
    """Ehrenfest residual of a free coherent field converges at second order in dt."""
    r = _ehrenfest_levels(2)
    orders = [math.log2(r[0] / r[1]), math.log2(r[1] / r[2])]
    exact = max(_ehrenfest_levels(1))
    ok = all(1.8 <= o <= 2.2 for o in orders) and exact < 1e-12
    return ok, (
        f"residuals {[f'{v:.3g}' for v in r]} at snapshot spacing 2 dt, orders {[round(o, 3) for o in orders]}; "
        f"single-step spacing {exact:.2g}"
    )


def criterion_11():
    """Identical (config, seed) runs are byte-identical; resume matches uninterrupted."""
    cfg = load_scenario("born_30_70")
    dirs = []
    for tag in ("a", "b"):
        out = _WORK / f"repro_{tag}"
        Simulation(cfg.with_overrides(out=str(out))).run()
        dirs.append(out)
    names = sorted(p.name for p in dirs[0].iterdir() if p.name != "manifest.json")
    same = [filecmp.cmp(dirs[0] / n, dirs[1] / n, shallow=False) for n in names]
    d = copy.deepcopy(cfg.data)
    d["output"]["directory"] = str(_WORK / "ckpt")
    d["run"]["checkpoint_every"] = 200
    Simulation(ScenarioConfig(d)).run()
    state = restore(_WORK / "ckpt" / "checkpoint_00000200.pwsim")
    d2 = copy.deepcopy(d)
    d2["output"]["directory"] = str(_WORK / "resumed")
    sim = Simulation(ScenarioConfig(d2))
    sim.run(state)
    full = Simulation(cfg.with_overrides(out=str(_WORK / "uninterrupted")))
    full.run()
    rho_diff = float(np.max(np.abs(beable_density(sim.state.psi).values - beable_density(full.state.psi).values)))
    pos_diff = float(np.max(np.abs(sim.state.positions - full.state.positions)))
    ok = all(same) and len(names) > 3 and max(rho_diff, pos_diff) < 1e-12
    return ok, f"{sum(same)}/{len(names)} output files byte-identical; resume vs uninterrupted: density {rho_diff:.2g}, beables {pos_diff:.2g}"


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}
TITLES = {
    1: "unitarity & energy",
    2: "equivariance",
    3: "Born-rule effective collapse",
    4: "post-collapse autonomy",
    5: "label-quantifier regression",
    6: "traced-guidance reduction",
    7: "continuity convergence",
    8: "analytic trajectory oracles",
    9: "field reconstruction",
    10: "Ehrenfest convergence",
    11: "reproducibility",
}


def _line(i: int, ok: bool, detail: str) -> str:
    return f"criterion {i:2d} {'PASS' if ok else 'FAIL'}  {TITLES[i]}: {detail}"


@pytest.mark.parametrize("index", list(CRITERIA))
def test_criterion(index):
    from conftest import ACCEPTANCE_LINES

    ok, detail = CRITERIA[index]()
    line = _line(index, ok, detail)
    ACCEPTANCE_LINES[index] = line
    print(line)
    assert ok, line


if __name__ == "__main__":
    failed = 0
    for i, fn in CRITERIA.items():
        ok, detail = fn()
        failed += not ok
        print(_line(i, ok, detail), flush=True)
    raise SystemExit(1 if failed else 0)

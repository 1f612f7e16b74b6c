import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pilotwave.dynamics import HamiltonianSpec, build_pauli_hamiltonian
from pilotwave.guidance import (
    BeableConfiguration,
    TrajectoryError,
    VelocityCache,
    continuity_residual,
    guidance_velocity,
    propagate_ensemble,
    step_trajectory,
)
from pilotwave.state import GridError, LabeledWavefunction, from_labels, gaussian_packet, make_grid


def free_setup(n=256, L=15.0, boundary="periodic"):
    g = make_grid([(-L, L, n)], boundary=boundary)
    return g, HamiltonianSpec(grid=g, labels=1, mass=1.0, potential=0.0)


@given(p=st.floats(-2, 2), m=st.floats(0.5, 3.0))
def test_gaussian_velocity_at_center_is_p_over_m(p, m):
    g = make_grid([(-15, 15, 512)])
    h = HamiltonianSpec(grid=g, labels=1, mass=m, potential=0.0)
    psi = LabeledWavefunction(g, gaussian_packet(g, [0.0], 1.0, p))
    v = guidance_velocity(psi, h).components[0]
    core = np.abs(g.axis(0)) < 3
    assert np.max(np.abs(v[core] - p / m)) < 1e-10


@given(a=st.floats(0.1, 1.0), b=st.floats(0.1, 1.0), phase=st.floats(0, 2 * np.pi))
def test_spin_traced_velocity_independent_of_spin_mixture(a, b, phase):
    g, _ = free_setup(128)
    h2 = build_pauli_hamiltonian(g)
    h1 = HamiltonianSpec(grid=g, labels=1, mass=1.0, potential=0.0)
    phi = gaussian_packet(g, [0.0], 1.0, 0.7)
    psi2 = from_labels(g, phi, [a, b * np.exp(1j * phase)])
    psi1 = LabeledWavefunction(g, phi * np.sqrt(a**2 + b**2))
    v2 = guidance_velocity(psi2, h2).components
    v1 = guidance_velocity(psi1, h1).components
    core = np.abs(g.axis(0)) < 6
    assert np.max(np.abs(v1 - v2)[:, core]) < 1e-10


def test_velocity_frozen_at_nodes():
    g, h = free_setup(64)
    amps = np.zeros(64, complex)
    amps[10] = 1.0
    amps[11] = 1j
    v = guidance_velocity(LabeledWavefunction(g, amps), h)
    assert v.node_mask.sum() == 62
    assert np.all(v.components[0][v.node_mask] == 0.0)
    assert np.all(np.isfinite(v.components))


def test_current_includes_vector_potential_shift():
    g, _ = free_setup(256)
    h = build_pauli_hamiltonian(g, A=[0.3, 0.0, 0.0])
    psi = from_labels(g, gaussian_packet(g, [0.0], 1.0), [1.0, 0.0])
    v = guidance_velocity(psi, h).components[0]
    assert np.allclose(v[np.abs(g.axis(0)) < 3], -0.3, atol=1e-10)


def test_continuity_residual_shrinks_with_dt():
    g, h = free_setup(256)
    from pilotwave.dynamics import Propagator

    psi = LabeledWavefunction(g, gaussian_packet(g, [0.0], 1.0, 1.0))
    res = []
    for dt in (0.01, 0.005):
        p = Propagator(h, dt)
        res.append(continuity_residual(psi, p.run(psi, 1), h))
    assert res[1] < res[0]
    with pytest.raises(ValueError):
        continuity_residual(psi, psi, h)


def _constant_cache(g, v, t0=0.0, t1=1.0):
    cache = VelocityCache(g)
    field = np.full((g.dims,) + g.shape, v)
    cache.push(field, t0)
    cache.push(field, t1)
    return cache


def test_step_trajectory_translates_in_constant_field():
    g, _ = free_setup(64, 5.0)
    q = BeableConfiguration.on(g, [0.5])
    out = step_trajectory(q, _constant_cache(g, 0.75), 0.0, 1.0)
    assert out.coords[0] == pytest.approx(1.25, abs=1e-14)
    with pytest.raises(TrajectoryError):
        step_trajectory(q, _constant_cache(g, 0.75), 0.5, 1.0)


def test_step_trajectory_linear_field_matches_exponential():
    g = make_grid([(-5, 5, 64)], boundary="reflecting")
    x = g.axis(0)
    cache = VelocityCache(g)
    cache.push(x[None].copy(), 0.0)
    cache.push(x[None].copy(), 0.01)
    out = step_trajectory(BeableConfiguration.on(g, [0.3]), cache, 0.0, 0.01)
    assert out.coords[0] == pytest.approx(0.3 * np.exp(0.01), rel=1e-11)


def test_beable_leaving_reflecting_grid_aborts():
    g = make_grid([(-5, 5, 64)], boundary="reflecting")
    q = BeableConfiguration.on(g, [4.5])
    with pytest.raises(TrajectoryError, match="left the grid"):
        step_trajectory(q, _constant_cache(g, 5.0), 0.0, 1.0)
    with pytest.raises(GridError):
        BeableConfiguration.on(g, [6.0])


def test_ensemble_continues_after_one_beable_aborts():
    g = make_grid([(-10, 10, 256)], boundary="reflecting")
    h = HamiltonianSpec(grid=g, labels=1, mass=1.0, potential=0.0)
    psi = LabeledWavefunction(g, gaussian_packet(g, [8.0], 0.5, 4.0))
    # exact guidance reflects at the wall; an inflated velocity pushes one beable out
    run = propagate_ensemble(np.array([[8.5], [-9.0]]), psi, h, 0.005, 200, velocity_scale=20.0)
    assert 0 in run.aborted
    assert 1 not in run.aborted
    trajs = run.trajectories()
    assert trajs[0].aborted and len(trajs[0]) < len(trajs[1])
    assert trajs[1].times[-1] == pytest.approx(1.0)


def test_ensemble_identical_across_thread_counts():
    g, h = free_setup(256)
    psi = LabeledWavefunction(g, gaussian_packet(g, [0.0], 1.0, 1.0))
    starts = np.random.default_rng(3).normal(0, 1, (500, 1))
    a = propagate_ensemble(starts, psi, h, 0.01, 40, threads=1)
    b = propagate_ensemble(starts, psi, h, 0.01, 40, threads=4)
    assert np.array_equal(a.positions, b.positions)


def test_ensemble_follows_analytic_free_trajectory():
    g, h = free_setup(512, 20.0)
    psi = LabeledWavefunction(g, gaussian_packet(g, [0.0], 1.0, 1.0))
    x0 = np.array([[-1.0], [0.0], [0.5]])
    run = propagate_ensemble(x0, psi, h, 0.005, 400)
    t = 2.0
    expected = t + x0[:, 0] * np.sqrt(1 + t**2 / 4)
    assert np.max(np.abs(run.final_positions[:, 0] - expected)) < 1e-8

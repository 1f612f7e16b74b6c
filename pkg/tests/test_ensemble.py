import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from pilotwave.collapse import decompose
from pilotwave.dynamics import HamiltonianSpec
from pilotwave.ensemble import (
    MarginalCDF,
    born_fraction,
    equivariance_test,
    ks_statistics,
    sample_equilibrium,
)
from pilotwave.guidance import propagate_ensemble
from pilotwave.state import DensityField, LabeledWavefunction, beable_density, gaussian_packet, make_grid


def gaussian_density(grid, c=0.0, w=1.0):
    return beable_density(LabeledWavefunction(grid, gaussian_packet(grid, [c] * grid.dims, w)))


def test_same_seed_same_sample_different_seed_different():
    g = make_grid([(-10, 10, 256)])
    rho = gaussian_density(g)
    a = sample_equilibrium(rho, 500, 11).points
    b = sample_equilibrium(rho, 500, 11).points
    c = sample_equilibrium(rho, 500, 12).points
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_uniform_density_gives_uniform_sample():
    g = make_grid([(0.0, 1.0, 64)])
    rho = DensityField(g, np.ones(64))
    pts = sample_equilibrium(rho, 5000, 3).points[:, 0]
    assert stats.kstest(pts, "uniform").statistic < 1.63 / np.sqrt(5000)


def test_gaussian_sample_moments_and_ks():
    g = make_grid([(-10, 10, 512)])
    rho = gaussian_density(g, 1.0, 1.5)
    s = sample_equilibrium(rho, 20000, 5)
    x = s.points[:, 0]
    assert s.method == "rejection"
    assert abs(x.mean() - 1.0) < 4 * 1.5 / np.sqrt(20000)
    assert abs(x.std() - 1.5) < 0.05
    assert stats.kstest(x, stats.norm(1.0, 1.5).cdf).statistic < 1.63 / np.sqrt(20000)


def test_metropolis_in_three_dimensions():
    g = make_grid([(-6, 6, 24)] * 3)
    rho = gaussian_density(g, 0.5, 1.0)
    s = sample_equilibrium(rho, 3000, 1)
    assert s.method == "metropolis"
    assert np.allclose(s.points.mean(axis=0), 0.5, atol=0.15)
    assert equivariance_test(s.points, rho, coefficient=2.5).passed


def test_low_acceptance_falls_back_to_metropolis():
    g = make_grid([(0.0, 1.0, 128), (0.0, 1.0, 128)], boundary="reflecting")
    vals = np.zeros(g.shape)
    vals[64, 64] = 1.0
    with pytest.warns(RuntimeWarning, match="Metropolis"):
        s = sample_equilibrium(DensityField(g, vals), 200, 0, method="rejection")
    assert s.method == "metropolis" and s.warnings


def test_sampler_rejects_empty_density():
    g = make_grid([(0.0, 1.0, 16)])
    with pytest.raises(ValueError):
        sample_equilibrium(DensityField(g, np.zeros(16)), 10, 0)
    with pytest.raises(ValueError):
        sample_equilibrium(DensityField(g, np.ones(16)), 0, 0)


@given(seed=st.integers(0, 2**32 - 1), boundary=st.sampled_from(["periodic", "reflecting"]))
def test_marginal_cdf_monotone_from_zero_to_one(seed, boundary):
    g = make_grid([(-3, 3, 16), (0, 1, 8)], boundary=boundary)
    rho = DensityField(g, np.random.default_rng(seed).random(g.shape))
    for d in range(2):
        cdf = MarginalCDF(rho, d)
        lo, hi = g.support()
        x = np.linspace(lo[d] - 0.5, hi[d] + 0.5, 300)
        y = cdf(x)
        assert y[0] == 0.0 and y[-1] == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.diff(y) >= -1e-15)


def test_equivariance_detects_shifted_ensemble():
    g = make_grid([(-10, 10, 512)])
    rho = gaussian_density(g)
    pts = sample_equilibrium(rho, 10000, 2).points
    assert equivariance_test(pts, rho).passed
    assert not equivariance_test(pts + 0.1, rho).passed
    assert ks_statistics(pts, rho)[0] < 1.63 / 100


def test_born_fraction_counts_branches():
    g = make_grid([(-30, 30, 1024)])
    b1 = LabeledWavefunction(g, np.sqrt(0.25) * gaussian_packet(g, [-12.0], 1.0))
    b2 = LabeledWavefunction(g, np.sqrt(0.75) * gaussian_packet(g, [12.0], 1.0))
    dec = decompose(b1 + b2, [b1, b2])
    pts = sample_equilibrium(b1 + b2, 4000, 9).points
    rep = born_fraction(pts, dec)
    assert sum(rep.counts) + rep.unclassifiable == 4000
    assert abs(rep.fractions[0] - 0.25) < 3 * np.sqrt(0.25 * 0.75 / 4000)


@pytest.mark.slow
def test_equivariance_false_rejection_rate_over_100_seeds():
    g = make_grid([(-15, 15, 256)])
    h = HamiltonianSpec(grid=g, labels=1, mass=1.0, potential=0.0)
    psi = LabeledWavefunction(g, gaussian_packet(g, [0.0], 1.0, 0.5))
    failures = 0
    for seed in range(100):
        start = sample_equilibrium(psi, 2000, seed).points
        run = propagate_ensemble(start, psi, h, 0.01, 40)
        failures += not equivariance_test(run.final_positions, run.psi).passed
    assert failures <= 3

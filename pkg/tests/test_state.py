import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pilotwave.state import (
    DensityField,
    GridError,
    LabeledWavefunction,
    StateError,
    beable_density,
    from_labels,
    gaussian_packet,
    inner_product,
    make_grid,
    normalize,
    reduced_density,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def complex_amps(labels, n):
    return st.tuples(arrays(float, (labels, n), elements=finite), arrays(float, (labels, n), elements=finite)).map(
        lambda p: p[0] + 1j * p[1]
    )


def test_grid_spacing_is_extent_over_points():
    g = make_grid([(-10, 10, 256), (0, 3, 12)])
    assert np.allclose(g.spacing, [20 / 256, 0.25])
    assert g.shape == (256, 12)
    assert g.cell_volume == pytest.approx(20 / 256 * 0.25)


@pytest.mark.parametrize(
    "extents", [[(1.0, 1.0, 16)], [(2.0, 1.0, 16)], [(0.0, 1.0, 4)], [(0.0, 1.0, 16.5)], [(0.0, 1.0)], []]
)
def test_bad_extents_rejected(extents):
    with pytest.raises(GridError):
        make_grid(extents)


def test_amplitude_cap():
    with pytest.raises(GridError, match="cap"):
        make_grid([(0, 1, 1024), (0, 1, 1024)], max_amplitudes=10**5)


def test_periodic_wrap_and_node_index():
    g = make_grid([(-1.0, 1.0, 8)])
    assert g.wrap(np.array([1.25]))[0] == pytest.approx(-0.75)
    assert g.node_index([1.0]) == (0,)
    with pytest.raises(GridError):
        g.node_index([0.1])
    r = make_grid([(-1.0, 1.0, 8)], boundary="reflecting")
    with pytest.raises(GridError):
        r.node_index([1.0])


@given(c=st.floats(-2, 2), w=st.floats(0.5, 2.0), p=st.floats(-3, 3))
def test_gaussian_density_normalized_with_requested_moments(c, w, p):
    g = make_grid([(-20, 20, 1024)])
    psi = LabeledWavefunction(g, gaussian_packet(g, [c], w, p))
    rho = beable_density(psi)
    x = g.axis(0)
    mean = np.sum(rho.values * x) * g.cell_volume
    var = np.sum(rho.values * (x - mean) ** 2) * g.cell_volume
    assert rho.integral() == pytest.approx(1.0, abs=1e-12)
    assert mean == pytest.approx(c, abs=1e-10)
    assert np.sqrt(var) == pytest.approx(w, rel=1e-8)


@given(amps=complex_amps(3, 16), i=st.integers(0, 15), j=st.integers(0, 15))
def test_reduced_density_diagonal_is_beable_density_and_hermitian(amps, i, j):
    g = make_grid([(0.0, 16.0, 16)])
    psi = LabeledWavefunction(g, amps)
    rho = beable_density(psi)
    xi, xj = g.axis(0)[i], g.axis(0)[j]
    diag = reduced_density(psi, [xi], [xi]).value
    assert diag.real == rho.values[i]
    assert diag.imag == 0.0
    a = reduced_density(psi, [xi], [xj]).value
    b = reduced_density(psi, [xj], [xi]).value
    assert a == pytest.approx(np.conj(b), abs=1e-12)


@given(a=complex_amps(2, 16), b=complex_amps(2, 16))
def test_inner_product_conjugate_symmetric(a, b):
    g = make_grid([(0.0, 1.0, 16)])
    p, q = LabeledWavefunction(g, a), LabeledWavefunction(g, b)
    assert inner_product(p, q) == pytest.approx(np.conj(inner_product(q, p)), abs=1e-12)


def test_normalize_and_zero_state():
    g = make_grid([(0.0, 1.0, 16)])
    psi = LabeledWavefunction(g, 3.0 * np.ones((2, 16)))
    assert normalize(psi).norm2() == pytest.approx(1.0)
    with pytest.raises(StateError):
        normalize(LabeledWavefunction(g, np.zeros(16)))


def test_label_weights_of_product_state():
    g = make_grid([(-10, 10, 256)])
    psi = from_labels(g, gaussian_packet(g, [0.0], 1.0), [0.6, 0.8j])
    assert np.allclose(psi.label_weights(), [0.36, 0.64])
    assert psi.labels == 2


def test_state_is_immutable_and_validated():
    g = make_grid([(0.0, 1.0, 16)])
    psi = LabeledWavefunction(g, np.ones(16))
    with pytest.raises(ValueError):
        psi.amplitudes[0, 0] = 2.0
    with pytest.raises(StateError):
        LabeledWavefunction(g, np.ones(15))
    with pytest.raises(StateError):
        LabeledWavefunction(g, np.full(16, np.nan))
    with pytest.raises(StateError):
        DensityField(g, -np.ones(16))


def test_marginal_integrates_other_axes():
    g = make_grid([(-8, 8, 64), (-8, 8, 32)])
    psi = LabeledWavefunction(g, gaussian_packet(g, [0.0, 1.0], [1.0, 1.2]))
    m = beable_density(psi).marginal(1)
    assert np.sum(m) * g.spacing[1] == pytest.approx(1.0, abs=1e-8)

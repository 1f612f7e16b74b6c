"""Pilot-wave dynamics with beables on a subset of the degrees of freedom.

Labeled wavefunctions evolve under a Schrodinger equation; beables follow the
label-traced current; mode beables reconstruct physical-space fields.
"""

__version__ = "0.1.0"

from .state import (  # noqa: E402
    ConfigurationGrid,
    DensityField,
    LabeledWavefunction,
    beable_density,
    from_labels,
    gaussian_packet,
    inner_product,
    make_grid,
    normalize,
    reduced_density,
)
from .dynamics import (  # noqa: E402
    HamiltonianSpec,
    apply_hamiltonian,
    build_coupled_hamiltonian,
    build_mode_field_hamiltonian,
    build_pauli_hamiltonian,
    evolve,
    expectation,
    stationary_state,
)
from .fields import ModeBasis, build_mode_basis, reconstruct_A, reconstruct_B, reconstruct_E, reconstruct_fields  # noqa: E402
from .guidance import (  # noqa: E402
    BeableConfiguration,
    Trajectory,
    continuity_residual,
    current,
    guidance_velocity,
    propagate_ensemble,
    step_trajectory,
    velocity_field,
)
from .collapse import (  # noqa: E402
    BranchDecomposition,
    branch_overlap,
    build_measurement_scenario,
    classify_trajectory,
    collapse_probability,
    decompose,
    density_overlap,
    detect_effective_collapse,
)
from .ensemble import born_fraction, equivariance_test, sample_equilibrium  # noqa: E402

__all__ = [name for name in dir() if not name.startswith("_")]

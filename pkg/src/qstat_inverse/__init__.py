"""Bayesian reconstruction of one-dimensional potentials from thermal position data.

The likelihood of a position measurement on a canonical ensemble is the
normalized diagonal of exp(-beta H).  It is evaluated classically, in the
semiclassical (van Vleck) approximation around imaginary-time classical
paths, or exactly by diagonalizing the mesh Hamiltonian.  The MAP potential
under a smoothness prior is found by gradient descent.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AnalyticPotential,
    DomainError,
    Grid,
    MeshFunction,
    PhysicsParams,
    PotentialField,
    build_grid,
    harmonic_potential,
    interp_potential,
    interp_potential_deriv,
    quadrature,
)
from .paths import (  # noqa: E402
    ClassicalPath,
    PathSolverConfig,
    action_second_derivative,
    occupation_histogram,
    path_action,
    path_energy,
    solve_path,
    solve_paths,
)
from .prior import (  # noqa: E402
    PriorModel,
    laplacian_kernel,
    make_prior,
    prior_energy,
    prior_gradient,
)
from .reconstruction import (  # noqa: E402
    Dataset,
    ReconstructionConfig,
    ReconstructionState,
    ergodic_diagnostic,
    make_dataset,
    map_descent,
    posterior_energy,
    stationarity_residual,
)
from .semiclassical import (  # noqa: E402
    FluctuationData,
    SemiclassicalState,
    classical_density,
    fluctuation_green_function,
    log_deriv_approach1,
    log_deriv_approach2,
    log_deriv_approach3,
    semiclassical_partition,
    stationary_partition,
    van_vleck_element,
)
from .spectral import (  # noqa: E402
    SpectralDecomposition,
    ThermalState,
    boltzmann_diagonal,
    dRho_diag_dv,
    dRho_diag_dv_betaintegral,
    dZ_dv,
    eigendecompose,
    hamiltonian_matrix,
    spectral_decomposition,
)

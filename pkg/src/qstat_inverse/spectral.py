"""Exact quantum backend in the energy representation.

The mesh Hamiltonian is the three-point kinetic stencil plus diag(v) on the
interior nodes; the end nodes are hard walls (wavefunctions vanish there),
so trapezoid and plain mesh sums of densities coincide.
Eigenvectors are scaled to be orthonormal under the mesh measure
``sum_x phi(x) phi'(x) dx``, so diagonal matrix elements of ``exp(-beta H)``
are position densities.  Functional derivatives are densities too: a change
of v at node j acts on a cell of width dx, so

    d<x|exp(-beta H)|x> / d v_j  =  dx * (functional derivative at x_j).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, Grid, MeshFunction, PhysicsParams, PotentialField

__all__ = [
    "SpectralDecomposition",
    "ThermalState",
    "hamiltonian_matrix",
    "eigendecompose",
    "spectral_decomposition",
    "boltzmann_diagonal",
    "dZ_dv",
    "dRho_diag_dv",
    "dRho_diag_dv_betaintegral",
    "exact_log_derivative",
    "DEGENERACY_TOL",
]

# relative gap below which two levels are treated as degenerate
DEGENERACY_TOL = 1e-9


@dataclass(frozen=True)
class SpectralDecomposition:
    energies: np.ndarray
    states: np.ndarray
    grid: Grid

    @property
    def n_states(self) -> int:
        return self.energies.size


@dataclass(frozen=True)
class ThermalState:
    rho_diag: MeshFunction
    partition: float
    beta: float

    @property
    def normalized(self) -> np.ndarray:
        """Position density rho_diag / Z."""
        return self.rho_diag.values / self.partition


def hamiltonian_matrix(v, grid: Grid, params: PhysicsParams) -> np.ndarray:
    """H = -(hbar^2/2m) d^2/dx^2 + v on the n_x - 2 interior nodes (walls at both ends)."""
    vals = v.values if isinstance(v, PotentialField) else np.asarray(v, dtype=float)
    if vals.size != grid.n_x:
        raise DomainError("potential length does not match the grid")
    n = grid.n_x - 2
    t = params.hbar ** 2 / (2.0 * params.mass * grid.dx ** 2)
    H = 2.0 * t * np.eye(n) - t * (np.eye(n, k=1) + np.eye(n, k=-1))
    H[np.diag_indices(n)] += vals[1:-1]
    return H


def eigendecompose(H: np.ndarray, grid: Grid) -> SpectralDecomposition:
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DomainError("Hamiltonian must be a square matrix")
    if H.shape[0] != grid.n_x - 2:
        raise DomainError(f"expected a {grid.n_x - 2}x{grid.n_x - 2} interior operator")
    if not np.allclose(H, H.T, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(H)))):
        raise DomainError("Hamiltonian is not symmetric")
    E, U = np.linalg.eigh(H)
    states = np.zeros((grid.n_x, E.size))
    states[1:-1] = U / np.sqrt(grid.dx)
    return SpectralDecomposition(energies=E, states=states, grid=grid)


def spectral_decomposition(v, grid: Grid, params: PhysicsParams) -> SpectralDecomposition:
    return eigendecompose(hamiltonian_matrix(v, grid, params), grid)


def boltzmann_diagonal(spec: SpectralDecomposition, beta: float) -> ThermalState:
    if beta <= 0:
        raise DomainError("beta must be positive")
    w = np.exp(-beta * spec.energies)
    rho = (spec.states ** 2) @ w
    return ThermalState(MeshFunction(rho, role="density"), float(np.sum(w)), float(beta))


def dZ_dv(spec: SpectralDecomposition, beta: float) -> MeshFunction:
    """dZ/dv(x) = -beta <x|exp(-beta H)|x>."""
    if beta == 0:
        return MeshFunction(np.zeros(spec.grid.n_x), role="derivative")
    return MeshFunction(-beta * boltzmann_diagonal(spec, beta).rho_diag.values,
                        role="derivative")


def _degenerate(E: np.ndarray, tol: float) -> np.ndarray:
    gap = np.abs(E[:, None] - E[None, :])
    return gap < tol * np.maximum(1.0, np.abs(E))[:, None]


def _contract(spec: SpectralDecomposition, xi_index: int, coeff: np.ndarray) -> np.ndarray:
    # sum_{a,g} coeff[a,g] phi_a(xi) phi_g(xi) phi_a(x'') phi_g(x'')
    if not 0 <= xi_index < spec.grid.n_x:
        raise DomainError(f"node index {xi_index} outside the mesh")
    B = spec.states * spec.states[xi_index][None, :]
    return np.einsum("xa,ag,xg->x", B, coeff, B)


def dRho_diag_dv(spec: SpectralDecomposition, beta: float, xi_index: int,
                 degeneracy_tol: float = DEGENERACY_TOL) -> MeshFunction:
    """Derivative of <x_i|exp(-beta H)|x_i> with respect to v(x''), for all x''.

    First-order perturbation theory: the diagonal term -beta e^{-beta E_a}
    |phi_a(x_i)|^2 |phi_a(x'')|^2 plus off-diagonal terms
    2 e^{-beta E_a} / (E_a - E_g) phi_a phi_g (x_i) phi_a phi_g (x'').
    Near-degenerate pairs take their exact limit -beta e^{-beta E}.
    """
    E = spec.energies
    w = np.exp(-beta * E)
    deg = _degenerate(E, degeneracy_tol)
    with np.errstate(divide="ignore", invalid="ignore"):
        coeff = 2.0 * w[:, None] / (E[:, None] - E[None, :])
    pair_limit = -beta * np.exp(-beta * 0.5 * (E[:, None] + E[None, :]))
    coeff = np.where(deg, pair_limit, coeff)
    coeff[np.diag_indices_from(coeff)] = -beta * w
    return MeshFunction(_contract(spec, xi_index, coeff), role="derivative")


def _beta_integral(E: np.ndarray, beta: float, deg: np.ndarray) -> np.ndarray:
    # int_0^beta exp(-b (E_g - E_a)) db, indexed [a, g]
    delta = E[None, :] - E[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.expm1(-beta * delta) / delta
    return np.where(deg, beta, out)


def dRho_diag_dv_betaintegral(spec: SpectralDecomposition, beta: float, xi_index: int,
                              degeneracy_tol: float = DEGENERACY_TOL) -> MeshFunction:
    """Same derivative as :func:`dRho_diag_dv`, via the imaginary-time integral

        -int_0^beta db <x_i|e^{-(beta-b)H}|x''><x''|e^{-b H}|x_i>

    carried out in closed form level by level.
    """
    E = spec.energies
    deg = _degenerate(E, degeneracy_tol)
    coeff = -np.exp(-beta * E)[:, None] * _beta_integral(E, beta, deg)
    return MeshFunction(_contract(spec, xi_index, coeff), role="derivative")


def exact_log_derivative(spec: SpectralDecomposition, beta: float, xi_index: int) -> MeshFunction:
    """d ln<x_i|exp(-beta H)|x_i> / dv(x'') as a density in x''."""
    rho_i = boltzmann_diagonal(spec, beta).rho_diag.values[xi_index]
    if rho_i <= 0:
        raise DomainError(f"zero thermal density at node {xi_index} (hard wall)")
    return MeshFunction(dRho_diag_dv_betaintegral(spec, beta, xi_index).values / rho_i,
                        role="derivative")

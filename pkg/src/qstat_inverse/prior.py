"""Gaussian-process smoothness prior over mesh potentials."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, Grid, MeshFunction, PotentialField

__all__ = [
    "PriorModel",
    "kernel_spacing",
    "laplacian_kernel",
    "make_prior",
    "prior_energy",
    "prior_gradient",
]


@dataclass(frozen=True)
class PriorModel:
    gamma: float
    kernel: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.kernel, dtype=float)
        ref = np.asarray(self.reference, dtype=float)
        if self.gamma < 0:
            raise DomainError("gamma must be non-negative")
        if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] != ref.size:
            raise DomainError("kernel must be square and match the reference length")
        if np.max(np.abs(K - K.T)) > 1e-12 * max(1.0, np.max(np.abs(K))):
            raise DomainError("kernel is not symmetric")
        if np.linalg.eigvalsh(K).min() < -1e-10:
            raise DomainError("kernel is not positive semi-definite")
        object.__setattr__(self, "kernel", K)
        object.__setattr__(self, "reference", ref)


def kernel_spacing(grid: Grid, spacing: str = "dx") -> float:
    """Step h in K = tridiag(-1, 2, -1)/h^2: the mesh step ``"dx"`` or the time step ``"tau"``."""
    if spacing == "dx":
        return grid.dx
    if spacing == "tau":
        return grid.eps
    raise DomainError(f"kernel spacing must be 'dx' or 'tau', got {spacing!r}")


def laplacian_kernel(grid: Grid, spacing: str = "dx") -> np.ndarray:
    """K = -Laplacian: tridiagonal (2, -1)/h^2 with the edge rows kept as printed."""
    n = grid.n_x
    K = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    return K / kernel_spacing(grid, spacing) ** 2


def make_prior(grid: Grid, gamma: float, reference=None, spacing: str = "dx") -> PriorModel:
    ref = np.zeros(grid.n_x) if reference is None else np.asarray(reference, dtype=float)
    return PriorModel(gamma=float(gamma), kernel=laplacian_kernel(grid, spacing), reference=ref)


def _shift(v, prior: PriorModel) -> np.ndarray:
    vals = v.values if isinstance(v, PotentialField) else np.asarray(v, dtype=float)
    if vals.shape != prior.reference.shape:
        raise DomainError(
            f"potential has {vals.size} nodes, prior expects {prior.reference.size}")
    return vals - prior.reference


def prior_energy(v, prior: PriorModel) -> float:
    """Gamma[v] = (v - v0)^T K (v - v0), a plain quadratic form (no dx weight)."""
    d = _shift(v, prior)
    return float(d @ prior.kernel @ d)


def prior_gradient(v, prior: PriorModel) -> MeshFunction:
    """Half the gradient of Gamma: K (v - v0)."""
    return MeshFunction(prior.kernel @ _shift(v, prior), role="derivative")

"""Physical parameters, the joint position/imaginary-time mesh, and mesh calculus.

Everything downstream works on an equidistant position mesh of ``n_x`` nodes
and an imaginary-time axis ``[0, beta*hbar]`` cut into ``n_tau`` steps.
Potentials live on the position nodes and are evaluated off-mesh by linear
interpolation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "DomainError",
    "PhysicsParams",
    "Grid",
    "PotentialField",
    "MeshFunction",
    "build_grid",
    "interp_potential",
    "interp_potential_deriv",
    "interp_potential_curvature",
    "out_of_range",
    "quadrature",
    "trapezoid_weights",
    "MeshPotential",
    "AnalyticPotential",
    "harmonic_potential",
    "as_potential",
    "slope_primitive",
    "fluctuation_curvature",
]


class DomainError(ValueError):
    """Raised for arguments outside an operation's domain."""


@dataclass(frozen=True)
class PhysicsParams:
    mass: float
    beta: float
    hbar: float = 1.0

    def __post_init__(self):
        for name in ("mass", "beta", "hbar"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0:
                raise DomainError(f"{name} must be positive, got {val}")

    @property
    def tau_max(self) -> float:
        """Length of the imaginary-time interval, beta*hbar."""
        return self.beta * self.hbar


@dataclass(frozen=True)
class Grid:
    n_x: int
    x_min: float
    x_max: float
    n_tau: int
    dx: float
    eps: float

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_x)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def tau(self) -> np.ndarray:
        return self.eps * np.arange(self.n_tau + 1)

    def node_index(self, x) -> np.ndarray:
        """Nearest mesh node for each position, clipped into the mesh."""
        idx = np.rint((np.asarray(x, dtype=float) - self.x_min) / self.dx)
        return np.clip(idx, 0, self.n_x - 1).astype(int)


@dataclass(frozen=True)
class PotentialField:
    values: np.ndarray
    reference: Optional[np.ndarray] = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise DomainError("potential values must be a 1-D vector")
        if not np.all(np.isfinite(vals)):
            raise DomainError("potential values must be finite")
        object.__setattr__(self, "values", vals)
        if self.reference is not None:
            ref = np.asarray(self.reference, dtype=float)
            if ref.shape != vals.shape:
                raise DomainError("reference potential has wrong length")
            object.__setattr__(self, "reference", ref)

    @property
    def n(self) -> int:
        return self.values.size

    def shifted(self) -> np.ndarray:
        """v - v0 (v0 = 0 when no reference is attached)."""
        if self.reference is None:
            return self.values.copy()
        return self.values - self.reference


@dataclass(frozen=True)
class MeshFunction:
    values: np.ndarray
    role: str = "density"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise DomainError("mesh function has non-finite entries")
        if self.role not in ("density", "residual", "derivative"):
            raise DomainError(f"unknown mesh-function role {self.role!r}")
        object.__setattr__(self, "values", vals)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def build_grid(n_x: int, x_min: float, x_max: float, n_tau: int,
               params: PhysicsParams) -> Grid:
    if int(n_x) != n_x or n_x < 3:
        raise DomainError(f"n_x must be an integer >= 3, got {n_x}")
    if int(n_tau) != n_tau or n_tau < 2:
        raise DomainError(f"n_tau must be an integer >= 2, got {n_tau}")
    if not x_min < x_max:
        raise DomainError(f"need x_min < x_max, got [{x_min}, {x_max}]")
    dx = (x_max - x_min) / (n_x - 1)
    eps = params.beta * params.hbar / n_tau
    return Grid(int(n_x), float(x_min), float(x_max), int(n_tau), dx, eps)


def _values(v) -> np.ndarray:
    if isinstance(v, PotentialField):
        return v.values
    return np.asarray(v, dtype=float)


def out_of_range(grid: Grid, x) -> np.ndarray:
    """Boolean mask of positions outside ``[x_min, x_max]`` (up to rounding)."""
    x = np.asarray(x, dtype=float)
    tol = 1e-12 * max(1.0, abs(grid.x_min), abs(grid.x_max))
    return (x < grid.x_min - tol) | (x > grid.x_max + tol)


def _locate(grid: Grid, x):
    # segment index j and fractional position t in [0, 1] within [x_j, x_{j+1}]
    s = (np.clip(np.asarray(x, dtype=float), grid.x_min, grid.x_max) - grid.x_min) / grid.dx
    j = np.clip(np.floor(s).astype(int), 0, grid.n_x - 2)
    return j, s - j


def interp_potential(v, grid: Grid, x):
    """Piecewise-linear interpolant of the node values.

    Positions outside the mesh are clamped to the boundary value; use
    :func:`out_of_range` to count them.
    """
    vals = _values(v)
    j, t = _locate(grid, x)
    out = (1.0 - t) * vals[j] + t * vals[j + 1]
    return float(out) if np.ndim(out) == 0 else out


def _node_slopes(vals: np.ndarray, dx: float) -> np.ndarray:
    s = np.empty_like(vals)
    s[1:-1] = (vals[2:] - vals[:-2]) / (2.0 * dx)
    s[0] = (vals[1] - vals[0]) / dx
    s[-1] = (vals[-1] - vals[-2]) / dx
    return s


def interp_potential_deriv(v, grid: Grid, x):
    """v'(x): centered difference at nodes, linear in between.

    Continuous in x, which the fixed-point path iteration needs; agrees with
    the segment slope for affine data.
    """
    slopes = _node_slopes(_values(v), grid.dx)
    j, t = _locate(grid, x)
    out = (1.0 - t) * slopes[j] + t * slopes[j + 1]
    return float(out) if np.ndim(out) == 0 else out


def interp_potential_curvature(v, grid: Grid, x):
    """v''(x) as the exact derivative of :func:`interp_potential_deriv`."""
    slopes = _node_slopes(_values(v), grid.dx)
    j, _ = _locate(grid, x)
    out = (slopes[j + 1] - slopes[j]) / grid.dx
    return float(out) if np.ndim(out) == 0 else out


def _node_curvatures(slopes: np.ndarray, dx: float) -> np.ndarray:
    c = np.empty_like(slopes)
    c[1:-1] = (slopes[2:] - slopes[:-2]) / (2.0 * dx)
    c[0] = (slopes[1] - slopes[0]) / dx
    c[-1] = (slopes[-1] - slopes[-2]) / dx
    return c


def fluctuation_curvature(v, grid: Grid, x):
    """Continuous v''(x) for the fluctuation operator: nodal curvatures, linear in between.

    :func:`interp_potential_curvature` jumps at every node, which makes the
    van Vleck prefactor jump whenever a path point crosses one.
    """
    curv = _node_curvatures(_node_slopes(_values(v), grid.dx), grid.dx)
    j, t = _locate(grid, x)
    out = (1.0 - t) * curv[j] + t * curv[j + 1]
    return float(out) if np.ndim(out) == 0 else out


def slope_primitive(v, grid: Grid, x):
    """Antiderivative of :func:`interp_potential_deriv`, equal to v at x_min.

    Piecewise quadratic and C^1; continued linearly with the end slopes
    outside the mesh, matching the clamped derivative there.  The discrete
    path equations are exactly stationarity conditions of the action built
    on this function.
    """
    vals = _values(v)
    slopes = _node_slopes(vals, grid.dx)
    nodes = vals[0] + np.concatenate(
        ([0.0], np.cumsum(0.5 * grid.dx * (slopes[:-1] + slopes[1:]))))
    xa = np.asarray(x, dtype=float)
    j, t = _locate(grid, xa)
    out = nodes[j] + grid.dx * (t * slopes[j] + 0.5 * t * t * (slopes[j + 1] - slopes[j]))
    out = out + np.where(xa < grid.x_min, slopes[0] * (xa - grid.x_min), 0.0)
    out = out + np.where(xa > grid.x_max, slopes[-1] * (xa - grid.x_max), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def trapezoid_weights(grid: Grid) -> np.ndarray:
    w = np.full(grid.n_x, grid.dx)
    w[0] = w[-1] = 0.5 * grid.dx
    return w


def quadrature(f, grid: Grid) -> float:
    """Trapezoid-rule integral over the mesh."""
    vals = np.asarray(f, dtype=float)
    if vals.shape[-1] != grid.n_x:
        raise DomainError("mesh function length does not match the grid")
    return float(vals @ trapezoid_weights(grid))


class MeshPotential:
    """Mesh-sampled potential seen by the path solver as a smooth-ish function."""

    def __init__(self, v, grid: Grid):
        self.values = _values(v)
        if self.values.size != grid.n_x:
            raise DomainError("potential length does not match the grid")
        self.grid = grid

    def value(self, q):
        return interp_potential(self.values, self.grid, q)

    def deriv(self, q):
        return interp_potential_deriv(self.values, self.grid, q)

    def curvature(self, q):
        return interp_potential_curvature(self.values, self.grid, q)

    def primitive(self, q):
        return slope_primitive(self.values, self.grid, q)

    def fluct_curvature(self, q):
        return fluctuation_curvature(self.values, self.grid, q)

    def clamps(self, q) -> int:
        return int(np.count_nonzero(out_of_range(self.grid, q)))


@dataclass(frozen=True)
class AnalyticPotential:
    """Closed-form potential; used by the analytic oracles."""

    value: Callable
    deriv: Callable
    curvature: Callable
    name: str = field(default="analytic")

    def primitive(self, q):
        return self.value(q)

    def fluct_curvature(self, q):
        return self.curvature(q)

    def clamps(self, q) -> int:
        return 0


def harmonic_potential(mass: float, omega: float, center: float = 0.0) -> AnalyticPotential:
    k = mass * omega ** 2
    return AnalyticPotential(
        value=lambda q: 0.5 * k * (np.asarray(q) - center) ** 2,
        deriv=lambda q: k * (np.asarray(q) - center),
        curvature=lambda q: np.full(np.shape(q), k) if np.ndim(q) else k,
        name=f"harmonic(omega={omega})",
    )


def as_potential(v, grid: Grid):
    """Wrap mesh data as a :class:`MeshPotential`; pass analytic potentials through."""
    if isinstance(v, (MeshPotential, AnalyticPotential)):
        return v
    return MeshPotential(v, grid)

"""Stationary-phase approximations around the classical paths.

Diagonal elements of the statistical operator are approximated by
``A_x exp(-S[q_x]/hbar)``.  The fluctuation prefactor ``A_x`` comes from the
Jacobi field kappa of the fluctuation operator ``-m d^2/dtau^2 + v''(q_x)``
started with kappa(0) = 0, kappa'(0) = 1 (Gel'fand-Yaglom):

    A_x = sqrt(m / (2 pi hbar kappa(beta hbar)))

On the time lattice this is exact for the discretized Gaussian integral, so
quadratic potentials reproduce the lattice propagator to machine precision.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr

from .core import (
    _locate,
    _node_curvatures,
    _node_slopes,
    DomainError,
    Grid,
    MeshFunction,
    PhysicsParams,
    as_potential,
    interp_potential_deriv,
    quadrature,
)
from .paths import (
    ClassicalPath,
    PathSolverConfig,
    action_second_derivative,
    occupation_histogram,
    solve_leg,
    solve_path,
    solve_paths,
)

__all__ = [
    "SemiclassicalError",
    "FluctuationData",
    "SemiclassicalState",
    "StationaryPartition",
    "jacobi_field",
    "fluctuation_data",
    "prefactor_from_velocity",
    "van_vleck_element",
    "van_vleck_cross_check",
    "semiclassical_partition",
    "stationary_partition",
    "classical_density",
    "fluctuation_green_function",
    "log_deriv_approach1",
    "log_deriv_approach2",
    "log_deriv_approach3",
    "two_leg_actions",
    "vanvleck_log_gradient",
]

logger = logging.getLogger(__name__)


class SemiclassicalError(RuntimeError):
    """A stationary-phase evaluation has no valid saddle to expand around."""


@dataclass
class FluctuationData:
    kappa: np.ndarray
    prefactor: float
    r_diag: np.ndarray
    valid: bool


@dataclass
class SemiclassicalState:
    diag: MeshFunction
    partition: float
    paths: list
    fluct: list
    failed_nodes: list = field(default_factory=list)

    @property
    def normalized(self) -> np.ndarray:
        return self.diag.values / self.partition

    @property
    def invalid_nodes(self) -> list:
        return [j for j, f in enumerate(self.fluct) if not f.valid]


class StationaryPartition(NamedTuple):
    x0: float
    Z: float
    at_edge: bool


def jacobi_field(path: ClassicalPath, v, grid: Grid, params: PhysicsParams) -> np.ndarray:
    """Lattice solution of m kappa'' = v''(q) kappa with kappa_0 = 0, kappa_1 = eps."""
    pot = as_potential(v, grid)
    eps, n = path.eps, path.n_steps
    curv = np.asarray(pot.fluct_curvature(path.q), dtype=float) * np.ones(n + 1)
    kappa = np.zeros(n + 1)
    kappa[1] = eps
    c = eps ** 2 / params.mass
    for k in range(1, n):
        kappa[k + 1] = (2.0 + c * curv[k]) * kappa[k] - kappa[k - 1]
    return kappa


def _hesse_operator(path, pot, params):
    # interior block of -m d^2/dtau^2 + v''(q) on the time lattice
    eps, n = path.eps, path.n_steps
    c = params.mass / eps ** 2
    curv = np.asarray(pot.fluct_curvature(path.q[1:-1]), dtype=float) * np.ones(n - 1)
    L = np.diag(2.0 * c + curv) - c * (np.eye(n - 1, k=1) + np.eye(n - 1, k=-1))
    return L


def fluctuation_green_function(path: ClassicalPath, v, grid: Grid,
                               params: PhysicsParams) -> np.ndarray:
    """R(tau_k, tau_l) of (-m d^2/dtau^2 + v''(q_x)) R = delta, R = 0 at both ends.

    The lattice delta is 1/eps, so R = L^{-1} / eps on the interior and zero
    on the boundary rows and columns.
    """
    pot = as_potential(v, grid)
    n = path.n_steps
    L = _hesse_operator(path, pot, params)
    lam = np.linalg.eigvalsh(L)
    if np.min(np.abs(lam)) < 1e-12 * np.max(np.abs(lam)):
        raise SemiclassicalError("fluctuation operator has a zero mode")
    R = np.zeros((n + 1, n + 1))
    R[1:-1, 1:-1] = np.linalg.inv(L) / path.eps
    return 0.5 * (R + R.T)


def fluctuation_data(path: ClassicalPath, v, grid: Grid, params: PhysicsParams,
                     with_green: bool = True) -> FluctuationData:
    kappa = jacobi_field(path, v, grid, params)
    # positive leading minors of the Hesse matrix <=> all kappa_k > 0
    valid = bool(np.all(kappa[2:] > 0))
    kn = kappa[-1]
    if kn == 0:
        valid, kn = False, np.finfo(float).tiny
    prefactor = float(np.sqrt(params.mass / (2.0 * np.pi * params.hbar * abs(kn))))
    r_diag = np.full(path.n_steps + 1, np.nan)
    if with_green:
        try:
            r_diag = np.diag(fluctuation_green_function(path, v, grid, params)).copy()
        except SemiclassicalError:
            valid = False
    return FluctuationData(kappa=kappa, prefactor=prefactor, r_diag=r_diag, valid=valid)


def prefactor_from_velocity(path: ClassicalPath, params: PhysicsParams) -> Optional[float]:
    """Prefactor from kappa = qdot: (2 pi hbar/m kappa(T) kappa(0) int dtau/kappa^2)^{-1/2}.

    Returns None when the velocity changes sign (turning point on the path),
    where this form breaks down.
    """
    vel = path.velocity
    if np.any(vel == 0) or np.any(np.sign(vel) != np.sign(vel[0])):
        return None
    # one-sided second-order velocity estimates at the ends
    q, eps = path.q, path.eps
    v0 = (-3 * q[0] + 4 * q[1] - q[2]) / (2 * eps)
    vT = (3 * q[-1] - 4 * q[-2] + q[-3]) / (2 * eps)
    integral = eps * np.sum(1.0 / vel ** 2)
    rad = 2.0 * np.pi * params.hbar / params.mass * v0 * vT * integral
    if rad <= 0:
        return None
    return float(rad ** -0.5)


def van_vleck_element(v, grid: Grid, params: PhysicsParams, x: float,
                      config: PathSolverConfig = PathSolverConfig(),
                      path: Optional[ClassicalPath] = None):
    """Semiclassical <x|exp(-beta H)|x> = A_x exp(-S[q_x]/hbar) and its fluctuation data."""
    if path is None:
        path = solve_path(v, grid, params, x, config)
    if not path.converged:
        raise SemiclassicalError(f"classical path at x={x} did not converge")
    fl = fluctuation_data(path, v, grid, params)
    if not fl.valid:
        logger.debug("non-positive fluctuation operator at x=%g", x)
    return fl.prefactor * np.exp(-path.action / params.hbar), fl


def van_vleck_cross_check(v, grid: Grid, params: PhysicsParams, x: float,
                          config: PathSolverConfig = PathSolverConfig()) -> float:
    """Prefactor from the mixed endpoint derivative of the action (second route).

    Returns the signed radicand's square root; NaN when the radicand is negative.
    """
    d2 = action_second_derivative(v, grid, params, x, config)
    rad = -d2 / (2.0 * np.pi * params.hbar)
    return float(np.sqrt(rad)) if rad > 0 else float("nan")


def semiclassical_partition(v, grid: Grid, params: PhysicsParams,
                            config: PathSolverConfig = PathSolverConfig(),
                            q_init=None, max_failed_fraction: float = 0.2,
                            with_green: bool = False) -> SemiclassicalState:
    """Van Vleck diagonal at every mesh node, Z by trapezoid quadrature."""
    paths = solve_paths(v, grid, params, grid.x, config, q_init=q_init)
    failed = [j for j, p in enumerate(paths) if not p.converged]
    if len(failed) > max_failed_fraction * grid.n_x:
        raise SemiclassicalError(f"classical paths failed at mesh nodes {failed}")
    fluct = [fluctuation_data(p, v, grid, params, with_green=with_green) for p in paths]
    with np.errstate(over="ignore"):
        diag = np.array([f.prefactor * np.exp(-p.action / params.hbar)
                         for p, f in zip(paths, fluct)])
    if not np.all(np.isfinite(diag)):
        raise SemiclassicalError("diagonal overflows; shift v up by a constant")
    Z = quadrature(diag, grid)
    if not Z > 0:
        raise SemiclassicalError("semiclassical partition function is not positive")
    return SemiclassicalState(MeshFunction(diag), float(Z), paths, fluct, failed)


def stationary_partition(v, grid: Grid, params: PhysicsParams,
                         config: PathSolverConfig = PathSolverConfig(),
                         state: Optional[SemiclassicalState] = None) -> StationaryPartition:
    """Saddle-point Z: stationary x0 of S[q_x], Gaussian integral over x around it.

    x0 is refined by a parabola through the mesh minimum and its neighbours;
    Z = A_{x0} exp(-S(x0)/hbar) sqrt(2 pi hbar / S''(x0)).
    """
    if state is None:
        state = semiclassical_partition(v, grid, params, config)
    S = np.array([p.action for p in state.paths])
    j = int(np.argmin(S))
    at_edge = j in (0, grid.n_x - 1)
    if at_edge:
        logger.warning("action minimum sits on the mesh edge")
        j = 1 if j == 0 else grid.n_x - 2
    s_m, s_0, s_p = S[j - 1], S[j], S[j + 1]
    curv = (s_p - 2.0 * s_0 + s_m) / grid.dx ** 2
    if curv <= 0:
        raise SemiclassicalError("action has no local minimum in x")
    shift = 0.5 * grid.dx * (s_m - s_p) / (s_p - 2.0 * s_0 + s_m)
    x0 = grid.x[j] + shift
    s_min = s_0 - 0.125 * (s_p - s_m) ** 2 / (s_p - 2.0 * s_0 + s_m)
    path0 = solve_path(v, grid, params, x0, config, q_init=state.paths[j].q - grid.x[j] + x0)
    pref = fluctuation_data(path0, v, grid, params, with_green=False).prefactor
    Z = pref * np.exp(-s_min / params.hbar) * np.sqrt(2.0 * np.pi * params.hbar / curv)
    return StationaryPartition(float(x0), float(Z), at_edge)


def classical_density(v, grid: Grid, params: PhysicsParams) -> MeshFunction:
    """Normalized Boltzmann density exp(-beta v) / int exp(-beta v)."""
    vals = np.asarray(getattr(v, "values", v), dtype=float)
    w = np.exp(-params.beta * (vals - vals.min()))
    return MeshFunction(w / quadrature(w, grid), role="density")


def log_deriv_approach1(path: ClassicalPath, grid: Grid, hbar: float = 1.0) -> MeshFunction:
    """Classical-path log derivative: -(1/hbar) int dtau delta(q(tau) - x') on the mesh."""
    h = occupation_histogram(path, grid).values
    return MeshFunction(-h / (hbar * grid.dx), role="derivative")


def log_deriv_approach2(path: ClassicalPath, fluct: FluctuationData, grid: Grid,
                        params: PhysicsParams) -> MeshFunction:
    """Delta functions of approach 1 smeared into Gaussians of variance hbar R(tau, tau).

    Each time slice tau_k, k = 1..n, contributes the mass of a normalized
    Gaussian centred on q_k that falls into each mesh cell [x - dx/2, x + dx/2].
    Slices with zero variance (the path ends) are point masses at the
    rounded position, so the zero-width limit is exactly approach 1.
    """
    q = path.q[1:]
    var = params.hbar * np.asarray(fluct.r_diag[1:], dtype=float)
    interior = var[:-1]
    if np.any(~np.isfinite(interior)) or np.any(interior < 0):
        raise SemiclassicalError("fluctuation Green function has a negative diagonal")
    var = np.where(var < 0, 0.0, var)
    edges = grid.x_min + grid.dx * (np.arange(grid.n_x + 1) - 0.5)
    mass = np.zeros(grid.n_x)
    point = var == 0
    if np.any(point):
        mass += np.bincount(grid.node_index(q[point]), minlength=grid.n_x)
    if np.any(~point):
        sig = np.sqrt(var[~point])
        cdf = ndtr((edges[None, :] - q[~point, None]) / sig[:, None])
        mass += np.sum(np.diff(cdf, axis=1), axis=0)
    return MeshFunction(-path.eps * mass / (params.hbar * grid.dx), role="derivative")


@dataclass
class TwoLegScan:
    k: np.ndarray
    actions: np.ndarray
    energy_in: np.ndarray
    energy_out: np.ndarray
    prefactors: np.ndarray
    converged: np.ndarray


def two_leg_actions(v, grid: Grid, params: PhysicsParams, xi: float, xprime: float,
                    config: PathSolverConfig = PathSolverConfig()) -> TwoLegScan:
    """S1 + S2 for the broken path xi -> xprime (k steps) -> xi (n - k steps), k = 1..n-1."""
    n = grid.n_tau
    ks = np.arange(1, n)
    acts, e_in, e_out, pref, conv = [], [], [], [], []
    for k in ks:
        leg1 = solve_leg(v, grid, params, xi, xprime, k, config)[0]
        leg2 = solve_leg(v, grid, params, xprime, xi, n - k, config)[0]
        acts.append(leg1.action + leg2.action)
        pot = as_potential(v, grid)
        # energies on the intervals adjacent to the junction
        vel1 = (leg1.q[-1] - leg1.q[-2]) / grid.eps
        vel2 = (leg2.q[1] - leg2.q[0]) / grid.eps
        e_in.append(0.5 * params.mass * vel1 ** 2 - pot.value(0.5 * (leg1.q[-1] + leg1.q[-2])))
        e_out.append(0.5 * params.mass * vel2 ** 2 - pot.value(0.5 * (leg2.q[1] + leg2.q[0])))
        a1 = fluctuation_data(leg1, v, grid, params, with_green=False)
        a2 = fluctuation_data(leg2, v, grid, params, with_green=False)
        pref.append(a1.prefactor * a2.prefactor)
        conv.append(leg1.converged and leg2.converged)
    return TwoLegScan(ks, np.array(acts), np.array(e_in, float), np.array(e_out, float),
                      np.array(pref), np.array(conv))


def log_deriv_approach3(v, grid: Grid, params: PhysicsParams, xi: float, xprime_index: int,
                        config: PathSolverConfig = PathSolverConfig(),
                        return_details: bool = False):
    """Log derivative from the saddle point of the split-time integral.

    The broken path xi -> x' -> xi is scanned over the split time beta';
    at the minimum of S1 + S2 the two legs carry equal energy.  The
    beta'-integral is done by Laplace's method around that minimum.  The
    result is a density in x' like the other approaches.  Laplace's method
    degrades as x' -> xi, where S1 + S2 flattens in beta'.
    """
    if not 0 <= xprime_index < grid.n_x:
        raise DomainError(f"node index {xprime_index} outside the mesh")
    xprime = grid.x[xprime_index]
    closed = solve_path(v, grid, params, xi, config)
    if not closed.converged:
        raise SemiclassicalError(f"closed path at x={xi} did not converge")
    a_closed = fluctuation_data(closed, v, grid, params, with_green=False).prefactor
    scan = two_leg_actions(v, grid, params, xi, xprime, config)
    g = np.where(scan.converged, scan.actions, np.inf)
    j = int(np.argmin(g))
    if j == 0 or j == g.size - 1 or not np.isfinite(g[j]):
        raise SemiclassicalError(
            f"no stationary split time for x_i={xi}, x'={xprime}")
    g_m, g_0, g_p = g[j - 1], g[j], g[j + 1]
    second = g_p - 2.0 * g_0 + g_m
    if second <= 1e-14 * max(1.0, abs(g_0)):
        raise SemiclassicalError("split-time action is flat; Laplace factor undefined")
    g_star = g_0 - 0.125 * (g_p - g_m) ** 2 / second
    # curvature in beta' = tau'/hbar
    d2 = second / grid.eps ** 2 * params.hbar ** 2
    a_beta = np.sqrt(2.0 * np.pi * params.hbar / d2)
    value = -a_beta * scan.prefactors[j] / a_closed * np.exp(
        -(g_star - closed.action) / params.hbar)
    if return_details:
        return float(value), {"k": int(scan.k[j]), "beta_prime": scan.k[j] * grid.eps / params.hbar,
                              "energy_in": float(scan.energy_in[j]),
                              "energy_out": float(scan.energy_out[j]), "scan": scan}
    return float(value)


def vanvleck_log_gradient(path: ClassicalPath, v, grid: Grid, params: PhysicsParams,
                          green: Optional[np.ndarray] = None) -> np.ndarray:
    """d ln(A_x exp(-S[q_x]/hbar)) / d v_j for every mesh node j.

    S changes through the explicit v(q_k) (linear-interpolation weights) and,
    because the path equation uses the smoothed slope rather than the segment
    slope, through the shift of the path itself (adjoint solve with the
    path Jacobian).  ln A_x = -ln(kappa_n)/2 + const with
    d ln kappa_n / d v''(q_k) = eps R(tau_k, tau_k); v''(q_k) depends on the
    node values directly and through the path point q_k.
    """
    vals = np.asarray(getattr(v, "values", v), dtype=float)
    eps, n = path.eps, path.n_steps
    q_in = path.q[1:n]
    if green is None:
        green = fluctuation_green_function(path, vals, grid, params)
    R = green[1:n, 1:n]
    D = _node_slopes(np.eye(grid.n_x), grid.dx)

    dS = np.zeros(grid.n_x)
    j, t = _locate(grid, path.q[1:])
    np.add.at(dS, j, eps * (1.0 - t))
    np.add.at(dS, j + 1, eps * t)
    seg, t_in = _locate(grid, q_in)
    # dS/dq_k on the solved path: eps * (segment slope - smoothed slope)
    seg_slope = (vals[seg + 1] - vals[seg]) / grid.dx
    smooth = interp_potential_deriv(vals, grid, q_in)
    dS_dq = eps * (seg_slope - smooth)
    # path equations F_k = -(m/eps^2) lap q + v'(q_k); their Jacobian J uses the
    # exact derivative of v', so dq/dv = -J^{-1} dF/dv
    dF_dv = (1.0 - t_in)[:, None] * D[seg] + t_in[:, None] * D[seg + 1]
    c = params.mass / eps ** 2
    ab = np.empty((3, n - 1))
    ab[0], ab[2] = -c, -c
    ab[1] = 2.0 * c + (D[seg + 1] - D[seg]) @ vals / grid.dx
    lam = solve_banded((1, 1), ab, dS_dq)
    dS -= lam @ dF_dv

    # c_k = v''(q_k) of the fluctuation operator moves with the nodal
    # curvatures C = M v and through the path shift
    M = _node_curvatures(D, grid.dx)
    dc_dv = (1.0 - t_in)[:, None] * M[seg] + t_in[:, None] * M[seg + 1]
    C = M @ vals
    dc_dq = (C[seg + 1] - C[seg]) / grid.dx
    rd = np.diag(R)
    mu = solve_banded((1, 1), ab, rd * dc_dq)
    dlogA = -0.5 * eps * (rd @ dc_dv - mu @ dF_dv)
    return dlogA - dS / params.hbar

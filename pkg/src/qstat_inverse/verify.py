"""Oracle suite behind ``qstat-inverse verify``.

Each check compares a library result with an independent reference:
finite differences, a second analytic route, or a closed-form propagator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PhysicsParams, build_grid, harmonic_potential
from .paths import PathSolverConfig, path_energy, solve_path
from .prior import make_prior, prior_energy, prior_gradient
from .semiclassical import (
    fluctuation_green_function,
    log_deriv_approach1,
    semiclassical_partition,
    van_vleck_element,
)
from .spectral import (
    boltzmann_diagonal,
    dRho_diag_dv,
    dRho_diag_dv_betaintegral,
    dZ_dv,
    spectral_decomposition,
)

__all__ = ["Check", "run_checks", "format_table"]


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tolerance)


def _random_case(seed=0):
    params = PhysicsParams(mass=0.1, beta=6.0)
    grid = build_grid(30, 0.0, 29.0, 30, params)
    v = np.random.default_rng(seed).normal(0.0, 0.3, grid.n_x)
    return params, grid, v


def check_dZ(h=1e-5) -> Check:
    params, grid, v = _random_case()
    spec = spectral_decomposition(v, grid, params)
    an = dZ_dv(spec, params.beta).values

    def Z(vv):
        return boltzmann_diagonal(spectral_decomposition(vv, grid, params), params.beta).partition
    fd = np.array([(Z(v + h * e) - Z(v - h * e)) / (2 * h * grid.dx) for e in np.eye(grid.n_x)])
    return Check("dZ/dv vs finite differences (rel)",
                 float(np.linalg.norm(an - fd) / np.linalg.norm(fd)), 1e-4)


def check_routes() -> Check:
    params, grid, v = _random_case()
    spec = spectral_decomposition(v, grid, params)
    worst = max(np.max(np.abs(dRho_diag_dv(spec, params.beta, j).values
                              - dRho_diag_dv_betaintegral(spec, params.beta, j).values))
                for j in range(grid.n_x))
    return Check("eigensum vs beta-integral route (abs)", float(worst), 1e-10)


def check_dRho(h=1e-5, xi=14) -> Check:
    params, grid, v = _random_case()
    an = dRho_diag_dv(spectral_decomposition(v, grid, params), params.beta, xi).values

    def rho(vv):
        th = boltzmann_diagonal(spectral_decomposition(vv, grid, params), params.beta)
        return th.rho_diag.values[xi]
    fd = np.array([(rho(v + h * e) - rho(v - h * e)) / (2 * h * grid.dx) for e in np.eye(grid.n_x)])
    return Check("d rho(x_i)/dv vs finite differences (rel)",
                 float(np.linalg.norm(an - fd) / np.linalg.norm(fd)), 1e-4)


def check_harmonic_path() -> Check:
    params = PhysicsParams(1.0, 1.0)
    grid = build_grid(41, -4.0, 4.0, 400, params)
    pot = harmonic_potential(1.0, 1.0)
    path = solve_path(pot, grid, params, 1.0, PathSolverConfig(eta_q=1.0, tol=1e-10))
    t = grid.tau
    exact = np.cosh(t - 0.5) / np.cosh(0.5)
    err = float(np.max(np.abs(path.q - exact)))
    return Check("harmonic path vs cosh solution (Linf)", err, 1e-6)


def check_energy_drift() -> Check:
    params = PhysicsParams(1.0, 1.0)
    pot = harmonic_potential(1.0, 1.0)
    drift = []
    for n in (100, 200):
        grid = build_grid(41, -4.0, 4.0, n, params)
        path = solve_path(pot, grid, params, 1.0, PathSolverConfig(eta_q=1.0, tol=1e-11))
        drift.append(path_energy(path, pot, grid, params)[1])
    ratio = drift[0] / drift[1]
    return Check("energy drift ratio under eps/2 (|ratio-4|)", abs(ratio - 4.0), 0.5)


def check_mehler() -> Check:
    params = PhysicsParams(1.0, 1.0)
    grid = build_grid(41, -4.0, 4.0, 200, params)
    pot = harmonic_potential(1.0, 1.0)
    worst = 0.0
    for x in (0.0, 0.5, 1.0):
        val, _ = van_vleck_element(pot, grid, params, x, PathSolverConfig(eta_q=1.0, tol=1e-10))
        exact = np.sqrt(1.0 / (2 * np.pi * np.sinh(1.0))) * np.exp(-x * x * np.tanh(0.5))
        worst = max(worst, abs(val / exact - 1.0))
    return Check("van Vleck vs Mehler diagonal (rel)", worst, 5e-3)


def check_free_green() -> Check:
    params = PhysicsParams(0.7, 2.0)
    grid = build_grid(11, -1.0, 1.0, 40, params)
    v = np.zeros(grid.n_x)
    path = solve_path(v, grid, params, 0.0)
    R = fluctuation_green_function(path, v, grid, params)
    t, T = grid.tau, params.tau_max
    exact = np.minimum.outer(t, t) * (T - np.maximum.outer(t, t)) / (params.mass * T)
    return Check("free Green function vs closed form (abs)", float(np.max(np.abs(R - exact))), 1e-8)


def check_free_box() -> Check:
    params = PhysicsParams(1.0, 1.0)
    grid = build_grid(201, -10.0, 10.0, 10, params)
    th = boltzmann_diagonal(spectral_decomposition(np.zeros(grid.n_x), grid, params), 1.0)
    inner = th.rho_diag.values[80:121]
    ref = np.sqrt(1.0 / (2 * np.pi))
    return Check("free box interior diagonal (rel)", float(np.max(np.abs(inner / ref - 1))), 0.02)


def check_harmonic_Z() -> Check:
    params = PhysicsParams(1.0, 1.0)
    grid = build_grid(201, -8.0, 8.0, 10, params)
    v = 0.5 * grid.x ** 2
    Z = boltzmann_diagonal(spectral_decomposition(v, grid, params), 1.0).partition
    return Check("harmonic Z, exact backend (rel)", abs(Z * 2 * np.sinh(0.5) - 1.0), 0.01)


def check_approach1_mass() -> Check:
    params = PhysicsParams(0.1, 6.0)
    grid = build_grid(30, 0.0, 29.0, 30, params)
    v = -1.0 / (1.0 + np.exp(0.5 * (np.abs(grid.x - 15.0) - 4.0)))
    st = semiclassical_partition(v, grid, params)
    worst = max(abs(np.sum(log_deriv_approach1(p, grid).values) * grid.dx + params.beta)
                for p in st.paths)
    return Check("approach-1 mass + beta (abs)", float(worst), 1e-12)


def check_prior_gradient(h=1e-6) -> Check:
    params, grid, v = _random_case(3)
    prior = make_prior(grid, 1.0)
    an = prior_gradient(v, prior).values
    fd = np.array([(prior_energy(v + h * e, prior) - prior_energy(v - h * e, prior)) / (4 * h)
                   for e in np.eye(grid.n_x)])
    return Check("prior gradient vs finite differences (rel)",
                 float(np.max(np.abs(an - fd)) / np.max(np.abs(fd))), 1e-6)


CHECKS = (check_dZ, check_routes, check_dRho, check_harmonic_path, check_energy_drift,
          check_mehler, check_free_green, check_free_box, check_harmonic_Z,
          check_approach1_mass, check_prior_gradient)


def run_checks() -> list:
    return [c() for c in CHECKS]


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'value':>10}  {'tol':>8}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.value:10.3e}  {r.tolerance:8.1e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)

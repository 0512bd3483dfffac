import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qstat_inverse import (
    DomainError,
    PathSolverConfig,
    PhysicsParams,
    build_grid,
    harmonic_potential,
    occupation_histogram,
    path_action,
    solve_path,
    solve_paths,
)
from qstat_inverse.paths import _homotopy_solve, _newton_polish, equation_residual, solve_leg
from qstat_inverse.core import as_potential

HARM = harmonic_potential(1.0, 1.0)
P1 = PhysicsParams(1.0, 1.0)


def test_harmonic_closed_form():
    grid = build_grid(41, -4.0, 4.0, 400, P1)
    path = solve_path(HARM, grid, P1, 1.0, PathSolverConfig(eta_q=1.0, tol=1e-10))
    assert path.converged and path.is_closed
    exact = np.cosh(grid.tau - 0.5) / np.cosh(0.5)
    assert np.max(np.abs(path.q - exact)) < 1e-6


def test_free_leg_is_straight():
    params = PhysicsParams(2.0, 3.0)
    grid = build_grid(11, -1.0, 1.0, 20, params)
    leg = solve_leg(np.zeros(grid.n_x), grid, params, -0.5, 0.7, grid.n_tau)[0]
    assert np.allclose(leg.q, np.linspace(-0.5, 0.7, 21), atol=1e-12)
    assert not leg.is_closed


@settings(max_examples=25, deadline=None)
@given(st.floats(-2.5, 2.5), st.floats(0.3, 3.0))
def test_solution_satisfies_equations(x, beta):
    params = PhysicsParams(1.0, beta)
    grid = build_grid(41, -4.0, 4.0, 60, params)
    path = solve_path(HARM, grid, params, x)
    r = equation_residual(HARM, params.mass, grid.eps, path.q)
    assert path.converged
    assert np.max(np.abs(r)) < 1e-8
    # closed paths in the inverted harmonic well move towards the centre and back
    assert path.q[0] == path.q[-1] == x
    assert np.all(np.abs(path.q) <= abs(x) + 1e-12)


def test_energy_drift_is_second_order():
    drift = []
    for n in (100, 200):
        grid = build_grid(41, -4.0, 4.0, n, P1)
        path = solve_path(HARM, grid, P1, 1.0, PathSolverConfig(eta_q=1.0, tol=1e-11))
        e = 0.5 * P1.mass * path.velocity ** 2 - HARM.value(0.5 * (path.q[1:] + path.q[:-1]))
        drift.append(np.max(np.abs(e - e.mean())))
    assert 3.5 < drift[0] / drift[1] < 4.5


def test_action_recomputed_matches_solver(fig3_case):
    params, grid, v = fig3_case
    p = solve_path(v, grid, params, 12.0)
    assert path_action(p, v, grid, params) == pytest.approx(p.action, rel=1e-12)


def test_histogram_total_time(fig3_case):
    params, grid, v = fig3_case
    p = solve_path(v, grid, params, 9.0)
    assert occupation_histogram(p, grid).values.sum() == pytest.approx(params.tau_max)


def test_batch_equals_single(fig3_case):
    params, grid, v = fig3_case
    xs = [4.0, 11.0, 15.0, 22.0]
    batch = solve_paths(v, grid, params, xs)
    for x, b in zip(xs, batch):
        single = solve_path(v, grid, params, x)
        assert np.allclose(b.q, single.q, atol=1e-7)


def _cosine_well(params):
    grid = build_grid(30, 0.0, 29.0, 30, params)
    x = grid.x
    v = np.where((x >= 5) & (x <= 25), 0.25 * (np.cos(2 * np.pi * (x - 15) / 10) - 1), 0.0)
    return grid, v


def test_light_particle_paths_converge():
    params = PhysicsParams(0.05, 10.0)
    grid, v = _cosine_well(params)
    pot = as_potential(v, grid)
    paths = solve_paths(v, grid, params, grid.x)
    assert all(p.converged for p in paths)
    for p in paths:
        assert np.max(np.abs(equation_residual(pot, params.mass, grid.eps, p.q))) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 29), st.integers(0, 2 ** 31))
def test_solution_minimizes_action(j, seed):
    # the path equations are stationarity of the action built on the slope primitive
    params = PhysicsParams(0.3, 10.0)
    grid, v = _cosine_well(params)
    pot = as_potential(v, grid)
    p = solve_path(v, grid, params, grid.x[j])

    def S(q):
        return (0.5 * params.mass * np.sum(np.diff(q) ** 2) / grid.eps
                + grid.eps * np.sum(pot.primitive(q[1:-1])))
    dq = np.zeros_like(p.q)
    dq[1:-1] = np.random.default_rng(seed).normal(0.0, 1e-3, p.q.size - 2)
    assert S(p.q + dq) >= S(p.q) - 1e-12


def test_newton_polish_is_fast():
    grid = build_grid(41, -4.0, 4.0, 100, P1)
    exact = np.cosh(grid.tau - 0.5) / np.cosh(0.5)
    q0 = exact.copy()
    q0[1:-1] += 0.05 * np.sin(np.pi * grid.tau[1:-1])
    q, r, it = _newton_polish(HARM, 1.0, grid.eps, q0, 1e-10, 50)
    assert r < 1e-10 and it <= 3


def test_homotopy_reaches_solution():
    params = PhysicsParams(0.3, 10.0)
    grid, v = _cosine_well(params)
    pot = as_potential(v, grid)
    q_lin = np.full(grid.n_tau + 1, 12.0)
    q, r, _ = _homotopy_solve(pot, params.mass, grid.eps, q_lin, 1e-9, 200)
    assert r < 1e-9
    assert np.max(np.abs(equation_residual(pot, params.mass, grid.eps, q))) < 1e-9


def test_config_and_q_init_validation():
    with pytest.raises(DomainError):
        PathSolverConfig(eta_q=0.0)
    with pytest.raises(DomainError):
        PathSolverConfig(tol=0.0)
    grid = build_grid(11, -1.0, 1.0, 10, P1)
    with pytest.raises(DomainError):
        solve_path(HARM, grid, P1, 0.5, q_init=np.zeros(5))
    with pytest.raises(DomainError):
        solve_path(HARM, grid, P1, 0.5, q_init=np.zeros(11))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qstat_inverse import (
    PathSolverConfig,
    PhysicsParams,
    build_grid,
    classical_density,
    fluctuation_green_function,
    harmonic_potential,
    log_deriv_approach1,
    log_deriv_approach2,
    log_deriv_approach3,
    quadrature,
    semiclassical_partition,
    solve_path,
    stationary_partition,
    van_vleck_element,
)
from qstat_inverse.paths import solve_leg
from qstat_inverse.semiclassical import (
    fluctuation_data,
    jacobi_field,
    prefactor_from_velocity,
    van_vleck_cross_check,
    vanvleck_log_gradient,
)

P1 = PhysicsParams(1.0, 1.0)
HARM = harmonic_potential(1.0, 1.0)
TIGHT = PathSolverConfig(eta_q=1.0, tol=1e-10)


def mehler_diag(x, beta=1.0):
    return np.sqrt(1.0 / (2 * np.pi * np.sinh(beta))) * np.exp(-x * x * np.tanh(beta / 2))


@pytest.mark.parametrize("x", [0.0, 0.7, 1.5])
def test_van_vleck_is_mehler(x):
    grid = build_grid(41, -4.0, 4.0, 200, P1)
    val, fl = van_vleck_element(HARM, grid, P1, x, TIGHT)
    assert fl.valid
    assert val == pytest.approx(mehler_diag(x), rel=5e-3)


def test_prefactor_routes_agree():
    grid = build_grid(41, -4.0, 4.0, 200, P1)
    _, fl = van_vleck_element(HARM, grid, P1, 0.5, TIGHT)
    assert van_vleck_cross_check(HARM, grid, P1, 0.5, TIGHT) == pytest.approx(fl.prefactor,
                                                                               rel=1e-4)
    leg = solve_leg(HARM, grid, P1, 0.5, 1.5, grid.n_tau, TIGHT)[0]
    kappa_route = fluctuation_data(leg, HARM, grid, P1).prefactor
    assert prefactor_from_velocity(leg, P1) == pytest.approx(kappa_route, rel=1e-4)
    # a closed path turns round, where the velocity form does not apply
    assert prefactor_from_velocity(solve_path(HARM, grid, P1, 1.0), P1) is None


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.2, 4.0), st.integers(5, 60))
def test_free_prefactor_and_green(mass, beta, n):
    params = PhysicsParams(mass, beta)
    grid = build_grid(11, -1.0, 1.0, n, params)
    v = np.zeros(grid.n_x)
    path = solve_path(v, grid, params, 0.3)
    kappa = jacobi_field(path, v, grid, params)
    assert np.allclose(kappa, grid.tau)
    fl = fluctuation_data(path, v, grid, params)
    assert fl.prefactor == pytest.approx(np.sqrt(mass / (2 * np.pi * beta)), rel=1e-12)
    R = fluctuation_green_function(path, v, grid, params)
    t, T = grid.tau, params.tau_max
    exact = np.minimum.outer(t, t) * (T - np.maximum.outer(t, t)) / (mass * T)
    assert np.max(np.abs(R - exact)) < 1e-8
    assert np.array_equal(R, R.T)


def test_green_positive_for_convex_potential():
    grid = build_grid(41, -4.0, 4.0, 100, P1)
    path = solve_path(HARM, grid, P1, 1.2)
    R = fluctuation_green_function(path, HARM, grid, P1)
    inner = R[1:-1, 1:-1]
    assert np.all(inner > 0)
    assert np.all(np.linalg.eigvalsh(inner) > 0)


def test_partitions_harmonic():
    grid = build_grid(81, -4.0, 4.0, 200, P1)
    st_ = semiclassical_partition(HARM, grid, P1, TIGHT)
    exact = 1.0 / (2 * np.sinh(0.5))
    assert st_.partition == pytest.approx(exact, rel=1e-3)
    assert stationary_partition(HARM, grid, P1, TIGHT, state=st_).Z == pytest.approx(exact,
                                                                                      rel=1e-3)


def test_classical_density_normalized(fig3_case):
    params, grid, v = fig3_case
    rho = classical_density(v, grid, params).values
    assert quadrature(rho, grid) == pytest.approx(1.0)
    assert np.argmax(rho) in range(11, 20)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 29))
def test_approach1_mass_exact(j):
    params = PhysicsParams(0.1, 6.0)
    grid = build_grid(30, 0.0, 29.0, 30, params)
    v = -1.0 / (1.0 + np.exp(0.5 * (np.abs(grid.x - 15.0) - 4.0)))
    path = solve_path(v, grid, params, grid.x[j])
    d = log_deriv_approach1(path, grid).values
    assert np.all(d <= 0)
    assert np.sum(d) * grid.dx == pytest.approx(-params.beta, abs=1e-12)


def test_approach2_mass_interior(fig3_case):
    params, grid, v = fig3_case
    for x in (10.0, 15.0, 19.0):
        path = solve_path(v, grid, params, x)
        fl = fluctuation_data(path, v, grid, params)
        d = log_deriv_approach2(path, fl, grid, params).values
        assert np.sum(d) * grid.dx == pytest.approx(-params.beta, rel=1e-2)


def test_approach2_zero_width_limit(fig3_case):
    params, grid, v = fig3_case
    checked = 0
    for x in grid.x:
        path = solve_path(v, grid, params, x)
        fl = fluctuation_data(path, v, grid, params)
        fl.r_diag = fl.r_diag * 1e-6
        # slices within a few widths of a cell edge may round either way
        sig = np.sqrt(np.maximum(fl.r_diag[1:], 0.0))
        frac = np.abs((path.q[1:] - grid.x_min) / grid.dx % 1.0 - 0.5)
        if np.any(frac <= 5 * sig / grid.dx):
            continue
        a2 = log_deriv_approach2(path, fl, grid, params).values
        a1 = log_deriv_approach1(path, grid).values
        assert np.sum(np.abs(a2 - a1)) * grid.dx < 1e-3 * params.beta
        checked += 1
    assert checked >= grid.n_x // 2


def test_approach3_equal_energy_split(fig3_case):
    params, grid, v = fig3_case
    val, info = log_deriv_approach3(v, grid, params, 12.0, 14, return_details=True)
    assert val < 0
    assert 0 < info["beta_prime"] < params.beta
    assert info["energy_in"] == pytest.approx(info["energy_out"], abs=0.05)


def test_vanvleck_gradient_matches_fd(fig3_case):
    params, grid, v = fig3_case
    cfg = PathSolverConfig(tol=1e-12)

    def ln_rho(vv):
        return np.log(van_vleck_element(vv, grid, params, 12.0, cfg)[0])
    path = solve_path(v, grid, params, 12.0, cfg)
    G = vanvleck_log_gradient(path, v, grid, params)
    h = 1e-6
    fd = np.array([(ln_rho(v + h * e) - ln_rho(v - h * e)) / (2 * h) for e in np.eye(grid.n_x)])
    assert np.max(np.abs(G - fd)) < 1e-6

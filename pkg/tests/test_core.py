import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qstat_inverse import (
    DomainError,
    MeshFunction,
    PhysicsParams,
    PotentialField,
    build_grid,
    interp_potential,
    interp_potential_deriv,
    quadrature,
)
from qstat_inverse.core import (
    fluctuation_curvature,
    interp_potential_curvature,
    slope_primitive,
    trapezoid_weights,
)

PARAMS = PhysicsParams(1.0, 2.0)
GRID = build_grid(12, -3.0, 8.0, 16, PARAMS)
finite = st.floats(-5, 5, allow_nan=False)


def test_grid_spacing():
    assert GRID.dx == pytest.approx(1.0)
    assert GRID.eps == pytest.approx(2.0 / 16)
    assert GRID.x[0] == -3.0 and GRID.x[-1] == pytest.approx(8.0)
    assert GRID.tau[-1] == pytest.approx(PARAMS.tau_max)


@pytest.mark.parametrize("args", [(2, 0, 1, 10), (10, 1, 1, 10), (10, 0, 1, 1), (3.5, 0, 1, 4)])
def test_grid_rejects_bad_shapes(args):
    with pytest.raises(DomainError):
        build_grid(*args, PARAMS)


@pytest.mark.parametrize("kw", [dict(mass=0, beta=1), dict(mass=1, beta=-1),
                                dict(mass=1, beta=1, hbar=np.nan)])
def test_params_positive(kw):
    with pytest.raises(DomainError):
        PhysicsParams(**kw)


def test_field_validation():
    with pytest.raises(DomainError):
        PotentialField(np.array([0.0, np.inf]))
    with pytest.raises(DomainError):
        PotentialField(np.zeros(3), reference=np.zeros(4))
    with pytest.raises(DomainError):
        MeshFunction(np.zeros(3), role="weird")
    f = PotentialField(np.arange(3.0), reference=np.ones(3))
    assert np.array_equal(f.shifted(), [-1.0, 0.0, 1.0])


@given(arrays(float, GRID.n_x, elements=finite))
def test_interp_hits_nodes(v):
    assert np.allclose(interp_potential(v, GRID, GRID.x), v)


@given(arrays(float, GRID.n_x, elements=finite), st.floats(0.0, 1.0))
def test_interp_is_piecewise_linear(v, t):
    j = 4
    x = GRID.x[j] + t * GRID.dx
    assert interp_potential(v, GRID, x) == pytest.approx((1 - t) * v[j] + t * v[j + 1], abs=1e-12)


@given(arrays(float, GRID.n_x, elements=finite))
def test_slope_is_continuous(v):
    xs = GRID.x[1:-1]
    left = interp_potential_deriv(v, GRID, xs - 1e-9)
    right = interp_potential_deriv(v, GRID, xs + 1e-9)
    assert np.allclose(left, right, atol=1e-6)


@given(arrays(float, GRID.n_x, elements=finite), st.floats(-2.5, 7.5))
def test_curvature_is_slope_derivative(v, x):
    h = 1e-6
    fd = (interp_potential_deriv(v, GRID, x + h) - interp_potential_deriv(v, GRID, x - h)) / (2 * h)
    # away from the kinks of the slope interpolant
    frac = (x - GRID.x_min) / GRID.dx % 1.0
    if 1e-4 < frac < 1 - 1e-4:
        assert interp_potential_curvature(v, GRID, x) == pytest.approx(fd, abs=1e-5)


@settings(max_examples=50)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_quadrature_exact_for_linear(a, b):
    f = a + b * GRID.x
    exact = a * GRID.length + 0.5 * b * (GRID.x_max ** 2 - GRID.x_min ** 2)
    assert quadrature(f, GRID) == pytest.approx(exact, abs=1e-9)


def test_trapezoid_weights_sum_to_length():
    w = trapezoid_weights(GRID)
    assert w.sum() == pytest.approx(GRID.length)
    assert w[0] == pytest.approx(0.5 * GRID.dx)


def test_node_index_clips():
    assert list(GRID.node_index([-10.0, -3.4, 0.49, 100.0])) == [0, 0, 3, GRID.n_x - 1]


@given(arrays(float, GRID.n_x, elements=finite), st.floats(-4.0, 9.0))
def test_primitive_derivative_is_slope(v, x):
    h = 1e-6
    fd = (slope_primitive(v, GRID, x + h) - slope_primitive(v, GRID, x - h)) / (2 * h)
    assert fd == pytest.approx(interp_potential_deriv(v, GRID, x), abs=1e-5)


@given(arrays(float, GRID.n_x, elements=finite))
def test_fluctuation_curvature_continuous_and_exact_for_quadratics(v):
    xs = GRID.x[1:-1]
    left = fluctuation_curvature(v, GRID, xs - 1e-9)
    right = fluctuation_curvature(v, GRID, xs + 1e-9)
    assert np.allclose(left, right, atol=1e-6)
    quad = 0.3 * GRID.x ** 2
    assert np.allclose(fluctuation_curvature(quad, GRID, np.linspace(-1, 6, 9)), 0.6)

import numpy as np
import pytest

from qstat_inverse import PhysicsParams, build_grid


@pytest.fixture
def fig3_case():
    params = PhysicsParams(mass=0.1, beta=6.0)
    grid = build_grid(30, 0.0, 29.0, 30, params)
    v = -1.0 / (1.0 + np.exp(0.5 * (np.abs(grid.x - 15.0) - 4.0)))
    return params, grid, v


@pytest.fixture
def random_case():
    params = PhysicsParams(mass=0.1, beta=6.0)
    grid = build_grid(30, 0.0, 29.0, 30, params)
    v = np.random.default_rng(0).normal(0.0, 0.3, grid.n_x)
    return params, grid, v


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = {}


@pytest.fixture
def report():
    def _report(key, passed, detail):
        line = f"{key}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE[key] = line
        print(line)
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE[key])

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qstat_inverse import (
    DomainError,
    PathSolverConfig,
    PhysicsParams,
    PotentialField,
    ReconstructionConfig,
    build_grid,
    ergodic_diagnostic,
    make_dataset,
    make_prior,
    map_descent,
    posterior_energy,
    stationarity_residual,
)
from qstat_inverse.experiment import builtin_potential, sample_dataset
from qstat_inverse.reconstruction import ReconstructionState, _min_norm_hull, spike_nodes

P4 = PhysicsParams(1.0, 10.0)
G4 = build_grid(30, 0.0, 29.0, 30, P4)
TRUTH4 = builtin_potential("cosine_well", G4)


def fd_gradient(v, data, grid, params, prior, cfg, h=1e-5):
    return np.array([(posterior_energy(v + h * e, data, grid, params, prior, cfg)
                      - posterior_energy(v - h * e, data, grid, params, prior, cfg)) / (2 * h * grid.dx)
                     for e in np.eye(grid.n_x)])


def residual_at(v, data, grid, params, prior, cfg):
    state = ReconstructionState(v=PotentialField(v), paths=None, residual=None, energy_trace=[])
    return stationarity_residual(state, data, grid, params, prior, cfg).values


@pytest.mark.parametrize("kw", [
    dict(likelihood_backend="quantum"),
    dict(likelihood_backend="exact", deriv_backend="approach1"),
    dict(likelihood_backend="classical", deriv_backend="approach2"),
    dict(likelihood_backend="exact", deriv_backend="vanvleck"),
    dict(step_rule="newton"),
    dict(gamma=-1.0),
    dict(eta_v=0.0),
])
def test_config_rejects(kw):
    with pytest.raises(DomainError):
        ReconstructionConfig(**kw)


def test_default_derivative_backends():
    assert ReconstructionConfig(likelihood_backend="classical").deriv_backend == "approach1"
    assert ReconstructionConfig(likelihood_backend="semiclassical").deriv_backend == "vanvleck"
    assert ReconstructionConfig(likelihood_backend="exact").deriv_backend == "exact"


def test_dataset_snaps_to_nodes():
    d = make_dataset([0.2, 14.6, 28.9], G4, seed=3)
    assert list(d.indices) == [0, 15, 29]
    assert np.array_equal(d.positions, G4.x[d.indices])
    assert d.counts(G4.n_x).sum() == 3
    with pytest.raises(DomainError):
        make_dataset([-1.0], G4)


@pytest.mark.parametrize("backend", ["exact", "classical"])
def test_residual_matches_fd(backend):
    data = sample_dataset(TRUTH4, G4, P4, 15, 42)
    prior = make_prior(G4, 5.0, spacing="tau")
    cfg = ReconstructionConfig(likelihood_backend=backend)
    v = TRUTH4.values + 0.02 * np.random.default_rng(1).normal(size=G4.n_x)
    r = residual_at(v, data, G4, P4, prior, cfg)
    fd = fd_gradient(v, data, G4, P4, prior, cfg)
    assert np.max(np.abs(r - fd) / np.maximum(np.abs(fd), 1e-8)) < 1e-4


def test_semiclassical_residual_matches_fd(fig3_case):
    params, grid, v = fig3_case
    v = v + 0.01 * np.random.default_rng(5).normal(size=grid.n_x)
    data = sample_dataset(v, grid, params, 10, 3)
    prior = make_prior(grid, 1.0)
    cfg = ReconstructionConfig(likelihood_backend="semiclassical",
                               path_config=PathSolverConfig(tol=1e-12))
    r = residual_at(v, data, grid, params, prior, cfg)
    fd = fd_gradient(v, data, grid, params, prior, cfg, h=1e-6)
    assert np.max(np.abs(r - fd)) < 1e-5 * np.max(np.abs(fd))


def test_residual_uniform_shift_is_prior_only():
    # the likelihood ignores a constant in v, so sum(r) dx is the prior's response
    data = sample_dataset(TRUTH4, G4, P4, 15, 7)
    prior = make_prior(G4, 5.0)
    cfg = ReconstructionConfig(likelihood_backend="exact")
    v = TRUTH4.values + 0.1
    r = residual_at(v, data, G4, P4, prior, cfg)
    expected = prior.gamma * np.sum(prior.kernel @ (v - prior.reference))
    assert np.sum(r) * G4.dx == pytest.approx(expected, rel=1e-8, abs=1e-8)


@pytest.mark.parametrize("deriv", ["approach1", "approach2", "approach3"])
def test_semiclassical_derivative_backends_finite(fig3_case, deriv):
    params, grid, v = fig3_case
    data = make_dataset([12.0, 15.0, 17.0], grid)
    prior = make_prior(grid, 1.0)
    cfg = ReconstructionConfig(likelihood_backend="semiclassical", deriv_backend=deriv)
    state = ReconstructionState(v=PotentialField(v), paths=None, residual=None, energy_trace=[])
    r = stationarity_residual(state, data, grid, params, prior, cfg).values
    assert np.all(np.isfinite(r))
    if deriv != "approach3":
        # the log-derivative mass is -beta per datum, which cancels the Z term
        like = r - prior.gamma * prior.kernel @ v / grid.dx
        assert np.sum(like) * grid.dx == pytest.approx(0.0, abs=0.05 * params.beta * data.n)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(["bb", "fixed"]))
def test_descent_energy_non_increasing(seed, rule):
    data = sample_dataset(TRUTH4, G4, P4, 15, seed)
    prior = make_prior(G4, 5.0, spacing="tau")
    cfg = ReconstructionConfig(likelihood_backend="classical", eta_v=0.05, max_outer=200,
                               step_rule=rule)
    state = map_descent(np.zeros(G4.n_x), data, G4, P4, prior, cfg)
    assert np.all(np.diff(state.energy_trace) <= 0)
    assert state.diagnostics["stop_reason"] in ("grad_tol", "energy_stall", "max_outer")


def test_no_data_relaxes_to_reference():
    data = make_dataset(np.empty(0), G4)
    ref = np.linspace(-0.2, 0.2, G4.n_x)
    prior = make_prior(G4, 1.0, ref)
    cfg = ReconstructionConfig(likelihood_backend="exact", max_outer=5000, grad_tol=1e-8,
                               energy_rtol=0.0)
    state = map_descent(np.zeros(G4.n_x), data, G4, P4, prior, cfg)
    assert posterior_energy(ref, data, G4, P4, prior, cfg) == 0.0
    assert state.converged
    assert np.allclose(state.v.values, ref, atol=1e-6)


def test_threads_do_not_change_result():
    data = sample_dataset(TRUTH4, G4, P4, 15, 42)
    prior = make_prior(G4, 5.0, spacing="tau")
    out = []
    for threads in (1, 4):
        cfg = ReconstructionConfig(likelihood_backend="exact", eta_v=0.05, max_outer=50,
                                   threads=threads)
        out.append(map_descent(np.zeros(G4.n_x), data, G4, P4, prior, cfg).v.values)
    assert np.array_equal(out[0], out[1])


def test_ergodic_balance_at_map():
    data = sample_dataset(TRUTH4, G4, P4, 15, 42)
    prior = make_prior(G4, 5.0, spacing="tau")
    cfg = ReconstructionConfig(likelihood_backend="exact", eta_v=0.05, max_outer=3000)
    state = map_descent(np.zeros(G4.n_x), data, G4, P4, prior, cfg)
    assert state.converged
    f = np.sin(G4.x / 5.0)
    t_avg, ens, pr = ergodic_diagnostic(state, data, G4, P4, prior, f, cfg)
    balance = np.dot(state.residual.values, f) * G4.dx / (data.n * P4.beta)
    assert t_avg - ens + pr == pytest.approx(balance, abs=1e-10)
    assert abs(t_avg - ens + pr) < 1e-4
    # f = 1: both averages are 1 by normalization
    t1, e1, _ = ergodic_diagnostic(state, data, G4, P4, prior, 1.0, cfg)
    assert t1 == pytest.approx(1.0) and e1 == pytest.approx(1.0)


def test_spike_nodes():
    v = np.zeros(G4.n_x)
    v[7] = -5.0
    assert 7 in spike_nodes(v, G4, 2.0)
    assert set(spike_nodes(v, G4, 2.0)) <= {6, 7, 8}
    assert spike_nodes(np.zeros(G4.n_x), G4, 2.0) == []


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 6))
def test_min_norm_hull_is_optimal(seed, k):
    G = np.random.default_rng(seed).normal(size=(k, 7))
    g = _min_norm_hull(G)
    # first-order optimality over the hull: every vertex lies in g's half-space
    assert np.all(G @ g >= g @ g - 1e-6 * max(1.0, g @ g))
    assert g @ g <= np.min(np.sum(G * G, axis=1)) + 1e-9


def test_bundle_norm_bounded_by_residual():
    data = make_dataset([10.0, 10.4, 19.6, 20.0], G4)
    cfg = ReconstructionConfig(likelihood_backend="classical", max_outer=50)
    res = map_descent(np.zeros(G4.n_x), data, G4, P4, make_prior(G4, 5.0), cfg)
    d = res.diagnostics
    assert d["kink_steps"] >= 0
    # the hull contains the final residual, so its min-norm point is no longer
    assert d["bundle_grad_norm"] <= np.linalg.norm(res.residual.values) + 1e-12

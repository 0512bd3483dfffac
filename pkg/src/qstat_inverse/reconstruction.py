"""MAP reconstruction of the potential from thermal position data.

The objective is

    E(v) = -sum_i ln( rho(x_i, x_i) / Z ) + (gamma/2) Gamma[v]

and its gradient is reported as a density on the mesh, ``dE/dv_j / dx``
(the same measure convention as the spectral derivatives).  Three backends
evaluate the likelihood: classical (Boltzmann factor), semiclassical (van
Vleck) and exact (spectral).
"""
from __future__ import annotations

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import nnls

from .core import DomainError, Grid, MeshFunction, PhysicsParams, PotentialField, trapezoid_weights
from .paths import PathSolverConfig
from .prior import PriorModel, prior_energy, prior_gradient
from .semiclassical import (
    SemiclassicalError,
    fluctuation_data,
    log_deriv_approach1,
    log_deriv_approach2,
    log_deriv_approach3,
    semiclassical_partition,
    vanvleck_log_gradient,
)
from .spectral import boltzmann_diagonal, exact_log_derivative, spectral_decomposition

__all__ = [
    "Dataset",
    "ReconstructionConfig",
    "ReconstructionState",
    "BackendError",
    "make_dataset",
    "posterior_energy",
    "stationarity_residual",
    "map_descent",
    "ergodic_diagnostic",
    "spike_nodes",
]

logger = logging.getLogger(__name__)

LIKELIHOOD_BACKENDS = ("classical", "semiclassical", "exact")
DERIV_BACKENDS = ("approach1", "approach2", "approach3", "exact", "vanvleck")
MAX_HALVINGS = 20
# residuals kept for the min-norm direction at kinks of E
BUNDLE_SIZE = 8


class BackendError(RuntimeError):
    """A likelihood backend cannot evaluate the density at some datum."""


@dataclass(frozen=True)
class Dataset:
    positions: np.ndarray
    indices: np.ndarray
    seed: Optional[int] = None

    @property
    def n(self) -> int:
        return self.positions.size

    def counts(self, n_x: int) -> np.ndarray:
        return np.bincount(self.indices, minlength=n_x)


def make_dataset(positions, grid: Grid, seed: Optional[int] = None) -> Dataset:
    """Snap measured positions to the nearest mesh node."""
    x = np.atleast_1d(np.asarray(positions, dtype=float))
    tol = 0.5 * grid.dx
    if np.any(x < grid.x_min - tol) or np.any(x > grid.x_max + tol):
        raise DomainError("data positions outside the mesh range")
    idx = grid.node_index(x)
    return Dataset(positions=grid.x[idx], indices=idx, seed=seed)


@dataclass(frozen=True)
class ReconstructionConfig:
    gamma: float = 5.0
    eta_v: float = 1.0
    max_outer: int = 500
    grad_tol: float = 1e-4
    likelihood_backend: str = "semiclassical"
    deriv_backend: Optional[str] = None
    path_config: PathSolverConfig = field(default_factory=PathSolverConfig)
    freeze_boundary: bool = False
    energy_rtol: float = 1e-10
    spike_curvature: float = 2.0
    threads: int = 1
    step_rule: str = "bb"

    def __post_init__(self):
        if self.likelihood_backend not in LIKELIHOOD_BACKENDS:
            raise DomainError(f"unknown likelihood backend {self.likelihood_backend!r}")
        deriv = self.deriv_backend
        if deriv is None:
            deriv = {"classical": "approach1", "semiclassical": "vanvleck",
                     "exact": "exact"}[self.likelihood_backend]
            object.__setattr__(self, "deriv_backend", deriv)
        if deriv not in DERIV_BACKENDS:
            raise DomainError(f"unknown derivative backend {deriv!r}")
        if self.likelihood_backend == "exact" and deriv != "exact":
            raise DomainError("the exact likelihood needs the exact derivative backend")
        if self.likelihood_backend == "classical" and deriv not in ("approach1", "exact"):
            raise DomainError("classical likelihood pairs with approach1 or exact derivatives")
        if deriv == "vanvleck" and self.likelihood_backend != "semiclassical":
            raise DomainError("the vanvleck gradient belongs to the semiclassical likelihood")
        if self.step_rule not in ("fixed", "bb"):
            raise DomainError(f"unknown step rule {self.step_rule!r}")
        if self.gamma < 0 or self.eta_v <= 0 or self.grad_tol <= 0 or self.max_outer < 0:
            raise DomainError("gamma >= 0, eta_v > 0, grad_tol > 0, max_outer >= 0 required")


@dataclass
class ReconstructionState:
    v: PotentialField
    paths: list
    residual: MeshFunction
    energy_trace: list
    outer_iter: int = 0
    converged: bool = False
    grad_trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    node_paths: Optional[list] = None


# -- likelihood evaluation ---------------------------------------------------

@dataclass
class _Likelihood:
    rho: np.ndarray          # unnormalized diagonal on the mesh
    Z: float
    node_paths: Optional[list] = None
    spec: object = None
    failed: int = 0
    clamps: int = 0

    @property
    def rho_norm(self) -> np.ndarray:
        return self.rho / self.Z


def _values(v) -> np.ndarray:
    return v.values if isinstance(v, PotentialField) else np.asarray(v, dtype=float)


def _evaluate(v, grid, params, config, q_init=None) -> _Likelihood:
    # normalized densities, paths and fluctuations are blind to a constant in v;
    # min(v) = 0 keeps exp(-S/hbar) and exp(-beta E) below one
    vals = _values(v)
    vals = vals - vals.min()
    backend = config.likelihood_backend
    if backend == "classical":
        w = np.exp(-params.beta * vals)
        return _Likelihood(rho=w, Z=float(w @ trapezoid_weights(grid)))
    if backend == "exact":
        spec = spectral_decomposition(vals, grid, params)
        th = boltzmann_diagonal(spec, params.beta)
        return _Likelihood(rho=th.rho_diag.values, Z=th.partition, spec=spec)
    try:
        st = semiclassical_partition(vals, grid, params, config.path_config, q_init=q_init)
    except SemiclassicalError as exc:
        raise BackendError(str(exc)) from exc
    return _Likelihood(rho=st.diag.values, Z=st.partition, node_paths=st.paths,
                       failed=len(st.failed_nodes), clamps=sum(p.clamps for p in st.paths))


def _likelihood_energy(lik: _Likelihood, data: Dataset) -> float:
    p = lik.rho_norm[data.indices]
    bad = np.flatnonzero(~(p > 0))
    if bad.size:
        raise BackendError(f"zero likelihood at datum {int(bad[0])} (x={data.positions[bad[0]]})")
    return float(-np.sum(np.log(p)))


def posterior_energy(v, data: Dataset, grid: Grid, params: PhysicsParams,
                     prior: PriorModel, config: ReconstructionConfig) -> float:
    """E(v) with the likelihood from ``config.likelihood_backend``."""
    e_prior = 0.5 * prior.gamma * prior_energy(v, prior)
    if data.n == 0:
        return e_prior
    return _likelihood_energy(_evaluate(v, grid, params, config), data) + e_prior


# -- gradient ----------------------------------------------------------------

def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _log_derivatives(vals, lik: _Likelihood, nodes, grid, params, config, diag):
    """Per-node logarithmic derivative density for each distinct datum node."""
    deriv = config.deriv_backend
    if deriv == "exact":
        spec = lik.spec if lik.spec is not None else spectral_decomposition(vals, grid, params)
        return _map(lambda j: exact_log_derivative(spec, params.beta, j).values,
                    list(nodes), config.threads)
    if config.likelihood_backend == "classical":
        out = []
        for j in nodes:
            d = np.zeros(grid.n_x)
            d[j] = -params.beta / grid.dx
            out.append(d)
        return out
    paths = [lik.node_paths[j] for j in nodes]
    a1 = [log_deriv_approach1(p, grid, params.hbar).values for p in paths]
    if deriv == "approach1":
        return a1

    if deriv == "approach2":
        def one(k):
            try:
                fl = fluctuation_data(paths[k], vals, grid, params)
                if not fl.valid:
                    raise SemiclassicalError("invalid fluctuation operator")
                return log_deriv_approach2(paths[k], fl, grid, params).values, False
            except SemiclassicalError:
                return a1[k], True
        res = _map(one, list(range(len(paths))), config.threads)
        diag["approach_fallbacks"] = diag.get("approach_fallbacks", 0) + sum(r[1] for r in res)
        return [r[0] for r in res]

    # approach3: one split-time saddle per (datum, x') pair
    def one3(k):
        out, fb = a1[k].copy(), 0
        for jp in range(grid.n_x):
            try:
                out[jp] = log_deriv_approach3(vals, grid, params, grid.x[nodes[k]], jp,
                                              config.path_config)
            except SemiclassicalError:
                fb += 1
        return out, fb
    res = _map(one3, list(range(len(paths))), config.threads)
    diag["approach_fallbacks"] = diag.get("approach_fallbacks", 0) + sum(r[1] for r in res)
    return [r[0] for r in res]


def _vanvleck_residual(vals, lik, data, grid, params, config):
    # exact gradient of the semiclassical objective, likelihood part
    def one(p):
        try:
            return vanvleck_log_gradient(p, vals, grid, params)
        except SemiclassicalError:
            return np.full(grid.n_x, np.nan)
    G = np.array(_map(one, lik.node_paths, config.threads))
    w = trapezoid_weights(grid)
    ok = np.all(np.isfinite(G), axis=1)
    if not np.all(ok[data.indices]):
        bad = int(np.flatnonzero(~ok[data.indices])[0])
        raise BackendError(f"singular fluctuation operator at datum {bad}")
    G[~ok] = 0.0
    dlogZ = (w * lik.rho_norm) @ G
    return (-np.sum(G[data.indices], axis=0) + data.n * dlogZ) / grid.dx


def _residual(vals, lik, data, grid, params, prior, config, diag) -> np.ndarray:
    w = trapezoid_weights(grid) / grid.dx
    r = prior.gamma * prior_gradient(vals, prior).values / grid.dx
    if data.n == 0:
        return r
    if config.deriv_backend == "vanvleck":
        return r + _vanvleck_residual(vals, lik, data, grid, params, config)
    nodes, counts = np.unique(data.indices, return_counts=True)
    logd = _log_derivatives(vals, lik, nodes, grid, params, config, diag)
    for c, d in zip(counts, logd):
        r = r - c * d
    return r - data.n * params.beta * lik.rho_norm * w


def stationarity_residual(state: ReconstructionState, data: Dataset, grid: Grid,
                          params: PhysicsParams, prior: PriorModel,
                          config: ReconstructionConfig) -> MeshFunction:
    """dE/dv as a mesh density; zero at a MAP point.

    -sum_i dln rho(x_i)/dv  -  N beta rho_norm  +  gamma K (v - v0) / dx
    """
    vals = _values(state.v)
    q_init = None
    if state.node_paths is not None:
        q_init = np.array([p.q for p in state.node_paths])
    lik = _evaluate(vals, grid, params, config, q_init)
    r = _residual(vals, lik, data, grid, params, prior, config, state.diagnostics)
    return MeshFunction(r, role="residual")


# -- descent -----------------------------------------------------------------

def spike_nodes(v, grid: Grid, threshold: float) -> list:
    """Interior nodes whose discrete curvature exceeds ``threshold``."""
    vals = _values(v)
    curv = np.abs(vals[2:] - 2.0 * vals[1:-1] + vals[:-2]) / grid.dx ** 2
    return [int(j) + 1 for j in np.flatnonzero(curv > threshold)]



def _min_norm_hull(G):
    """Smallest-norm point of the convex hull of the rows of G."""
    # nnls with a heavily weighted sum-to-one row
    rho = 1e3 * max(1.0, float(np.max(np.abs(G))))
    A = np.vstack([G.T, rho * np.ones(len(G))])
    b = np.zeros(A.shape[0])
    b[-1] = rho
    lam, _ = nnls(A, b)
    lam /= lam.sum()
    return lam @ G


def _directions(r, bundle, eta, eta_v):
    """Search directions: the residual, then at a kink of E the min-norm point
    of the hull of recent residuals, which descends on all sampled pieces."""
    yield r, eta
    if bundle:
        g = _min_norm_hull(np.array(list(bundle) + [r]))
        if np.any(g):
            yield g, eta_v


def map_descent(v_init, data: Dataset, grid: Grid, params: PhysicsParams,
                prior: PriorModel, config: ReconstructionConfig,
                callback=None) -> ReconstructionState:
    """Gradient descent v <- v - eta * residual with backtracking on E.

    The trial step is ``eta_v`` (``step_rule="fixed"``) or the Barzilai-Borwein
    length s.s / s.y from the previous step (``"bb"``); either way it is halved
    until E does not increase.  If no halving succeeds (E has kinks where path
    points cross mesh nodes), the search is repeated along the min-norm point
    of the hull of recent residuals (``kink_steps``).  Each accepted step
    re-solves the classical paths, warm-started from the previous ones.  Stops
    when max|residual| <= grad_tol, when the relative energy change of two
    consecutive accepted steps drops below ``energy_rtol``, or after
    ``max_outer`` steps; ``diagnostics["stop_reason"]`` records which, and
    ``bundle_grad_norm`` measures stationarity at a kink.
    """
    v = np.array(_values(v_init), dtype=float)
    if v.size != grid.n_x or not np.all(np.isfinite(v)):
        raise DomainError("v_init must be a finite vector of length n_x")
    diag = {"failed_paths": 0, "clamps": 0, "halvings": 0, "rejected_steps": 0,
            "approach_fallbacks": 0, "spike_nodes": [], "stop_reason": "max_outer"}
    mask = np.ones(grid.n_x)
    if config.freeze_boundary:
        mask[0] = mask[-1] = 0.0

    def energy_of(vals, lik):
        e = 0.5 * prior.gamma * prior_energy(vals, prior)
        return e + (_likelihood_energy(lik, data) if data.n else 0.0)

    lik = _evaluate(v, grid, params, config)
    E = energy_of(v, lik)
    r = _residual(v, lik, data, grid, params, prior, config, diag) * mask
    trace, gtrace = [E], [float(np.max(np.abs(r)))]
    eta = config.eta_v
    converged = gtrace[-1] <= config.grad_tol
    if converged:
        diag["stop_reason"] = "grad_tol"
    it, stalls = 0, 0
    bundle = deque(maxlen=BUNDLE_SIZE)
    diag["kink_steps"] = 0
    while not converged and it < config.max_outer:
        it += 1
        q_init = None if lik.node_paths is None else np.array([p.q for p in lik.node_paths])
        accepted, d = False, r
        for d, eta in _directions(r, bundle, eta, config.eta_v):
            for _ in range(MAX_HALVINGS + 1):
                cand = v - eta * d
                try:
                    lik_c = _evaluate(cand, grid, params, config, q_init)
                    E_c = energy_of(cand, lik_c)
                except (BackendError, FloatingPointError):
                    E_c = np.inf
                if E_c <= E:
                    accepted = True
                    break
                eta *= 0.5
                diag["halvings"] += 1
            if accepted:
                if d is not r:
                    diag["kink_steps"] += 1
                break
        if not accepted:
            diag["rejected_steps"] += 1
            diag["stop_reason"] = "line_search"
            logger.info("line search failed at outer iteration %d", it)
            break
        dE = E - E_c
        r_old = r
        bundle.append(r)
        v, lik, E = cand, lik_c, E_c
        diag["failed_paths"] += lik.failed
        diag["clamps"] += lik.clamps
        r = _residual(v, lik, data, grid, params, prior, config, diag) * mask
        step_v, step_r = -eta * d, r - r_old
        trace.append(E)
        gtrace.append(float(np.max(np.abs(r))))
        if callback is not None:
            callback(it, v, E, gtrace[-1])
        if gtrace[-1] <= config.grad_tol:
            converged, diag["stop_reason"] = True, "grad_tol"
        elif dE <= config.energy_rtol * max(1.0, abs(E)):
            # two stalled steps in a row (one can be a symmetric overshoot);
            # at a kink of E the residual need not be small
            stalls += 1
            if stalls >= 2:
                converged, diag["stop_reason"] = True, "energy_stall"
        else:
            stalls = 0
        if config.step_rule == "bb":
            sy = float(step_v @ step_r)
            eta = float(step_v @ step_v) / sy if sy > 0 else config.eta_v
            eta = min(max(eta, 1e-8 * config.eta_v), 1e4 * config.eta_v)
        else:
            # let the step grow back after a successful one
            eta = min(config.eta_v, 2.0 * eta)

    # stationarity at a kink: min-norm point of the recent residual hull
    diag["bundle_grad_norm"] = float(np.max(np.abs(
        _min_norm_hull(np.array(list(bundle) + [r]))))) if bundle else gtrace[-1]
    diag["spike_nodes"] = spike_nodes(v, grid, config.spike_curvature)
    if diag["spike_nodes"]:
        logger.warning("possible spike collapse at nodes %s", diag["spike_nodes"])
    data_paths = None
    if lik.node_paths is not None:
        data_paths = [lik.node_paths[j] for j in data.indices]
    return ReconstructionState(
        v=PotentialField(v, reference=prior.reference), paths=data_paths,
        residual=MeshFunction(r, role="residual"), energy_trace=trace, outer_iter=it,
        converged=bool(converged), grad_trace=gtrace, diagnostics=diag,
        node_paths=lik.node_paths)


def ergodic_diagnostic(state: ReconstructionState, data: Dataset, grid: Grid,
                       params: PhysicsParams, prior: PriorModel, f,
                       config: Optional[ReconstructionConfig] = None):
    """Time average, thermal average and prior term of the stationarity balance.

    time_avg - ensemble_avg + prior_term equals (1/(N beta)) * int residual * f,
    so it vanishes at a MAP point.
    """
    config = config or ReconstructionConfig()
    if config.deriv_backend == "vanvleck":
        # the balance is stated for the classical-path (approach 1) terms
        config = replace(config, deriv_backend="approach1")
    fv = np.asarray(getattr(f, "values", f), dtype=float) * np.ones(grid.n_x)
    vals = _values(state.v)
    q_init = None if state.node_paths is None else np.array([p.q for p in state.node_paths])
    lik = _evaluate(vals, grid, params, config, q_init)
    nb = data.n * params.beta
    nodes, counts = np.unique(data.indices, return_counts=True)
    logd = _log_derivatives(vals, lik, nodes, grid, params, config, {})
    time_avg = -sum(c * np.dot(d, fv) for c, d in zip(counts, logd)) * grid.dx / nb
    ens = float(np.dot(lik.rho_norm * fv, trapezoid_weights(grid)))
    prior_term = prior.gamma * float(np.dot(prior_gradient(vals, prior).values, fv)) / nb
    return float(time_avg), ens, prior_term

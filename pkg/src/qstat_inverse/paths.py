"""Euclidean classical paths: motion in the inverted potential with fixed ends.

The discretized equations of motion

    -(m/eps^2) (q[k+1] - 2 q[k] + q[k-1]) + v'(q[k]) = 0,   k = 1..n-1

with q[0], q[n] prescribed are solved by the damped fixed-point iteration

    q <- q - eta * (q + A^{-1} t(q)),

where ``A`` is the constant kinetic matrix (boundary rows pin the ends) and
``t`` collects v'(q) on the interior.  ``A`` is factorized once per
(mass, eps, n) and reused for every path and every iteration.  Paths are
solved in batches: one iteration advances all of them at once.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded, solve_banded

from .core import DomainError, Grid, MeshFunction, PhysicsParams, as_potential

__all__ = [
    "PathSolverConfig",
    "ClassicalPath",
    "solve_path",
    "solve_paths",
    "solve_leg",
    "path_action",
    "path_energy",
    "occupation_histogram",
    "action_second_derivative",
    "equation_residual",
]

logger = logging.getLogger(__name__)

# smallest step length before a path is declared stalled
ETA_MIN = 1e-6
# Picard iterations over which the residual must halve before Newton takes over
STALL_WINDOW = 200


@dataclass(frozen=True)
class PathSolverConfig:
    eta_q: float = 0.5
    max_iter: int = 20000
    tol: float = 1e-9
    backtracking: bool = True
    newton_fallback: bool = True
    newton_max_iter: int = 200

    def __post_init__(self):
        if not 0 < self.eta_q <= 1:
            raise DomainError(f"eta_q must lie in (0, 1], got {self.eta_q}")
        if self.max_iter < 1 or self.tol <= 0:
            raise DomainError("max_iter must be >= 1 and tol > 0")


@dataclass
class ClassicalPath:
    q: np.ndarray
    boundary_x: float
    action: float
    energy: float
    converged: bool
    iterations: int
    residual_norm: float
    eps: float
    x_end: Optional[float] = None
    clamps: int = 0

    @property
    def n_steps(self) -> int:
        return self.q.size - 1

    @property
    def is_closed(self) -> bool:
        return self.x_end is None or self.x_end == self.boundary_x

    @property
    def velocity(self) -> np.ndarray:
        """Forward-difference velocity on the n time intervals."""
        return np.diff(self.q) / self.eps


@lru_cache(maxsize=64)
def _kinetic_factor(mass: float, eps: float, n_steps: int):
    # Cholesky factor of (m/eps^2) tridiag(-1, 2, -1) on the n-1 interior nodes
    c = mass / eps ** 2
    ab = np.zeros((2, n_steps - 1))
    ab[0, 1:] = -c
    ab[1, :] = 2.0 * c
    return cholesky_banded(ab, lower=False)


def _apply_kinetic_inverse(mass, eps, n_steps, rhs):
    cb = _kinetic_factor(float(mass), float(eps), int(n_steps))
    return cho_solve_banded((cb, False), rhs)


def equation_residual(pot, mass: float, eps: float, Q: np.ndarray) -> np.ndarray:
    """Interior residual of the discrete equations of motion, shape (P, n-1)."""
    Q = np.atleast_2d(Q)
    lap = Q[:, 2:] - 2.0 * Q[:, 1:-1] + Q[:, :-2]
    return -(mass / eps ** 2) * lap + pot.deriv(Q[:, 1:-1])


def _fixed_point_solve(pot, mass, eps, n_steps, xa, xb, config, q_init):
    P = xa.size
    k = np.arange(n_steps + 1) / n_steps
    q_lin = xa[:, None] + (xb - xa)[:, None] * k[None, :]
    if q_init is None:
        # static path at the start point, straight line for open legs
        Q = q_lin.copy()
    else:
        Q = np.array(np.broadcast_to(q_init, (P, n_steps + 1)), dtype=float)
        Q[:, 0], Q[:, -1] = xa, xb

    if n_steps < 2:
        res = np.zeros(P)
        return Q, np.ones(P, bool), np.zeros(P, int), res

    def merit(Qa):
        r = equation_residual(pot, mass, eps, Qa)
        return np.max(np.abs(r), axis=1), np.sqrt(np.mean(r ** 2, axis=1))

    def action(Qa):
        # the functional whose stationarity conditions are the path equations
        kin = 0.5 * mass * np.sum(np.diff(Qa, axis=1) ** 2, axis=1) / eps
        return kin + eps * np.sum(pot.primitive(Qa[:, 1:-1]), axis=1)

    # the residual cannot resolve below the rounding floor of the kinetic stencil
    scale = 1.0 + max(np.max(np.abs(xa)), np.max(np.abs(xb)))
    tol = max(config.tol, 64.0 * np.finfo(float).eps * mass / eps ** 2 * scale)
    eta = np.full(P, config.eta_q)
    iters = np.zeros(P, dtype=int)
    rinf, r2 = merit(Q)
    S = action(Q)
    active = rinf > tol
    check_r2 = r2.copy()
    for it in range(1, config.max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Qa = Q[idx]
        lin = q_lin[idx, 1:-1]
        # fixed point -A^{-1} t(q) = straight line - L^{-1} v'(q)
        corr = _apply_kinetic_inverse(mass, eps, n_steps, pot.deriv(Qa[:, 1:-1]).T).T
        step = (lin - corr) - Qa[:, 1:-1]
        cand = Qa.copy()
        cand[:, 1:-1] += eta[idx, None] * step
        cinf, c2 = merit(cand)
        cS = action(cand)
        iters[idx] += 1
        if config.backtracking:
            # the step is a preconditioned descent direction for the action;
            # at rounding level fall back to the residual
            flat = cS <= S[idx] + 1e-13 * np.maximum(1.0, np.abs(S[idx]))
            ok = (cS < S[idx]) | (flat & (c2 <= r2[idx]))
        else:
            ok = np.ones(idx.size, dtype=bool)
        acc = idx[ok]
        Q[acc] = cand[ok]
        rinf[acc], r2[acc], S[acc] = cinf[ok], c2[ok], cS[ok]
        eta[acc] = np.minimum(config.eta_q, 1.5 * eta[acc])
        eta[idx[~ok]] *= 0.5
        active = (rinf > tol) & (eta >= ETA_MIN)
        if config.newton_fallback and it % STALL_WINDOW == 0:
            # slow linear convergence near marginal paths: Newton finishes these
            slow = r2 > 0.5 * check_r2
            active &= ~slow
            check_r2 = r2.copy()
    if config.newton_fallback:
        for p in np.flatnonzero(rinf > tol):
            q, r, extra = _newton_polish(pot, mass, eps, Q[p], tol, config.newton_max_iter)
            iters[p] += extra
            if r > tol:
                q, r, extra = _homotopy_solve(pot, mass, eps, q_lin[p], tol,
                                              config.newton_max_iter)
                iters[p] += extra
            if r < rinf[p]:
                Q[p], rinf[p] = q, r
    return Q, rinf <= tol, iters, rinf


class _ScaledPotential:
    def __init__(self, pot, s):
        self.pot, self.s = pot, s

    def value(self, q):
        return self.s * self.pot.value(q)

    def deriv(self, q):
        return self.s * self.pot.deriv(q)

    def curvature(self, q):
        return self.s * np.asarray(self.pot.curvature(q), dtype=float)

    def primitive(self, q):
        return self.s * self.pot.primitive(q)


def _homotopy_solve(pot, mass, eps, q_start, tol, max_iter):
    """Follow the path from v = 0 (straight line) to the full potential s*v, s: 0 -> 1."""
    q, s, ds, total = q_start.copy(), 0.0, 0.05, 0
    r = np.inf
    while s < 1.0:
        s_new = min(1.0, s + ds)
        qn, r, it = _newton_polish(_ScaledPotential(pot, s_new), mass, eps, q, tol, max_iter)
        total += it
        if r <= tol:
            q, s, ds = qn, s_new, min(0.25, 1.5 * ds)
        else:
            ds *= 0.5
            if ds < 1e-4:
                return q, float(np.max(np.abs(equation_residual(pot, mass, eps, q)))), total
    return q, r, total


def _newton_polish(pot, mass, eps, q, tol, max_iter):
    """Damped Newton on the path equations; also reaches unstable (saddle) paths.

    The Picard step above is a preconditioned descent on the action and can
    only settle into minima of S; Newton on the residual has no such bias.
    """
    q = q.copy()
    c = mass / eps ** 2
    r = equation_residual(pot, mass, eps, q)[0]
    norm = float(np.sqrt(np.mean(r ** 2)))
    it = 0
    while it < max_iter and np.max(np.abs(r)) > tol:
        it += 1
        ab = np.empty((3, r.size))
        ab[0], ab[2] = -c, -c
        ab[1] = 2.0 * c + np.asarray(pot.curvature(q[1:-1]), dtype=float)
        try:
            step = solve_banded((1, 1), ab, -r)
        except (LinAlgError, ValueError):
            break
        if not np.all(np.isfinite(step)):
            break
        alpha, accepted = 1.0, False
        while alpha > 1e-8:
            cand = q.copy()
            cand[1:-1] += alpha * step
            rc = equation_residual(pot, mass, eps, cand)[0]
            nc = float(np.sqrt(np.mean(rc ** 2)))
            if nc < norm:
                q, r, norm, accepted = cand, rc, nc, True
                break
            alpha *= 0.5
        if not accepted:
            break
    return q, float(np.max(np.abs(r))), it


def _discrete_action(pot, mass, eps, Q):
    Q = np.atleast_2d(Q)
    kin = 0.5 * mass * np.sum(np.diff(Q, axis=1) ** 2, axis=1) / eps
    pot_term = eps * np.sum(pot.value(Q[:, 1:]), axis=1)
    return kin + pot_term


def _midpoint_energy(pot, mass, eps, q):
    vel = np.diff(q) / eps
    mid = 0.5 * (q[1:] + q[:-1])
    return 0.5 * mass * vel ** 2 - pot.value(mid)


def solve_leg(v, grid: Grid, params: PhysicsParams, x_start, x_end, n_steps: int,
              config: PathSolverConfig = PathSolverConfig(), q_init=None) -> list[ClassicalPath]:
    """Solve a batch of paths with n_steps time steps of length grid.eps.

    ``x_start``/``x_end`` broadcast against each other.  Closed paths have
    x_start == x_end.
    """
    pot = as_potential(v, grid)
    xa, xb = np.broadcast_arrays(np.atleast_1d(np.asarray(x_start, float)),
                                 np.atleast_1d(np.asarray(x_end, float)))
    xa, xb = xa.astype(float).copy(), xb.astype(float).copy()
    Q, conv, iters, res = _fixed_point_solve(pot, params.mass, grid.eps, int(n_steps),
                                             xa, xb, config, q_init)
    actions = _discrete_action(pot, params.mass, grid.eps, Q)
    out = []
    for p in range(xa.size):
        e = _midpoint_energy(pot, params.mass, grid.eps, Q[p])
        out.append(ClassicalPath(
            q=Q[p].copy(), boundary_x=float(xa[p]), action=float(actions[p]),
            energy=float(np.mean(e)), converged=bool(conv[p]), iterations=int(iters[p]),
            residual_norm=float(res[p]), eps=grid.eps,
            x_end=None if xa[p] == xb[p] else float(xb[p]),
            clamps=pot.clamps(Q[p])))
    return out


def solve_paths(v, grid: Grid, params: PhysicsParams, xs: Sequence[float],
                config: PathSolverConfig = PathSolverConfig(),
                q_init=None, warm_retry: bool = True) -> list[ClassicalPath]:
    """Closed paths q(0) = q(beta*hbar) = x for every x in ``xs``.

    All paths start from the static path (or ``q_init``) and are iterated
    together.  Paths that fail are retried once, warm-started from the
    nearest converged neighbour in ``xs``.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    paths = solve_leg(v, grid, params, xs, xs, grid.n_tau, config, q_init)
    if warm_retry and not all(p.converged for p in paths) and any(p.converged for p in paths):
        good = [i for i, p in enumerate(paths) if p.converged]
        for i, p in enumerate(paths):
            if p.converged:
                continue
            j = min(good, key=lambda g: abs(xs[g] - xs[i]))
            guess = paths[j].q - xs[j] + xs[i]
            retry = solve_leg(v, grid, params, xs[i], xs[i], grid.n_tau, config, guess)[0]
            if retry.converged or retry.residual_norm < p.residual_norm:
                paths[i] = retry
    n_bad = sum(not p.converged for p in paths)
    if n_bad:
        logger.debug("%d of %d paths did not converge", n_bad, len(paths))
    return paths


def solve_path(v, grid: Grid, params: PhysicsParams, x: float,
               config: PathSolverConfig = PathSolverConfig(), q_init=None,
               x_end: Optional[float] = None) -> ClassicalPath:
    """Single path from x to x_end (default: back to x) over [0, beta*hbar]."""
    if q_init is not None:
        q_init = np.asarray(q_init, dtype=float)
        if q_init.size != grid.n_tau + 1:
            raise DomainError("q_init must have n_tau + 1 entries")
        end = x if x_end is None else x_end
        if not (np.isclose(q_init[0], x) and np.isclose(q_init[-1], end)):
            raise DomainError("q_init does not respect the boundary values")
    end = x if x_end is None else x_end
    return solve_leg(v, grid, params, x, end, grid.n_tau, config, q_init)[0]


def path_action(path: ClassicalPath, v, grid: Grid, params: PhysicsParams) -> float:
    """eps * sum_k [m/2 ((q_k - q_{k-1})/eps)^2 + v(q_k)], k = 1..n."""
    pot = as_potential(v, grid)
    S = float(_discrete_action(pot, params.mass, path.eps, path.q)[0])
    path.action = S
    return S


def path_energy(path: ClassicalPath, v, grid: Grid, params: PhysicsParams):
    """Mean conserved energy m/2 qdot^2 - v(q) over interval midpoints, and its max drift."""
    pot = as_potential(v, grid)
    e = _midpoint_energy(pot, params.mass, path.eps, path.q)
    mean = float(np.mean(e))
    return mean, float(np.max(np.abs(e - mean)))


def occupation_histogram(path: ClassicalPath, grid: Grid) -> MeshFunction:
    """Time spent per mesh cell: eps * #{j = 1..n : round(q_j) = x}."""
    idx = grid.node_index(path.q[1:])
    h = path.eps * np.bincount(idx, minlength=grid.n_x).astype(float)
    return MeshFunction(h, role="density")


def action_second_derivative(v, grid: Grid, params: PhysicsParams, x: float,
                             config: PathSolverConfig = PathSolverConfig(),
                             delta: Optional[float] = None) -> float:
    """Mixed endpoint derivative d^2 S(x_a, x_b) / dx_a dx_b at x_a = x_b = x.

    Central four-point stencil with step ``delta`` (default dx/4), Richardson
    extrapolated against the half step.  Negative inside wells, so that the
    van Vleck radicand -(1/2 pi hbar) * result is positive.
    """
    h = grid.dx / 4.0 if delta is None else float(delta)

    def mixed(step):
        a = np.array([x + step, x + step, x - step, x - step])
        b = np.array([x + step, x - step, x + step, x - step])
        legs = solve_leg(v, grid, params, a, b, grid.n_tau, config)
        bad = [p for p in legs if not p.converged]
        if bad:
            raise RuntimeError(
                f"path solve failed near x={x} (residual {bad[0].residual_norm:.2e})")
        S = np.array([p.action for p in legs])
        return (S[0] - S[1] - S[2] + S[3]) / (4.0 * step ** 2)

    d1, d2 = mixed(h), mixed(0.5 * h)
    return float((4.0 * d2 - d1) / 3.0)

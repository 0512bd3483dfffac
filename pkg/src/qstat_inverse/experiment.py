"""Experiment layer: built-in potentials, seeded sampling, run configs and runners.

Config files are INI text (see ``configs/`` and the README for the grammar).
Every runner writes CSV files plus PNG figures into the output directory and
returns a :class:`RunManifest` that is also written there as ``manifest.json``.
"""
from __future__ import annotations

import configparser
import csv
import json
import platform
import re
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .core import DomainError, Grid, PhysicsParams, PotentialField, build_grid, trapezoid_weights
from .paths import PathSolverConfig
from .prior import make_prior
from .reconstruction import Dataset, ReconstructionConfig, make_dataset, map_descent
from .semiclassical import classical_density, semiclassical_partition
from .spectral import boltzmann_diagonal, spectral_decomposition

__all__ = [
    "builtin_potential",
    "sample_dataset",
    "density_masses",
    "RunConfig",
    "RunManifest",
    "load_config",
    "run_likelihood",
    "run_sample",
    "run_reconstruct",
    "write_csv",
]

_HARMONIC = re.compile(r"^harmonic(?:\(\s*([0-9.eE+-]+)\s*\))?$")


def builtin_potential(name: str, grid: Grid, mass: float = 1.0) -> PotentialField:
    """Mesh samples of a named potential.

    ``fermi_well``: -1/(1 + exp((|x-15| - 4)/2)); ``cosine_well``:
    (cos(2 pi (x-15)/10) - 1)/4 on [5, 25], zero elsewhere; ``zero``;
    ``harmonic(w)``: m w^2 (x - c)^2 / 2 centred on the mesh.
    """
    x = grid.x
    key = name.strip().lower()
    if key == "fermi_well":
        vals = -1.0 / (1.0 + np.exp(0.5 * (np.abs(x - 15.0) - 4.0)))
    elif key == "cosine_well":
        inside = (x >= 5.0) & (x <= 25.0)
        vals = np.where(inside, 0.25 * (np.cos(2.0 * np.pi * (x - 15.0) / 10.0) - 1.0), 0.0)
    elif key == "zero":
        vals = np.zeros_like(x)
    else:
        m = _HARMONIC.match(key)
        if m is None:
            raise DomainError(f"unknown built-in potential {name!r}")
        omega = float(m.group(1)) if m.group(1) else 1.0
        c = 0.5 * (grid.x_min + grid.x_max)
        vals = 0.5 * mass * omega ** 2 * (x - c) ** 2
    return PotentialField(vals)


def density_masses(truth, grid: Grid, params: PhysicsParams) -> np.ndarray:
    """Per-node probabilities of the exact thermal density (trapezoid weights)."""
    vals = truth.values if isinstance(truth, PotentialField) else np.asarray(truth, float)
    th = boltzmann_diagonal(spectral_decomposition(vals, grid, params), params.beta)
    p = th.normalized * trapezoid_weights(grid)
    return p / p.sum()


def sample_dataset(truth, grid: Grid, params: PhysicsParams, N: int,
                   seed: Optional[int]) -> Dataset:
    """N i.i.d. node draws from the exact thermal density by inverse CDF.

    Seeding rule: ``numpy.random.Generator(PCG64(seed))``; draw N uniforms
    with ``random()`` and map each u to the first node whose cumulative
    mass exceeds u * total (``searchsorted(..., side="right")``).
    """
    if N < 1:
        raise DomainError("N must be at least 1")
    cdf = np.cumsum(density_masses(truth, grid, params))
    u = np.random.Generator(np.random.PCG64(seed)).random(int(N))
    idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), grid.n_x - 1)
    return make_dataset(grid.x[idx], grid, seed=seed)


# -- configuration -----------------------------------------------------------

@dataclass
class RunConfig:
    mass: float = 1.0
    beta: float = 10.0
    hbar: float = 1.0
    n_x: int = 30
    x_min: float = 0.0
    x_max: float = 29.0
    n_tau: int = 30
    truth: str = "cosine_well"
    gamma: float = 5.0
    kernel_spacing: str = "dx"
    reference: str = "zero"
    n_data: int = 15
    seed: int = 42
    backend: str = "exact"
    deriv_backend: Optional[str] = None
    eta_v: float = 0.05
    max_outer: int = 3000
    grad_tol: float = 1e-4
    step_rule: str = "bb"
    freeze_boundary: bool = False
    eta_q: float = 0.5
    path_max_iter: int = 20000
    path_tol: float = 1e-9
    output_dir: str = "out"
    threads: int = 1
    source: Optional[str] = None

    @property
    def params(self) -> PhysicsParams:
        return PhysicsParams(self.mass, self.beta, self.hbar)

    @property
    def grid(self) -> Grid:
        return build_grid(self.n_x, self.x_min, self.x_max, self.n_tau, self.params)

    @property
    def path_config(self) -> PathSolverConfig:
        return PathSolverConfig(eta_q=self.eta_q, max_iter=self.path_max_iter, tol=self.path_tol)

    def reconstruction_config(self) -> ReconstructionConfig:
        return ReconstructionConfig(
            gamma=self.gamma, eta_v=self.eta_v, max_outer=self.max_outer,
            grad_tol=self.grad_tol, likelihood_backend=self.backend,
            deriv_backend=self.deriv_backend, path_config=self.path_config,
            freeze_boundary=self.freeze_boundary, step_rule=self.step_rule,
            threads=self.threads)


# (section, key) -> (RunConfig field, converter)
_SCHEMA = {
    ("physics", "mass"): ("mass", float),
    ("physics", "beta"): ("beta", float),
    ("physics", "hbar"): ("hbar", float),
    ("grid", "n_x"): ("n_x", int),
    ("grid", "x_min"): ("x_min", float),
    ("grid", "x_max"): ("x_max", float),
    ("grid", "n_tau"): ("n_tau", int),
    ("truth", "potential"): ("truth", str),
    ("prior", "gamma"): ("gamma", float),
    ("prior", "kernel_spacing"): ("kernel_spacing", str),
    ("prior", "reference"): ("reference", str),
    ("sampling", "n_data"): ("n_data", int),
    ("sampling", "seed"): ("seed", int),
    ("reconstruction", "backend"): ("backend", str),
    ("reconstruction", "deriv_backend"): ("deriv_backend", str),
    ("reconstruction", "eta_v"): ("eta_v", float),
    ("reconstruction", "max_outer"): ("max_outer", int),
    ("reconstruction", "grad_tol"): ("grad_tol", float),
    ("reconstruction", "step_rule"): ("step_rule", str),
    ("reconstruction", "freeze_boundary"): ("freeze_boundary", "bool"),
    ("paths", "eta_q"): ("eta_q", float),
    ("paths", "max_iter"): ("path_max_iter", int),
    ("paths", "tol"): ("path_tol", float),
    ("output", "dir"): ("output_dir", str),
}


def load_config(path) -> RunConfig:
    """Read an INI run configuration; unknown sections or keys are errors."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read(path)
    cfg = RunConfig(source=str(path))
    for section in parser.sections():
        for key in parser[section]:
            if (section, key) not in _SCHEMA:
                raise DomainError(f"unknown config entry [{section}] {key}")
            name, conv = _SCHEMA[(section, key)]
            if conv == "bool":
                val = parser.getboolean(section, key)
            else:
                raw = parser.get(section, key).strip()
                try:
                    val = conv(raw)
                except ValueError as exc:
                    raise DomainError(f"bad value for [{section}] {key}: {raw!r}") from exc
            setattr(cfg, name, val)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    cfg.params  # noqa: B018 - validates physics
    cfg.grid  # noqa: B018 - validates the mesh
    cfg.reconstruction_config()
    if cfg.kernel_spacing not in ("dx", "tau"):
        raise DomainError("prior kernel_spacing must be 'dx' or 'tau'")
    builtin_potential(cfg.truth, cfg.grid, cfg.mass)
    if cfg.reference != "truth":
        builtin_potential(cfg.reference, cfg.grid, cfg.mass)


# -- outputs -----------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config: dict
    versions: dict
    timings: dict = field(default_factory=dict)
    convergence: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    figures: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable))
        return path


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _versions() -> dict:
    import matplotlib
    import scipy
    return {"qstat_inverse": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "python": platform.python_version()}


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header, rows, units: str) -> Path:
    """CSV with a ``# units:`` comment line, a header row and repr-exact floats."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# units: {units}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(c) for c in row])
    return path


def _prepare(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _densities(vals, grid, params, path_config):
    cl = classical_density(vals, grid, params).values
    sc_state = semiclassical_partition(vals, grid, params, path_config, with_green=False)
    sc = sc_state.normalized
    ex = boltzmann_diagonal(spectral_decomposition(vals, grid, params), params.beta).normalized
    return cl, sc, ex, sc_state


_UNITS = "hbar=1; x in mesh length units; densities per unit length; energies in units of v"


def run_likelihood(cfg: RunConfig, out_dir=None, figures: bool = True) -> RunManifest:
    """Classical, semiclassical and exact densities for the truth potential, plus paths."""
    t0 = time.perf_counter()
    out = _prepare(cfg, out_dir)
    grid, params = cfg.grid, cfg.params
    v = builtin_potential(cfg.truth, grid, cfg.mass).values
    cl, sc, ex, st = _densities(v, grid, params, cfg.path_config)
    files = [
        write_csv(out / "potential.csv", ["x", "value"], zip(grid.x, v), _UNITS),
        write_csv(out / "densities.csv", ["x", "classical", "semiclassical", "exact"],
                  zip(grid.x, cl, sc, ex), _UNITS),
        write_csv(out / "path_summary.csv",
                  ["x", "action", "energy", "q_min", "q_max", "prefactor", "converged",
                   "iterations", "valid"],
                  [(p.boundary_x, p.action, p.energy, p.q.min(), p.q.max(), f.prefactor,
                    p.converged, p.iterations, f.valid) for p, f in zip(st.paths, st.fluct)],
                  _UNITS),
        write_csv(out / "paths.csv", ["x", "tau", "q"],
                  [(p.boundary_x, t, q) for p in st.paths for t, q in zip(grid.tau, p.q)],
                  _UNITS),
    ]
    figs = []
    if figures:
        from .plotting import plot_likelihood
        figs = plot_likelihood(out, grid, v, cl, sc, ex, st.paths)
    man = RunManifest(
        command="likelihood", config=asdict(cfg), versions=_versions(),
        timings={"total_s": time.perf_counter() - t0},
        files=[f.name for f in files], figures=[f.name for f in figs],
        diagnostics={"failed_paths": len(st.failed_nodes),
                     "invalid_fluctuations": len(st.invalid_nodes),
                     "clamps": int(sum(p.clamps for p in st.paths))})
    man.write(out)
    return man


def run_sample(cfg: RunConfig, out_dir=None) -> tuple:
    t0 = time.perf_counter()
    out = _prepare(cfg, out_dir)
    grid, params = cfg.grid, cfg.params
    truth = builtin_potential(cfg.truth, grid, cfg.mass)
    data = sample_dataset(truth, grid, params, cfg.n_data, cfg.seed)
    path = write_csv(out / "data.csv", ["index", "node", "x"],
                     [(i, j, x) for i, (j, x) in enumerate(zip(data.indices, data.positions))],
                     _UNITS)
    man = RunManifest(command="sample", config=asdict(cfg), versions=_versions(),
                      timings={"total_s": time.perf_counter() - t0}, files=[path.name])
    man.write(out)
    return data, man


def run_reconstruct(cfg: RunConfig, out_dir=None, figures: bool = True) -> tuple:
    """Sample data from the truth, run the MAP descent, write comparison outputs."""
    t0 = time.perf_counter()
    out = _prepare(cfg, out_dir)
    grid, params = cfg.grid, cfg.params
    truth = builtin_potential(cfg.truth, grid, cfg.mass)
    data = sample_dataset(truth, grid, params, cfg.n_data, cfg.seed)
    ref = truth.values if cfg.reference == "truth" else \
        builtin_potential(cfg.reference, grid, cfg.mass).values
    prior = make_prior(grid, cfg.gamma, ref, spacing=cfg.kernel_spacing)
    rcfg = cfg.reconstruction_config()
    t1 = time.perf_counter()
    state = map_descent(ref.copy(), data, grid, params, prior, rcfg)
    t_descent = time.perf_counter() - t1

    v_rec = state.v.values
    cl, sc, ex, _ = _densities(v_rec, grid, params, cfg.path_config)
    tcl, tsc, tex, _ = _densities(truth.values, grid, params, cfg.path_config)
    emp = data.counts(grid.n_x) / (data.n * grid.dx)
    files = [
        write_csv(out / "data.csv", ["index", "node", "x"],
                  [(i, j, x) for i, (j, x) in enumerate(zip(data.indices, data.positions))],
                  _UNITS),
        write_csv(out / "potential.csv", ["x", "truth", "reconstructed"],
                  zip(grid.x, truth.values, v_rec), _UNITS),
        write_csv(out / "densities.csv", ["x", "classical", "semiclassical", "exact", "empirical"],
                  zip(grid.x, cl, sc, ex, emp), _UNITS),
        write_csv(out / "truth_densities.csv", ["x", "classical", "semiclassical", "exact"],
                  zip(grid.x, tcl, tsc, tex), _UNITS),
        write_csv(out / "trace.csv", ["iter", "energy", "grad_norm"],
                  [(i, e, gn) for i, (e, gn) in enumerate(zip(state.energy_trace,
                                                              state.grad_trace))], _UNITS),
    ]
    figs = []
    if figures:
        from .plotting import plot_reconstruction
        figs = plot_reconstruction(out, grid, truth.values, v_rec, cl, sc, ex, emp, tex,
                                   state.energy_trace)
    d = dict(state.diagnostics)
    man = RunManifest(
        command="reconstruct", config=asdict(cfg), versions=_versions(),
        timings={"total_s": time.perf_counter() - t0, "descent_s": t_descent},
        convergence={"converged": state.converged, "outer_iter": state.outer_iter,
                     "final_energy": state.energy_trace[-1],
                     "final_grad_norm": state.grad_trace[-1]},
        files=[f.name for f in files], figures=[f.name for f in figs], diagnostics=d)
    man.write(out)
    return state, data, man

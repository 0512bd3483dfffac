"""PNG figures for the CLI report path (non-interactive Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_likelihood", "plot_reconstruction"]


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-stable
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_likelihood(out: Path, grid, v, classical, semiclassical, exact, paths) -> list:
    """Potential, inverted potential with path ranges, densities, and paths vs tau."""
    out = Path(out)
    fig, ax = plt.subplots(2, 2, figsize=(10, 7))
    ax[0, 0].plot(grid.x, v, "k-")
    ax[0, 0].set(title="potential v(x)", xlabel="x", ylabel="v")

    ax[0, 1].plot(grid.x, -np.asarray(v), "k-")
    for p in paths[::2]:
        ax[0, 1].hlines(p.energy, p.q.min(), p.q.max(), lw=0.6, color="tab:blue")
    ax[0, 1].set(title="u(x) = -v(x) and path ranges", xlabel="x", ylabel="u")

    ax[1, 0].plot(grid.x, classical, "k:", label="classical")
    ax[1, 0].plot(grid.x, semiclassical, "k-", label="semiclassical")
    ax[1, 0].plot(grid.x, exact, "k--", label="exact")
    ax[1, 0].set(title="normalized densities", xlabel="x", ylabel="p(x)")
    ax[1, 0].legend()

    for p in paths[::3]:
        ax[1, 1].plot(grid.tau, p.q, lw=0.8)
    ax[1, 1].set(title="paths q_x(tau)", xlabel="tau", ylabel="q")
    return [_save(fig, out / "likelihood.png")]


def plot_reconstruction(out: Path, grid, truth, recon, classical, semiclassical, exact,
                        empirical, truth_exact, trace) -> list:
    out = Path(out)
    fig, ax = plt.subplots(1, 2, figsize=(10, 4))
    ax[0].plot(grid.x, truth, "k-", lw=0.8, label="truth")
    ax[0].plot(grid.x, recon, "k-", lw=2.2, label="reconstructed")
    ax[0].set(title="potential", xlabel="x", ylabel="v")
    ax[0].legend()
    ax[1].bar(grid.x, empirical, width=0.8 * grid.dx, color="0.85", label="data")
    ax[1].plot(grid.x, truth_exact, "k-", lw=0.8, label="truth (exact)")
    ax[1].plot(grid.x, semiclassical, "k-", lw=2.2, label="semiclassical")
    ax[1].plot(grid.x, classical, "k:", label="classical")
    ax[1].plot(grid.x, exact, "k--", label="exact")
    ax[1].set(title="densities", xlabel="x", ylabel="p(x)")
    ax[1].legend(fontsize=8)
    first = _save(fig, out / "reconstruction.png")

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.arange(len(trace)), trace, "k-")
    ax.set(title="posterior energy", xlabel="accepted step", ylabel="E(v|D)")
    return [first, _save(fig, out / "energy_trace.png")]

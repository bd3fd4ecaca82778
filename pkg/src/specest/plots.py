"""Figure rendering for experiment reports (headless, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grids import GridSpectrum

__all__ = ["render_error_boxplot", "render_innovation_averages", "render_spectrum"]


def render_error_boxplot(path, results) -> None:
    """Boxplots of the per-run relative errors, grouped by (N, nu)."""
    cells = {}
    for res in results:
        cells.setdefault((res.n_samples, res.nu), []).append(res.err)
    keys = sorted(cells)
    fig, ax = plt.subplots(figsize=(1.2 * max(len(keys), 3) + 2, 4))
    ax.boxplot([cells[k] for k in keys])
    ax.set_xticks(range(1, len(keys) + 1))
    ax.set_xticklabels([f"N={n}\nnu={nu}" for n, nu in keys])
    ax.set_ylabel("relative error")
    ax.set_title("Relative estimation error over the unit circle")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_innovation_averages(path, spectrum: GridSpectrum, n_samples, nu) -> None:
    """Entry-wise plot of an averaged innovation spectrum against the white
    target: diagonal entries (real) with a reference line at 1, off-diagonal
    magnitudes with a reference at 0."""
    m = spectrum.m
    theta = spectrum.grid.nodes
    fig, axes = plt.subplots(m, m, figsize=(3.2 * m, 2.6 * m), squeeze=False, sharex=True)
    for i in range(m):
        for j in range(m):
            ax = axes[i][j]
            if i == j:
                ax.plot(theta, spectrum.samples[:, i, j].real)
                ax.axhline(1.0, color="k", lw=0.8, ls="--")
                ax.set_title(f"entry ({i + 1},{i + 1})", fontsize=9)
            else:
                ax.plot(theta, np.abs(spectrum.samples[:, i, j]))
                ax.axhline(0.0, color="k", lw=0.8, ls="--")
                ax.set_title(f"|entry ({i + 1},{j + 1})|", fontsize=9)
            if i == m - 1:
                ax.set_xlabel(r"$\theta$")
    fig.suptitle(f"Averaged innovation spectrum, N={n_samples}, nu={nu}", fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_spectrum(path, spectrum: GridSpectrum, title: str = "Spectral density") -> None:
    """Entry-wise magnitude plot of a matrix spectral density."""
    m = spectrum.m
    theta = spectrum.grid.nodes
    fig, axes = plt.subplots(m, m, figsize=(3.2 * m, 2.6 * m), squeeze=False, sharex=True)
    for i in range(m):
        for j in range(m):
            ax = axes[i][j]
            values = spectrum.samples[:, i, j]
            ax.plot(theta, values.real if i == j else np.abs(values))
            ax.set_title(f"entry ({i + 1},{j + 1})", fontsize=9)
            if i == m - 1:
                ax.set_xlabel(r"$\theta$")
    fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

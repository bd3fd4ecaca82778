"""Uniform unit-circle grids, sampled matrix spectra, and circle quadrature.

Spectral densities are represented nonparametrically as Hermitian matrix
samples on the uniform grid theta_k = 2*pi*k/K.  Integration against the
normalized Lebesgue measure on the circle reduces to the plain average of
the samples, which is spectrally accurate for smooth (rational) integrands.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FrequencyGrid",
    "GridSpectrum",
    "integrate",
    "constant_spectrum",
    "save_spectrum",
    "load_spectrum",
]

HERMITIAN_RTOL = 1e-12


@dataclass(frozen=True)
class FrequencyGrid:
    """Equally spaced angles theta_k = 2*pi*k/K, k = 0..K-1."""

    size: int

    def __post_init__(self):
        if self.size < 8:
            raise ValueError(f"grid needs at least 8 nodes, got {self.size}")
        if self.size % 2 != 0:
            raise ValueError(f"grid size must be even, got {self.size}")

    @property
    def nodes(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.size) / self.size

    @property
    def points(self) -> np.ndarray:
        """Unit-circle points e^{j theta_k}."""
        return np.exp(1j * self.nodes)


@dataclass
class GridSpectrum:
    """Hermitian matrix-valued samples of a spectral density on a grid.

    ``samples`` has shape (K, m, m).  ``coercive`` marks densities known to
    be bounded away from singularity on the whole circle.
    """

    grid: FrequencyGrid
    samples: np.ndarray
    coercive: bool = False
    m: int = field(init=False)

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=complex)
        if self.samples.ndim != 3 or self.samples.shape[1] != self.samples.shape[2]:
            raise ValueError(f"samples must be (K, m, m), got {self.samples.shape}")
        if self.samples.shape[0] != self.grid.size:
            raise ValueError(
                f"{self.samples.shape[0]} samples for a {self.grid.size}-node grid"
            )
        self.m = self.samples.shape[1]

    def validate(self, hermitian_rtol: float = HERMITIAN_RTOL) -> None:
        """Check Hermitian symmetry (and positivity when flagged coercive)."""
        scale = max(np.abs(self.samples).max(), 1e-300)
        dev = np.abs(self.samples - self.samples.conj().transpose(0, 2, 1)).max()
        if dev > hermitian_rtol * scale:
            raise ValueError(f"samples not Hermitian: deviation {dev:.3e}")
        if self.coercive and self.min_eigenvalue() <= 0.0:
            raise ValueError("coercive spectrum has a nonpositive eigenvalue")

    def min_eigenvalue(self) -> float:
        herm = 0.5 * (self.samples + self.samples.conj().transpose(0, 2, 1))
        return float(np.linalg.eigvalsh(herm).min())

    def __add__(self, other: "GridSpectrum") -> "GridSpectrum":
        self._check_compatible(other)
        return GridSpectrum(
            self.grid,
            self.samples + other.samples,
            coercive=self.coercive and other.coercive,
        )

    def scale(self, factor: float) -> "GridSpectrum":
        return GridSpectrum(
            self.grid, factor * self.samples, coercive=self.coercive and factor > 0
        )

    def _check_compatible(self, other: "GridSpectrum") -> None:
        if other.grid.size != self.grid.size or other.m != self.m:
            raise ValueError("spectra live on incompatible grids")


def integrate(values: np.ndarray, grid: FrequencyGrid) -> np.ndarray:
    """Quadrature over the circle: (1/K) * sum_k values[k].

    On a periodic uniform grid the rectangle rule reproduces Fourier
    coefficients of trigonometric polynomials of degree < K/2 exactly.
    """
    values = np.asarray(values)
    if values.shape[0] != grid.size:
        raise ValueError(f"{values.shape[0]} values for a {grid.size}-node grid")
    return values.mean(axis=0)


def constant_spectrum(matrix: np.ndarray, grid: FrequencyGrid, coercive: bool = False) -> GridSpectrum:
    """Spectrum equal to ``matrix`` at every node."""
    matrix = np.asarray(matrix, dtype=complex)
    samples = np.broadcast_to(matrix, (grid.size,) + matrix.shape).copy()
    return GridSpectrum(grid, samples, coercive=coercive)


def save_spectrum(path, spectrum: GridSpectrum) -> None:
    """Write a grid spectrum as CSV: theta then re_ij, im_ij in row-major order."""
    m = spectrum.m
    header = ["theta"]
    for i in range(1, m + 1):
        for j in range(1, m + 1):
            header += [f"re_{i}{j}", f"im_{i}{j}"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for theta, sample in zip(spectrum.grid.nodes, spectrum.samples):
            row = [f"{theta:.17g}"]
            for i in range(m):
                for j in range(m):
                    row += [f"{sample[i, j].real:.17g}", f"{sample[i, j].imag:.17g}"]
            writer.writerow(row)


def load_spectrum(path, coercive: bool = False) -> GridSpectrum:
    """Read a grid spectrum written by :func:`save_spectrum`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    m = int(round(np.sqrt((len(header) - 1) / 2)))
    if 1 + 2 * m * m != len(header):
        raise ValueError(f"malformed spectrum header with {len(header)} columns")
    data = np.asarray(rows)
    samples = (data[:, 1::2] + 1j * data[:, 2::2]).reshape(-1, m, m)
    grid = FrequencyGrid(samples.shape[0])
    if not np.allclose(data[:, 0], grid.nodes, atol=1e-12):
        raise ValueError("spectrum file nodes are not the uniform grid")
    return GridSpectrum(grid, samples, coercive=coercive)

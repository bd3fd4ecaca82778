"""Divergence indices between spectral densities and between covariance matrices.

The central object is the prediction-based family

    S_T(phi || psi; tau) = int tr[ (W^{-1} phi W^{-*})^tau / (tau (tau-1))
                                   - phi psi^{-1} / (tau - 1) ] + m / tau

defined through any left square spectral factor W of the reference density
psi (the value does not depend on the choice of factor).  Its tau -> 0 limit
is the multivariate Itakura-Saito distance and its tau -> 1 limit is the
Kullback-Leibler divergence between the normalized innovation spectrum and
the identity.  The Alpha and Beta families are provided for cross-checks,
and the same construction on constant spectra yields the matrix divergences
used for state-covariance fitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NotHPDError
from .grids import GridSpectrum
from .matfun import hermitian_part
from .statespace import SpectralFactor, eval_transfer, inverse_factor

__all__ = [
    "HPDMatrix",
    "tau_divergence",
    "itakura_saito",
    "kl_type",
    "alpha_divergence",
    "beta_divergence",
    "matrix_tau_divergence",
    "burg_divergence",
    "von_neumann_divergence",
    "penalty_profile",
    "penalty_profile_slope",
    "innovation_eigenvalues",
]

# 1/(tau (tau-1)) amplifies eigenvalue round-off near the removable
# singularities; callers are routed to the dedicated limit formulas there.
LIMIT_GUARD = 1e-4


@dataclass
class HPDMatrix:
    """Symmetric (or Hermitian) positive definite matrix with a cached
    lower-triangular factor value = L L^T."""

    value: np.ndarray
    _factor: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.value = np.asarray(self.value)
        scale = max(np.abs(self.value).max(), 1e-300)
        if np.abs(self.value - self.value.conj().T).max() > 1e-12 * scale:
            raise NotHPDError("matrix is not Hermitian")

    @property
    def factor(self) -> np.ndarray:
        if self._factor is None:
            try:
                self._factor = scipy.linalg.cholesky(self.value, lower=True)
            except scipy.linalg.LinAlgError as exc:
                raise NotHPDError("matrix is not positive definite") from exc
        return self._factor

    @property
    def dim(self) -> int:
        return self.value.shape[0]


def _as_hpd(p) -> HPDMatrix:
    return p if isinstance(p, HPDMatrix) else HPDMatrix(np.asarray(p, dtype=float))


def _coercive_eigvalsh(samples: np.ndarray, what: str) -> np.ndarray:
    w = np.linalg.eigvalsh(hermitian_part(samples))
    if w.min() <= 1e-12 * max(w.max(), 0.0) or w.max() <= 0.0:
        raise NotHPDError(f"{what} is not coercive: min eigenvalue {w.min():.3e}")
    return w


def innovation_eigenvalues(phi: GridSpectrum, psi_factor: SpectralFactor) -> np.ndarray:
    """Per-node eigenvalues of the normalized innovation spectrum W^{-1} phi W^{-*}."""
    winv = eval_transfer(inverse_factor(psi_factor), phi.grid)
    e = winv @ phi.samples @ np.conj(np.swapaxes(winv, -1, -2))
    return _coercive_eigvalsh(e, "innovation spectrum")


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not np.isfinite(tau):
        raise ValueError("tau must be finite")
    if abs(tau) < LIMIT_GUARD or abs(tau - 1.0) < LIMIT_GUARD:
        raise ValueError(
            f"tau={tau} is too close to a removable singularity; "
            "use the dedicated limit divergences instead"
        )
    return tau


def tau_divergence(phi: GridSpectrum, psi_factor: SpectralFactor, tau: float) -> float:
    """Prediction-based divergence of order ``tau`` between ``phi`` and the
    density factored by ``psi_factor``.

    Nonnegative up to quadrature slack, zero exactly when phi equals the
    reference density pointwise.
    """
    tau = _check_tau(tau)
    lam = innovation_eigenvalues(phi, psi_factor)
    m = phi.m
    # tr[phi psi^{-1}] equals tr[W^{-1} phi W^{-*}] pointwise, so both terms
    # only need the innovation eigenvalues; this also makes invariance under
    # factor choice and congruence exact in floating point.
    per_node = (lam**tau).sum(axis=1) / (tau * (tau - 1.0)) - lam.sum(axis=1) / (tau - 1.0)
    return float(per_node.mean()) + m / tau


def itakura_saito(phi: GridSpectrum, psi: GridSpectrum) -> float:
    """Multivariate Itakura-Saito distance (tau -> 0 limit)."""
    _check_grids(phi, psi)
    lam_phi = _coercive_eigvalsh(phi.samples, "first argument")
    lam_psi = _coercive_eigvalsh(psi.samples, "second argument")
    cross = np.linalg.solve(psi.samples, phi.samples)
    trace_term = np.trace(cross, axis1=-2, axis2=-1).real
    per_node = np.log(lam_psi).sum(axis=1) - np.log(lam_phi).sum(axis=1) + trace_term
    return float(per_node.mean()) - phi.m


def kl_type(phi: GridSpectrum, psi_factor: SpectralFactor) -> float:
    """Kullback-Leibler divergence between the normalized innovation spectrum
    and the identity (tau -> 1 limit)."""
    lam = innovation_eigenvalues(phi, psi_factor)
    per_node = (lam * np.log(lam)).sum(axis=1) - lam.sum(axis=1)
    return float(per_node.mean()) + phi.m


def alpha_divergence(phi: GridSpectrum, psi: GridSpectrum, alpha: float) -> float:
    """Multivariate Alpha divergence of order ``alpha``."""
    alpha = _check_tau(alpha)
    _check_grids(phi, psi)
    pa = _matrix_power_samples(phi.samples, alpha, "first argument")
    qa = _matrix_power_samples(psi.samples, 1.0 - alpha, "second argument")
    cross = np.einsum("kij,kji->k", pa, qa).real
    tr_phi = np.trace(phi.samples, axis1=-2, axis2=-1).real
    tr_psi = np.trace(psi.samples, axis1=-2, axis2=-1).real
    per_node = cross / (alpha * (alpha - 1.0)) - tr_phi / (alpha - 1.0) + tr_psi / alpha
    return float(per_node.mean())


def beta_divergence(phi: GridSpectrum, psi: GridSpectrum, beta: float) -> float:
    """Multivariate Beta divergence of order ``beta``."""
    beta = _check_tau(beta)
    _check_grids(phi, psi)
    lam_phi = _coercive_eigvalsh(phi.samples, "first argument")
    qb = _matrix_power_samples(psi.samples, beta - 1.0, "second argument")
    cross = np.einsum("kij,kji->k", phi.samples, qb).real
    lam_psi = _coercive_eigvalsh(psi.samples, "second argument")
    per_node = (
        (lam_phi**beta).sum(axis=1) / (beta * (beta - 1.0))
        - cross / (beta - 1.0)
        + (lam_psi**beta).sum(axis=1) / beta
    )
    return float(per_node.mean())


def matrix_tau_divergence(p, q, tau: float) -> float:
    """Divergence of order ``tau`` between positive definite matrices; the
    constant-spectrum special case of :func:`tau_divergence`."""
    tau = _check_tau(tau)
    lam = _whitened_eigenvalues(p, q)
    n = lam.size
    return float(
        (lam**tau).sum() / (tau * (tau - 1.0)) - lam.sum() / (tau - 1.0) + n / tau
    )


def burg_divergence(p, q) -> float:
    """Burg matrix divergence (tau -> 0 limit of the matrix family)."""
    lam = _whitened_eigenvalues(p, q)
    return float(lam.sum() - np.log(lam).sum() - lam.size)


def von_neumann_divergence(p, q) -> float:
    """Umegaki-von Neumann relative entropy between L^{-1} P L^{-T} and the
    identity (tau -> 1 limit of the matrix family)."""
    lam = _whitened_eigenvalues(p, q)
    return float((lam * np.log(lam)).sum() - lam.sum() + lam.size)


def penalty_profile(e_bar: float, nu: int) -> float:
    """Pointwise innovation penalty  e - nu/(nu-1) * e^{(nu-1)/nu}.

    This is the per-frequency contribution of a scalar innovation level
    ``e_bar`` to the (rescaled) order-nu objective; its minimum sits at
    e_bar = 1 where the slope 1 - e_bar^{-1/nu} vanishes.
    """
    if e_bar <= 0.0:
        raise ValueError(f"innovation level must be positive, got {e_bar}")
    if nu < 2:
        raise ValueError(f"profile order must be an integer >= 2, got {nu}")
    return float(e_bar - nu / (nu - 1.0) * e_bar ** ((nu - 1.0) / nu))


def penalty_profile_slope(e_bar: float, nu: int) -> float:
    """d penalty_profile / d e_bar = 1 - e_bar^{-1/nu}."""
    if e_bar <= 0.0:
        raise ValueError(f"innovation level must be positive, got {e_bar}")
    return float(1.0 - e_bar ** (-1.0 / nu))


def _whitened_eigenvalues(p, q) -> np.ndarray:
    p = _as_hpd(p)
    q = _as_hpd(q)
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    l = q.factor
    half = scipy.linalg.solve_triangular(l, p.value, lower=True)
    m = scipy.linalg.solve_triangular(l, half.conj().T, lower=True).conj().T
    w = np.linalg.eigvalsh(hermitian_part(m))
    if w.min() <= 1e-12 * max(w.max(), 0.0):
        raise NotHPDError("first argument is not positive definite")
    return w


def _matrix_power_samples(samples: np.ndarray, t: float, what: str) -> np.ndarray:
    w = _coercive_eigvalsh(samples, what)
    _, v = np.linalg.eigh(hermitian_part(samples))
    return (v * (w**t)[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def _check_grids(phi: GridSpectrum, psi: GridSpectrum) -> None:
    if phi.grid.size != psi.grid.size or phi.m != psi.m:
        raise ValueError("spectra live on incompatible grids")

"""State-space models, spectral factors, and their evaluation on the circle.

Priors and truth filters are carried parametrically as stable, minimum-phase
state-space realizations; everything downstream only needs their transfer
function W and its inverse sampled on a frequency grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grids import FrequencyGrid, GridSpectrum
from .matfun import hermitian_part

__all__ = [
    "StateSpaceModel",
    "SpectralFactor",
    "eval_transfer",
    "factor_to_spectrum",
    "inverse_factor",
    "canonical_normalize",
    "save_model",
    "load_model",
]


@dataclass
class StateSpaceModel:
    """Discrete-time realization (A, B, C, D) of D + C (zI - A)^{-1} B."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("B/C dimensions do not match the state dimension")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ValueError("D dimensions do not match B and C")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def spectral_radius(self) -> float:
        if self.n == 0:
            return 0.0
        return float(np.abs(np.linalg.eigvals(self.A)).max())

    def is_stable(self) -> bool:
        return self.spectral_radius() < 1.0


@dataclass
class SpectralFactor:
    """Stable, minimum-phase square factor W with Psi = W W* on the circle.

    The canonical representative has W(inf) = D lower triangular with a
    strictly positive diagonal.
    """

    realization: StateSpaceModel

    def __post_init__(self):
        d = self.realization.D
        if d.shape[0] != d.shape[1]:
            raise ValueError("spectral factor needs a square feedthrough")

    @property
    def n(self) -> int:
        return self.realization.n

    @property
    def m(self) -> int:
        return self.realization.m

    def validate(self, require_canonical: bool = False) -> None:
        model = self.realization
        rho = model.spectral_radius()
        if rho >= 1.0:
            raise ValueError(f"factor unstable: spectral radius {rho:.6f}")
        smin = np.linalg.svd(model.D, compute_uv=False).min() if model.m else 0.0
        if smin <= 1e-12:
            raise ValueError("feedthrough D is singular")
        rho_zero = inverse_factor(self).spectral_radius()
        if rho_zero >= 1.0:
            raise ValueError(f"factor not minimum phase: zero radius {rho_zero:.6f}")
        if require_canonical:
            d = model.D
            if np.abs(np.triu(d, 1)).max(initial=0.0) > 1e-10 * max(np.abs(d).max(), 1.0):
                raise ValueError("feedthrough not lower triangular")
            if np.diag(d).min() <= 0.0:
                raise ValueError("feedthrough diagonal not strictly positive")


def eval_transfer(model: StateSpaceModel, grid: FrequencyGrid) -> np.ndarray:
    """Sample D + C (e^{j theta} I - A)^{-1} B at every grid node.

    Returns an array of shape (K, p, m).  Stability of ``model`` guarantees
    the resolvent exists on the circle.
    """
    if model.n == 0:
        return np.broadcast_to(model.D.astype(complex), (grid.size,) + model.D.shape).copy()
    z = grid.points
    eye = np.eye(model.n)
    try:
        resolvent_rhs = np.linalg.solve(
            z[:, None, None] * eye - model.A,
            np.broadcast_to(model.B, (grid.size,) + model.B.shape),
        )
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "resolvent singular on the unit circle; model is not stable"
        ) from exc
    return model.D + model.C @ resolvent_rhs


def factor_to_spectrum(w: SpectralFactor, grid: FrequencyGrid) -> GridSpectrum:
    """Psi(theta) = W(e^{j theta}) W(e^{j theta})*, flagged coercive."""
    samples = eval_transfer(w.realization, grid)
    psi = samples @ np.conj(np.swapaxes(samples, -1, -2))
    return GridSpectrum(grid, hermitian_part(psi), coercive=True)


def inverse_factor(w: SpectralFactor) -> StateSpaceModel:
    """Realization of W^{-1}: (A - B D^{-1} C,  B D^{-1},  -D^{-1} C,  D^{-1}).

    Its impulse response carries the whitening-filter coefficients; stability
    of the result is exactly the minimum-phase property of ``w``.
    """
    model = w.realization
    d = model.D
    if np.linalg.svd(d, compute_uv=False).min() <= 1e-14 * max(np.abs(d).max(), 1.0):
        raise ValueError("feedthrough D is singular; not a valid factor")
    dinv = np.linalg.inv(d)
    return StateSpaceModel(
        model.A - model.B @ dinv @ model.C,
        model.B @ dinv,
        -dinv @ model.C,
        dinv,
    )


def canonical_normalize(w: SpectralFactor) -> SpectralFactor:
    """Rotate W by a constant orthogonal matrix so W(inf) is lower triangular
    with positive diagonal.  The spectrum W W* is unchanged."""
    model = w.realization
    q, r = scipy.linalg.qr(model.D.T)
    signs = np.sign(np.diag(r))
    if np.any(signs == 0.0):
        raise ValueError("feedthrough D is singular; cannot normalize")
    # D = (R^T S)(S Q^T) with S = diag(signs); right-multiply W by (S Q^T)^T = Q S.
    rot = q * signs[None, :]
    return SpectralFactor(
        StateSpaceModel(model.A, model.B @ rot, model.C, model.D @ rot)
    )


def save_model(path, model: StateSpaceModel) -> None:
    payload = {
        "n": model.n,
        "m": model.m,
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "D": model.D.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_model(path) -> StateSpaceModel:
    with open(path) as fh:
        payload = json.load(fh)
    model = StateSpaceModel(payload["A"], payload["B"], payload["C"], payload["D"])
    if model.n != payload["n"] or model.m != payload["m"]:
        raise ValueError(f"model file {path} has inconsistent dimensions")
    return model

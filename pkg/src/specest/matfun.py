"""Hermitian matrix functions (fractional powers, log, exp) via eigendecomposition.

All routines symmetrize their input before decomposing, which keeps the
round-off from circle quadrature out of the eigenvalue domain checks, and
reject matrices whose smallest eigenvalue falls below a relative floor:
coercivity is a standing assumption everywhere these functions are used.
"""

from __future__ import annotations

import numpy as np

from .errors import NotHPDError

__all__ = ["hermitian_part", "hpd_eigh", "hpd_power", "hpd_log", "hpd_exp", "divided_differences"]

EIG_FLOOR_RTOL = 1e-12


def hermitian_part(a: np.ndarray) -> np.ndarray:
    """(A + A*)/2; also works on stacked (..., m, m) arrays."""
    a = np.asarray(a)
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def hpd_eigh(p: np.ndarray, floor_rtol: float = EIG_FLOOR_RTOL):
    """Eigendecomposition of a Hermitian positive definite (stack of) matrix.

    Returns (eigenvalues, eigenvectors); raises :class:`NotHPDError` when the
    smallest eigenvalue is at or below ``floor_rtol`` times the largest.
    """
    w, v = np.linalg.eigh(hermitian_part(p))
    wmin, wmax = w.min(), w.max()
    if wmin <= floor_rtol * max(wmax, 0.0) or wmax <= 0.0:
        raise NotHPDError(
            f"matrix not positive definite: min eigenvalue {wmin:.3e}, max {wmax:.3e}"
        )
    return w, v


def _rebuild(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = (v * w[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    return hermitian_part(out)


def hpd_power(p: np.ndarray, t: float) -> np.ndarray:
    """P**t for Hermitian positive definite P (t = 0 and 1 return I and P exactly)."""
    p = np.asarray(p)
    w, v = hpd_eigh(p)
    if t == 0:
        eye = np.eye(p.shape[-1])
        return np.broadcast_to(eye, p.shape).copy().astype(p.dtype)
    if t == 1:
        return p.copy()
    return _rebuild(w**t, v)


def hpd_log(p: np.ndarray) -> np.ndarray:
    """Principal matrix logarithm of a Hermitian positive definite matrix."""
    w, v = hpd_eigh(np.asarray(p))
    return _rebuild(np.log(w), v)


def hpd_exp(x: np.ndarray, hermitian_rtol: float = 1e-10) -> np.ndarray:
    """Matrix exponential of a Hermitian matrix (result is positive definite)."""
    x = np.asarray(x)
    scale = max(np.abs(x).max(), 1.0)
    dev = np.abs(x - np.conj(np.swapaxes(x, -1, -2))).max()
    if dev > hermitian_rtol * scale:
        raise NotHPDError(f"exp argument not Hermitian: deviation {dev:.3e}")
    w, v = np.linalg.eigh(hermitian_part(x))
    return _rebuild(np.exp(w), v)


def divided_differences(w: np.ndarray, fun, dfun) -> np.ndarray:
    """First divided differences (f(a)-f(b))/(a-b) of ``fun`` on eigenvalues ``w``.

    Nearly coincident pairs fall back to ``dfun`` at the midpoint.  This is the
    kernel of the Frechet derivative of a spectral matrix function.
    """
    w = np.asarray(w, dtype=float)
    a = w[..., :, None]
    b = w[..., None, :]
    diff = a - b
    close = np.abs(diff) <= 1e-10 * (1.0 + np.abs(a) + np.abs(b))
    safe = np.where(close, 1.0, diff)
    table = (fun(a) - fun(b)) / safe
    return np.where(close, dfun(0.5 * (a + b)), table)

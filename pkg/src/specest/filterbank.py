"""Rational filter banks G'(z) = (zI - A)^{-1} B and state-covariance machinery.

The bank turns a data record into generalized moments: the steady-state
covariance of its state encodes integrals of the input spectrum against the
bank's transfer function.  Feasible covariances are exactly the positive
definite matrices in the kernel of the linear operator

    V(Q) = P (Q - A Q A^T) P,      P = I - B (B^T B)^{-1} B^T.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grids import FrequencyGrid, GridSpectrum, integrate
from .matfun import hpd_power

__all__ = [
    "FilterBank",
    "CovarianceEstimate",
    "build_toeplitz_bank",
    "eval_bank",
    "simulate_state",
    "sample_covariance",
    "v_operator",
    "reachability_gramian",
    "gamma_operator",
    "normalize_bank",
    "save_bank",
    "load_bank",
    "save_covariance",
    "load_covariance",
]


@dataclass
class FilterBank:
    """Bank (A, B), optionally with a constant left output map (the
    normalization by the inverse square root of the target covariance)."""

    A: np.ndarray
    B: np.ndarray
    output_map: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != self.A.shape[0]:
            raise ValueError("B row dimension must match A")
        if self.output_map is not None:
            self.output_map = np.asarray(self.output_map, dtype=float)
            if self.output_map.shape != (self.n, self.n):
                raise ValueError("output map must be n x n")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def validate(self) -> None:
        rho = np.abs(np.linalg.eigvals(self.A)).max()
        if rho >= 1.0:
            raise ValueError(f"bank is unstable: spectral radius {rho:.6f}")
        if np.linalg.matrix_rank(self.B) != self.m:
            raise ValueError("B is not full column rank")
        ctrb = np.hstack([np.linalg.matrix_power(self.A, k) @ self.B for k in range(self.n)])
        if np.linalg.matrix_rank(ctrb) != self.n:
            raise ValueError("(A, B) is not a reachable pair")
        if self.n <= self.m:
            warnings.warn(f"bank has n={self.n} <= m={self.m}; moments are degenerate")

    def projector_b_perp(self) -> np.ndarray:
        b = self.B
        return np.eye(self.n) - b @ np.linalg.solve(b.T @ b, b.T)


@dataclass
class CovarianceEstimate:
    """Symmetric state covariance plus its feasibility residual ||V(sigma)||_F."""

    sigma: np.ndarray
    feasibility_residual: float | None = None

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.sigma + self.sigma.T)).min())


def build_toeplitz_bank(m: int, p: int) -> FilterBank:
    """Block-shift bank whose state covariance is block Toeplitz with the
    first ``p`` covariance lags of the input on its block diagonals."""
    if m < 1 or p < 2:
        raise ValueError("need m >= 1 channels and p >= 2 block rows")
    n = p * m
    a = np.zeros((n, n))
    a[: n - m, m:] = np.eye(n - m)
    b = np.zeros((n, m))
    b[n - m :, :] = np.eye(m)
    return FilterBank(a, b)


def eval_bank(bank: FilterBank, grid: FrequencyGrid) -> np.ndarray:
    """Samples of the (optionally normalized) bank on the grid, shape (K, n, m)."""
    z = grid.points
    eye = np.eye(bank.n)
    samples = np.linalg.solve(
        z[:, None, None] * eye - bank.A,
        np.broadcast_to(bank.B, (grid.size,) + bank.B.shape),
    )
    if bank.output_map is not None:
        samples = bank.output_map @ samples
    return samples


def simulate_state(bank: FilterBank, y: np.ndarray) -> np.ndarray:
    """States x_1 = 0, x_{k+1} = A x_k + B y_k driven by an (N, m) record."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.ndim != 2 or y.shape[1] != bank.m:
        raise ValueError(f"input record must be (N, {bank.m})")
    n_samples = y.shape[0]
    x = np.zeros((n_samples, bank.n))
    for k in range(n_samples - 1):
        x[k + 1] = bank.A @ x[k] + bank.B @ y[k]
    return x


def sample_covariance(x: np.ndarray, bank: FilterBank | None = None, burn_in: int = 0) -> CovarianceEstimate:
    """Normalized sample covariance (1/N) sum_k x_k x_k^T of the state record.

    ``burn_in`` drops leading samples before averaging; the residual field is
    filled when the bank is supplied.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] - burn_in < 1:
        raise ValueError("state record is empty after burn-in")
    x = x[burn_in:]
    sigma = x.T @ x / x.shape[0]
    residual = None
    if bank is not None:
        residual = float(np.linalg.norm(v_operator(bank, sigma)))
    return CovarianceEstimate(sigma, residual)


def v_operator(bank: FilterBank, q: np.ndarray) -> np.ndarray:
    """Feasibility operator V(Q) = P (Q - A Q A^T) P with P the projector
    onto the orthogonal complement of range(B)."""
    q = np.asarray(q, dtype=float)
    proj = bank.projector_b_perp()
    out = proj @ (q - bank.A @ q @ bank.A.T) @ proj
    return 0.5 * (out + out.T)


def reachability_gramian(bank: FilterBank) -> CovarianceEstimate:
    """Unique solution of Sigma = A Sigma A^T + B B^T; positive definite for
    reachable pairs and always in the kernel of V."""
    sigma = scipy.linalg.solve_discrete_lyapunov(bank.A, bank.B @ bank.B.T)
    sigma = 0.5 * (sigma + sigma.T)
    return CovarianceEstimate(sigma, float(np.linalg.norm(v_operator(bank, sigma))))


def gamma_operator(bank: FilterBank, phi: GridSpectrum, imag_tol: float = 1e-10) -> np.ndarray:
    """Moment map: integral of G(e^{j theta}) Phi(theta) G(e^{j theta})* over
    the grid, returned as a real symmetric matrix."""
    g = eval_bank(bank, phi.grid)
    integrand = g @ phi.samples @ np.conj(np.swapaxes(g, -1, -2))
    moment = integrate(integrand, phi.grid)
    scale = max(np.abs(moment).max(), 1.0)
    if np.abs(moment.imag).max() > imag_tol * scale:
        raise ValueError(
            "moment integral has a significant imaginary part; "
            "grid too coarse or spectrum lacks conjugate symmetry"
        )
    out = moment.real
    return 0.5 * (out + out.T)


def normalize_bank(bank: FilterBank, sigma_hat, method: str = "symmetric") -> FilterBank:
    """Left-normalize the bank by an inverse square root of ``sigma_hat``.

    ``method='symmetric'`` uses the symmetric positive root (the default
    convention); ``method='cholesky'`` uses the lower-triangular factor.
    Either choice yields a congruent constraint set.
    """
    sigma = sigma_hat.sigma if isinstance(sigma_hat, CovarianceEstimate) else np.asarray(sigma_hat)
    if method == "symmetric":
        root_inv = hpd_power(sigma, -0.5).real
    elif method == "cholesky":
        root_inv = np.linalg.inv(np.linalg.cholesky(0.5 * (sigma + sigma.T)))
    else:
        raise ValueError(f"unknown square-root method {method!r}")
    return FilterBank(bank.A, bank.B, output_map=root_inv)


def save_bank(path, bank: FilterBank) -> None:
    with open(path, "w") as fh:
        json.dump({"A": bank.A.tolist(), "B": bank.B.tolist()}, fh, indent=2)
        fh.write("\n")


def load_bank(path) -> FilterBank:
    with open(path) as fh:
        payload = json.load(fh)
    return FilterBank(payload["A"], payload["B"])


def save_covariance(path, sigma) -> None:
    sigma = sigma.sigma if isinstance(sigma, CovarianceEstimate) else np.asarray(sigma)
    with open(path, "w") as fh:
        json.dump({"sigma": sigma.tolist()}, fh, indent=2)
        fh.write("\n")


def load_covariance(path) -> CovarianceEstimate:
    with open(path) as fh:
        payload = json.load(fh)
    return CovarianceEstimate(np.asarray(payload["sigma"], dtype=float))

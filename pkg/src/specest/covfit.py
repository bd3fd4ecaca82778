"""Feasibility-restoring state-covariance fitting.

A raw sample covariance rarely lies in the kernel of the feasibility
operator V, so the moment-matching problem it defines is empty.  This module
replaces it with the closest positive definite matrix inside ker V, measured
by the matrix divergence of order 1 - 1/nu (Burg for nu = 1, von Neumann in
the large-nu limit).  The constraint is linear, so we parameterize ker V by
an orthonormal basis and run a damped Newton method on the coordinates; the
objective is strictly convex, which makes the feasible-start iteration
globally convergent and the minimizer unique.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConvergenceError
from .filterbank import CovarianceEstimate, FilterBank, reachability_gramian, v_operator
from .matfun import divided_differences

__all__ = ["KernelBasis", "CovFitReport", "kernel_basis", "fit_covariance"]

ARMIJO_SLOPE = 1e-4
MIN_STEP = 1e-14


def _sym_indices(n: int):
    diag = np.arange(n)
    rows, cols = np.triu_indices(n, 1)
    return diag, rows, cols


def sym_to_vec(mat: np.ndarray) -> np.ndarray:
    """Isometric coordinates of a symmetric matrix (off-diagonals scaled by sqrt 2)."""
    n = mat.shape[-1]
    diag, rows, cols = _sym_indices(n)
    return np.concatenate(
        [mat[..., diag, diag], math.sqrt(2.0) * mat[..., rows, cols]], axis=-1
    )


def vec_to_sym(vec: np.ndarray, n: int) -> np.ndarray:
    diag, rows, cols = _sym_indices(n)
    mat = np.zeros(vec.shape[:-1] + (n, n))
    mat[..., diag, diag] = vec[..., : n]
    off = vec[..., n:] / math.sqrt(2.0)
    mat[..., rows, cols] = off
    mat[..., cols, rows] = off
    return mat


@dataclass
class KernelBasis:
    """Orthonormal (trace inner product) basis of ker V within the symmetric
    matrices; always contains the reachability-Gramian direction."""

    matrices: np.ndarray  # (d, n, n)
    singular_values: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.matrices.shape[0]

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    def project_coords(self, mat: np.ndarray) -> np.ndarray:
        return np.einsum("dij,ij->d", self.matrices, mat)

    def matrix(self, coords: np.ndarray) -> np.ndarray:
        return np.einsum("d,dij->ij", coords, self.matrices)


def kernel_basis(bank: FilterBank, rtol: float = 1e-10) -> KernelBasis:
    """Null space of the vectorized feasibility operator V by SVD."""
    n = bank.n
    q = n * (n + 1) // 2
    vmat = np.empty((q, q))
    eye = np.eye(q)
    for j in range(q):
        vmat[:, j] = sym_to_vec(v_operator(bank, vec_to_sym(eye[j], n)))
    _, s, vt = np.linalg.svd(vmat)
    threshold = rtol * s[0]
    ambiguous = np.sum((s > threshold / 10.0) & (s < threshold * 10.0))
    if ambiguous:
        warnings.warn(
            f"{ambiguous} singular values within a decade of the rank tolerance; "
            "kernel dimension may be ambiguous"
        )
    d = q - np.count_nonzero(s > threshold)
    if d == 0:
        raise ValueError("feasibility operator has a trivial kernel; bank is degenerate")
    return KernelBasis(vec_to_sym(vt[q - d :], n), s)


@dataclass
class CovFitReport:
    """Outcome of a covariance fit."""

    estimate: CovarianceEstimate
    coords: np.ndarray
    iterations: int
    gradient_norm: float
    objective_history: list
    converged: bool


class _Objective:
    """Matrix divergence of order tau between sum_i c_i K_i and a fixed
    reference, expressed in whitened coordinates M(c) = L^{-1} Sigma(c) L^{-T}."""

    def __init__(self, basis: KernelBasis, sigma_ref: np.ndarray, nu):
        self.n = basis.n
        l = np.linalg.cholesky(sigma_ref)
        self.k_tilde = np.empty_like(basis.matrices)
        for i, k in enumerate(basis.matrices):
            half = scipy.linalg.solve_triangular(l, k, lower=True)
            self.k_tilde[i] = scipy.linalg.solve_triangular(l, half.T, lower=True).T
        if nu == 1:
            self.kind = "burg"
        elif nu is math.inf:
            self.kind = "von_neumann"
        else:
            if int(nu) != nu or nu < 1:
                raise ValueError(f"order must be a positive integer or inf, got {nu}")
            self.kind = "tau"
            self.tau = 1.0 - 1.0 / float(nu)

    def eigen(self, coords: np.ndarray):
        m = np.einsum("d,dij->ij", coords, self.k_tilde)
        w, v = np.linalg.eigh(0.5 * (m + m.T))
        return w, v

    def feasible(self, w: np.ndarray) -> bool:
        return w.min() > 1e-14 * max(w.max(), 1.0)

    def value(self, w: np.ndarray) -> float:
        n = self.n
        if self.kind == "burg":
            return float(w.sum() - np.log(w).sum() - n)
        if self.kind == "von_neumann":
            return float((w * np.log(w)).sum() - w.sum() + n)
        tau = self.tau
        return float(
            (w**tau).sum() / (tau * (tau - 1.0)) - w.sum() / (tau - 1.0) + n / tau
        )

    def _grad_eigvals(self, w: np.ndarray) -> np.ndarray:
        if self.kind == "burg":
            return 1.0 - 1.0 / w
        if self.kind == "von_neumann":
            return np.log(w)
        return (w ** (self.tau - 1.0) - 1.0) / (self.tau - 1.0)

    def _hess_kernel(self, w: np.ndarray) -> np.ndarray:
        if self.kind == "burg":
            return 1.0 / np.outer(w, w)
        if self.kind == "von_neumann":
            return divided_differences(w, np.log, lambda x: 1.0 / x)
        tau = self.tau
        return divided_differences(
            w,
            lambda x: (x ** (tau - 1.0) - 1.0) / (tau - 1.0),
            lambda x: x ** (tau - 2.0),
        )

    def grad_hess(self, w: np.ndarray, v: np.ndarray):
        rotated = np.einsum("ab,dbc,ce->dae", v.T, self.k_tilde, v)
        grad = np.einsum("daa,a->d", rotated, self._grad_eigvals(w))
        kernel = self._hess_kernel(w)
        hess = np.einsum("ab,dab,eab->de", kernel, rotated, rotated)
        return grad, 0.5 * (hess + hess.T)


def fit_covariance(
    sigma_c,
    bank: FilterBank,
    nu,
    *,
    basis: KernelBasis | None = None,
    start=None,
    grad_tol: float = 1e-9,
    max_iter: int = 200,
) -> CovFitReport:
    """Closest feasible positive definite covariance to ``sigma_c``.

    Minimizes the matrix divergence of order 1 - 1/nu over the positive
    definite slice of ker V, by damped Newton on kernel coordinates with
    positive-definiteness-preserving backtracking and Armijo decrease.
    ``start`` may be a coordinate vector or a symmetric matrix; by default
    the reachability Gramian rescaled to the trace of ``sigma_c``.
    """
    sigma_ref = sigma_c.sigma if isinstance(sigma_c, CovarianceEstimate) else np.asarray(sigma_c, dtype=float)
    sigma_ref = 0.5 * (sigma_ref + sigma_ref.T)
    min_eig = np.linalg.eigvalsh(sigma_ref).min()
    if min_eig <= 0.0:
        eps = 1e-10 * np.trace(sigma_ref) / sigma_ref.shape[0] - min(min_eig, 0.0)
        warnings.warn(
            f"sample covariance not positive definite (min eigenvalue {min_eig:.3e}); "
            f"regularizing by {eps:.3e} I"
        )
        sigma_ref = sigma_ref + eps * np.eye(sigma_ref.shape[0])

    if basis is None:
        basis = kernel_basis(bank)
    objective = _Objective(basis, sigma_ref, nu)

    if start is None:
        gram = reachability_gramian(bank).sigma
        coords = basis.project_coords(gram)
        coords = coords * (np.trace(sigma_ref) / np.trace(basis.matrix(coords)))
    else:
        start = np.asarray(start, dtype=float)
        coords = basis.project_coords(start) if start.ndim == 2 else start.copy()

    w, v = objective.eigen(coords)
    if not objective.feasible(w):
        raise ValueError("starting point is not positive definite")
    value = objective.value(w)
    history = [value]
    iterations = 0

    while True:
        grad, hess = objective.grad_hess(w, v)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= grad_tol * (1.0 + abs(value)):
            return _final_report(basis, bank, coords, iterations, grad_norm, history, True)
        if iterations >= max_iter:
            raise ConvergenceError(
                f"covariance fit did not converge in {max_iter} iterations",
                report=_final_report(basis, bank, coords, iterations, grad_norm, history, False),
            )
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(hess + 1e-12 * np.trace(hess) * np.eye(len(grad)), -grad)
        slope = float(grad @ step)
        # Once the predicted decrease drops below the resolution of the
        # objective (eigendecomposition round-off), Armijo tests compare
        # noise; the iterate is in the quadratic basin, so take the plain
        # feasibility-backtracked Newton step instead.
        saturated = abs(slope) * ARMIJO_SLOPE <= 1e-14 * (1.0 + abs(value))
        t = 1.0
        while True:
            candidate = coords + t * step
            w_new, v_new = objective.eigen(candidate)
            if objective.feasible(w_new):
                value_new = objective.value(w_new)
                if saturated or value_new <= value + ARMIJO_SLOPE * t * slope:
                    break
            t *= 0.5
            if t < MIN_STEP:
                raise ConvergenceError(
                    "covariance fit line search stalled",
                    report=_final_report(basis, bank, coords, iterations, grad_norm, history, False),
                )
        coords, w, v, value = candidate, w_new, v_new, value_new
        history.append(value)
        iterations += 1


def _final_report(basis, bank, coords, iterations, grad_norm, history, converged) -> CovFitReport:
    sigma = basis.matrix(coords)
    residual = float(np.linalg.norm(v_operator(bank, sigma)))
    return CovFitReport(
        estimate=CovarianceEstimate(sigma, residual),
        coords=coords,
        iterations=iterations,
        gradient_norm=grad_norm,
        objective_history=history,
        converged=converged,
    )

"""Dual Newton solver for divergence-minimizing spectrum approximation.

Given a prior factor W, a normalized bank G with target moment I, and an
integer order nu, the primal problem minimizes the order-(1 - 1/nu)
divergence to the prior subject to int G Phi G* = I.  Its optimizer has the
closed form

    Phi_nu(L) = W (I + (1/nu) W* G* L G W)^{-nu} W*

and the multiplier L is found by maximizing a strictly concave dual over
the admissible set where the inner matrix stays positive on the circle.
The gradient of the dual is exactly the constraint residual, so Newton
iterations with admissibility-preserving backtracking drive the moment
mismatch to zero at a locally quadratic rate.

nu = 1 reuses the same scaffold with the log-det dual; nu = inf solves the
Kullback-Leibler variant whose optimal form is a matrix exponential.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, ConvergenceError, FeasibilityError
from .filterbank import CovarianceEstimate, FilterBank, eval_bank, normalize_bank, v_operator
from .grids import FrequencyGrid, GridSpectrum
from .matfun import divided_differences, hermitian_part
from .statespace import SpectralFactor, eval_transfer, inverse_factor

__all__ = [
    "QngBasis",
    "DualSolveReport",
    "qng_basis",
    "primal_form",
    "primal_form_inf",
    "dual_value",
    "dual_gradient",
    "hessian_apply",
    "newton_step",
    "solve_dual",
    "solve_nu1",
    "solve_inf",
    "estimate_spectrum",
    "innovation_spectrum",
]

ADMISSIBILITY_FLOOR = 1e-10
ARMIJO_SLOPE = 1e-4
MIN_STEP = 1e-14
FEASIBILITY_TOL = 1e-8


@dataclass
class QngBasis:
    """Splitting of the symmetric matrices into the subspace seen by the
    constraint map (the multiplier space) and its annihilated complement."""

    basis: np.ndarray  # (d, n, n)
    complement: np.ndarray  # (q - d, n, n)
    singular_values: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def n(self) -> int:
        return self.basis.shape[1]

    def project_coords(self, mat: np.ndarray) -> np.ndarray:
        return np.einsum("dij,ij->d", self.basis, mat)

    def matrix(self, coords: np.ndarray) -> np.ndarray:
        return np.einsum("d,dij->ij", coords, self.basis)

    def decompose(self, mat: np.ndarray):
        """Split a symmetric matrix into its multiplier part and the part
        annihilated by the constraint map."""
        part = self.matrix(self.project_coords(mat))
        return part, mat - part


def qng_basis(bank: FilterBank, grid: FrequencyGrid, rtol: float = 1e-10) -> QngBasis:
    """Orthonormal basis of the multiplier subspace by SVD of the sampled map
    Lambda -> G* Lambda G over the grid."""
    from .covfit import vec_to_sym

    g = eval_bank(bank, grid)
    n = bank.n
    q = n * (n + 1) // 2
    eye = np.eye(q)
    directions = vec_to_sym(eye, n)  # (q, n, n)
    mapped = np.einsum("kna,qnp,kpb->qkab", np.conj(g), directions, g)
    flat = mapped.reshape(q, -1)
    stacked = np.concatenate([flat.real, flat.imag], axis=1)  # (q, 2 K m^2)
    # Row j is the sampled image of direction j; directions combining to a
    # vanishing image span the annihilated complement, so the multiplier
    # space comes out of the left singular vectors with nonzero weight.
    u, s, _ = np.linalg.svd(stacked, full_matrices=False)
    threshold = rtol * s[0]
    ambiguous = np.sum((s > threshold / 10.0) & (s < threshold * 10.0))
    if ambiguous:
        warnings.warn(
            f"{ambiguous} singular values within a decade of the rank tolerance; "
            "multiplier dimension may be ambiguous"
        )
    rank = int(np.count_nonzero(s > threshold))
    if rank == 0:
        raise ValueError("constraint map vanishes identically; degenerate bank")
    rows = u.T
    return QngBasis(vec_to_sym(rows[:rank], n), vec_to_sym(rows[rank:], n), s)


@dataclass
class DualSolveReport:
    """Outcome of a dual solve."""

    lambda_opt: np.ndarray
    lambda_coords: np.ndarray
    phi: GridSpectrum
    iterations: int
    constraint_residual: float
    dual_values: list
    residual_history: list
    converged: bool
    nu: object
    degree_bound: int | None


class _DualCore:
    """Cached per-grid samples and the value/gradient/Hessian calculus of the
    dual functional for one (bank, prior, nu) triple."""

    def __init__(self, bank: FilterBank, w_psi: SpectralFactor, nu, grid: FrequencyGrid,
                 basis: QngBasis | None = None):
        if nu is not math.inf:
            if int(nu) != nu or nu < 1:
                raise ValueError(f"order must be a positive integer or inf, got {nu}")
            nu = int(nu)
        self.nu = nu
        self.grid = grid
        self.w_samples = eval_transfer(w_psi.realization, grid)  # (K, m, m)
        g = eval_bank(bank, grid)  # (K, n, m)
        self.y = g @ self.w_samples  # (K, n, m): G W
        self.m = self.w_samples.shape[1]
        self.n = g.shape[1]
        self.w_n_states = w_psi.n
        self.basis = qng_basis(bank, grid) if basis is None else basis
        self.eye = np.eye(self.n)

    # -- spectral state of the inner matrix ------------------------------
    def inner_eigs(self, lam: np.ndarray):
        """Eigen-decomposition of X = I + (1/nu) Y* Lambda Y per node
        (of M = Y* Lambda Y itself for nu = inf)."""
        inner = hermitian_part(np.conj(np.swapaxes(self.y, -1, -2)) @ lam @ self.y)
        if self.nu is math.inf:
            return np.linalg.eigh(inner)
        x = np.broadcast_to(np.eye(self.m), inner.shape) + inner / self.nu
        return np.linalg.eigh(hermitian_part(x))

    def admissibility_margin(self, d: np.ndarray) -> float:
        if self.nu is math.inf:
            return np.inf
        return float(d.min())

    def check_admissible(self, d: np.ndarray) -> None:
        if self.nu is math.inf:
            return
        node = int(np.unravel_index(np.argmin(d), d.shape)[0])
        if d.min() <= ADMISSIBILITY_FLOOR:
            raise AdmissibilityError(
                f"multiplier leaves the admissible set at node {node}: "
                f"inner eigenvalue {d.min():.3e}",
                node=node,
                eigenvalue=float(d.min()),
            )

    # -- dual calculus ----------------------------------------------------
    def value(self, lam: np.ndarray, d: np.ndarray) -> float:
        if self.nu is math.inf:
            with np.errstate(over="ignore"):
                total = -np.exp(-d).sum(axis=1).mean()
        elif self.nu == 1:
            total = np.log(d).sum(axis=1).mean()
        else:
            nu = self.nu
            total = nu / (1.0 - nu) * (d ** (1 - nu)).sum(axis=1).mean()
        return float(total - np.trace(lam))

    def _primal_eigvals(self, d: np.ndarray) -> np.ndarray:
        if self.nu is math.inf:
            return np.exp(-d)
        return d ** (-float(self.nu))

    def gradient_matrix(self, d: np.ndarray, u: np.ndarray) -> np.ndarray:
        z = self.y @ u
        moment = (z * self._primal_eigvals(d)[:, None, :]) @ np.conj(np.swapaxes(z, -1, -2))
        out = moment.mean(axis=0) - self.eye
        return 0.5 * (out.real + out.real.T)

    def phi_samples(self, d: np.ndarray, u: np.ndarray) -> np.ndarray:
        inner = (u * self._primal_eigvals(d)[:, None, :]) @ np.conj(np.swapaxes(u, -1, -2))
        phi = self.w_samples @ inner @ np.conj(np.swapaxes(self.w_samples, -1, -2))
        return hermitian_part(phi)

    def _hess_kernel(self, d: np.ndarray) -> np.ndarray:
        """Divided-difference kernel of the derivative of the gradient map.

        Equals the per-node sum over l of Q^l (.) Q^{nu+1-l} weights in the
        eigenbasis, resummed in closed form.
        """
        if self.nu is math.inf:
            return divided_differences(d, lambda x: np.exp(-x), lambda x: -np.exp(-x))
        nu = float(self.nu)
        return (
            divided_differences(d, lambda x: x**-nu, lambda x: -nu * x ** (-nu - 1.0))
            / nu
        )

    def rotated_directions(self, u: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """S_i = (Y U)* B_i (Y U) per node for a stack of directions."""
        z = self.y @ u
        return np.einsum("kna,dnp,kpb->dkab", np.conj(z), directions, z)

    def hessian_matrix(self, d: np.ndarray, u: np.ndarray) -> np.ndarray:
        kernel = self._hess_kernel(d)
        rotated = self.rotated_directions(u, self.basis.basis)
        h = np.einsum("kab,dkab,ekab->de", kernel, np.conj(rotated), rotated).real
        h /= self.grid.size
        return 0.5 * (h + h.T)

    def hessian_apply_coords(self, d: np.ndarray, u: np.ndarray, delta: np.ndarray) -> np.ndarray:
        kernel = self._hess_kernel(d)
        rotated = self.rotated_directions(u, delta[None])[0]
        basis_rot = self.rotated_directions(u, self.basis.basis)
        out = np.einsum("kab,kab,ekab->e", kernel, np.conj(rotated), basis_rot).real
        return out / self.grid.size


def _core(lam, w_psi, bank, nu, grid, basis):
    core = _DualCore(bank, w_psi, nu, grid, basis)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (core.n, core.n):
        raise ValueError(f"multiplier must be {core.n} x {core.n}")
    return core, 0.5 * (lam + lam.T)


def primal_form(lam, w_psi: SpectralFactor, bank: FilterBank, nu: int, grid: FrequencyGrid,
                basis: QngBasis | None = None) -> GridSpectrum:
    """Optimal spectrum W (I + (1/nu) W* G* Lambda G W)^{-nu} W* for an
    admissible multiplier."""
    core, lam = _core(lam, w_psi, bank, nu, grid, basis)
    d, u = core.inner_eigs(lam)
    core.check_admissible(d)
    return GridSpectrum(grid, core.phi_samples(d, u), coercive=True)


def primal_form_inf(lam, w_psi: SpectralFactor, bank: FilterBank, grid: FrequencyGrid,
                    basis: QngBasis | None = None) -> GridSpectrum:
    """Large-order limit W exp(-W* G* Lambda G W) W*; defined for every
    symmetric multiplier."""
    core, lam = _core(lam, w_psi, bank, math.inf, grid, basis)
    d, u = core.inner_eigs(lam)
    return GridSpectrum(grid, core.phi_samples(d, u), coercive=True)


def dual_value(lam, w_psi, bank, nu, grid, basis=None) -> float:
    core, lam = _core(lam, w_psi, bank, nu, grid, basis)
    d, _ = core.inner_eigs(lam)
    core.check_admissible(d)
    return core.value(lam, d)


def dual_gradient(lam, w_psi, bank, nu, grid, basis=None) -> np.ndarray:
    """Moment residual int G Phi_nu(Lambda) G* - I in multiplier coordinates."""
    core, lam = _core(lam, w_psi, bank, nu, grid, basis)
    d, u = core.inner_eigs(lam)
    core.check_admissible(d)
    return core.basis.project_coords(core.gradient_matrix(d, u))


def hessian_apply(lam, delta, w_psi, bank, nu, grid, basis=None) -> np.ndarray:
    """Second variation of the dual applied to a symmetric direction,
    returned in multiplier coordinates."""
    core, lam = _core(lam, w_psi, bank, nu, grid, basis)
    delta = np.asarray(delta, dtype=float)
    d, u = core.inner_eigs(lam)
    core.check_admissible(d)
    return core.hessian_apply_coords(d, u, 0.5 * (delta + delta.T))


def newton_step(lam, w_psi, bank, nu, grid, basis=None) -> np.ndarray:
    """Coordinates of the Newton direction solving H step = -gradient."""
    core, lam = _core(lam, w_psi, bank, nu, grid, basis)
    d, u = core.inner_eigs(lam)
    core.check_admissible(d)
    grad = core.basis.project_coords(core.gradient_matrix(d, u))
    hess = core.hessian_matrix(d, u)
    step = np.linalg.solve(hess, -grad)
    residual = np.linalg.norm(hess @ step + grad)
    if residual > 1e-9 * max(np.linalg.norm(grad), 1e-300):
        warnings.warn(f"ill-conditioned Newton system: relative residual {residual:.3e}")
    return step


def _check_feasible(sigma_hat, bank: FilterBank) -> np.ndarray:
    sigma = sigma_hat.sigma if isinstance(sigma_hat, CovarianceEstimate) else np.asarray(sigma_hat, dtype=float)
    sigma = 0.5 * (sigma + sigma.T)
    if np.linalg.eigvalsh(sigma).min() <= 0.0:
        raise FeasibilityError("target covariance is not positive definite")
    residual = np.linalg.norm(v_operator(bank, sigma))
    if residual > FEASIBILITY_TOL * (1.0 + np.linalg.norm(sigma)):
        raise FeasibilityError(
            f"target covariance violates feasibility: ||V(sigma)|| = {residual:.3e}; "
            "fit it with the covariance fitter first"
        )
    return sigma


def _solve(core: _DualCore, tol: float, max_iter: int) -> DualSolveReport:
    lam = np.zeros((core.n, core.n))
    d, u = core.inner_eigs(lam)
    value = core.value(lam, d)
    dual_values = []
    residual_history = []
    iterations = 0

    while True:
        grad_mat = core.gradient_matrix(d, u)
        residual = float(np.linalg.norm(grad_mat))
        dual_values.append(value)
        residual_history.append(residual)
        if residual <= tol:
            return _report(core, lam, d, u, iterations, residual, dual_values, residual_history, True)
        if iterations >= max_iter:
            raise ConvergenceError(
                f"dual solve did not converge in {max_iter} iterations",
                report=_report(core, lam, d, u, iterations, residual, dual_values, residual_history, False),
            )
        grad = core.basis.project_coords(grad_mat)
        hess = core.hessian_matrix(d, u)
        step_coords = np.linalg.solve(hess, -grad)
        delta = core.basis.matrix(step_coords)
        slope = float(grad @ step_coords)
        # Near the optimum the predicted ascent falls below the round-off of
        # the dual value; switch to the plain admissibility-backtracked
        # Newton step, which contracts quadratically in that basin.
        saturated = abs(slope) * ARMIJO_SLOPE <= 1e-14 * (1.0 + abs(value))
        t = 1.0
        while True:
            candidate = lam + t * delta
            d_new, u_new = core.inner_eigs(candidate)
            if core.admissibility_margin(d_new) > ADMISSIBILITY_FLOOR:
                value_new = core.value(candidate, d_new)
                if saturated or value_new >= value + ARMIJO_SLOPE * t * slope:
                    break
            t *= 0.5
            if t < MIN_STEP:
                raise ConvergenceError(
                    "dual line search stalled",
                    report=_report(core, lam, d, u, iterations, residual, dual_values, residual_history, False),
                )
        lam, d, u, value = candidate, d_new, u_new, value_new
        iterations += 1


def _report(core, lam, d, u, iterations, residual, dual_values, residual_history, converged):
    phi = GridSpectrum(core.grid, core.phi_samples(d, u), coercive=True)
    if core.nu is math.inf:
        bound = None
    else:
        bound = int(core.nu) * (2 * core.w_n_states + 2 * core.n)
    return DualSolveReport(
        lambda_opt=lam,
        lambda_coords=core.basis.project_coords(lam),
        phi=phi,
        iterations=iterations,
        constraint_residual=residual,
        dual_values=dual_values,
        residual_history=residual_history,
        converged=converged,
        nu=core.nu,
        degree_bound=bound,
    )


def solve_dual(sigma_hat, bank: FilterBank, w_psi: SpectralFactor, nu: int,
               grid: FrequencyGrid, tol: float = 1e-6, max_iter: int = 200,
               sqrt_method: str = "symmetric") -> DualSolveReport:
    """Newton solve of the order-nu dual (nu >= 2) from the always-admissible
    zero multiplier; returns the moment-matched spectrum."""
    if nu is math.inf or int(nu) != nu or nu < 2:
        raise ValueError(f"this solver needs an integer order >= 2, got {nu}")
    return _run_solver(sigma_hat, bank, w_psi, int(nu), grid, tol, max_iter, sqrt_method)


def solve_nu1(sigma_hat, bank: FilterBank, w_psi: SpectralFactor,
              grid: FrequencyGrid, tol: float = 1e-6, max_iter: int = 200,
              sqrt_method: str = "symmetric") -> DualSolveReport:
    """Order-1 (Itakura-Saito) variant: same scaffold with the log-det dual."""
    return _run_solver(sigma_hat, bank, w_psi, 1, grid, tol, max_iter, sqrt_method)


def solve_inf(sigma_hat, bank: FilterBank, w_psi: SpectralFactor,
              grid: FrequencyGrid, tol: float = 1e-6, max_iter: int = 200,
              sqrt_method: str = "symmetric") -> DualSolveReport:
    """Kullback-Leibler variant: optimal form is a matrix exponential and
    every symmetric multiplier is admissible."""
    return _run_solver(sigma_hat, bank, w_psi, math.inf, grid, tol, max_iter, sqrt_method)


def estimate_spectrum(sigma_hat, bank, w_psi, nu, grid, tol: float = 1e-6,
                      max_iter: int = 200) -> DualSolveReport:
    """Dispatch to the order-appropriate solver (1, >= 2, or inf)."""
    if nu is math.inf:
        return solve_inf(sigma_hat, bank, w_psi, grid, tol, max_iter)
    if nu == 1:
        return solve_nu1(sigma_hat, bank, w_psi, grid, tol, max_iter)
    return solve_dual(sigma_hat, bank, w_psi, nu, grid, tol, max_iter)


def _run_solver(sigma_hat, bank, w_psi, nu, grid, tol, max_iter,
                sqrt_method: str = "symmetric") -> DualSolveReport:
    sigma = _check_feasible(sigma_hat, bank)
    normalized = normalize_bank(bank, sigma, method=sqrt_method)
    core = _DualCore(normalized, w_psi, nu, grid)
    return _solve(core, tol, max_iter)


def innovation_spectrum(phi: GridSpectrum, w_psi: SpectralFactor,
                        grid: FrequencyGrid | None = None) -> GridSpectrum:
    """Normalized innovation spectrum W^{-1} Phi W^{-*}; the identity exactly
    when the prior matches the data spectrum."""
    grid = phi.grid if grid is None else grid
    winv = eval_transfer(inverse_factor(w_psi), grid)
    e = winv @ phi.samples @ np.conj(np.swapaxes(winv, -1, -2))
    return GridSpectrum(grid, hermitian_part(e), coercive=phi.coercive)

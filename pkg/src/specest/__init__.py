"""Multivariate spectral estimation toolkit.

Prediction-based divergence families between matrix spectral densities and
the moment-matching estimation pipeline built on them: filter-bank state
covariances, feasibility-restoring covariance fitting, and a dual Newton
solver producing bounded-complexity spectral estimates.
"""

from .covfit import CovFitReport, KernelBasis, fit_covariance, kernel_basis
from .divergences import (
    HPDMatrix,
    alpha_divergence,
    beta_divergence,
    burg_divergence,
    itakura_saito,
    kl_type,
    matrix_tau_divergence,
    penalty_profile,
    penalty_profile_slope,
    tau_divergence,
    von_neumann_divergence,
)
from .errors import (
    AdmissibilityError,
    ConvergenceError,
    FeasibilityError,
    NotHPDError,
    SpecestError,
)
from .estimator import (
    DualSolveReport,
    QngBasis,
    dual_gradient,
    dual_value,
    estimate_spectrum,
    hessian_apply,
    innovation_spectrum,
    newton_step,
    primal_form,
    primal_form_inf,
    qng_basis,
    solve_dual,
    solve_inf,
    solve_nu1,
)
from .filterbank import (
    CovarianceEstimate,
    FilterBank,
    build_toeplitz_bank,
    eval_bank,
    gamma_operator,
    normalize_bank,
    reachability_gramian,
    sample_covariance,
    simulate_state,
    v_operator,
)
from .grids import FrequencyGrid, GridSpectrum, constant_spectrum, integrate
from .matfun import hpd_exp, hpd_log, hpd_power
from .pipeline import (
    ExperimentConfig,
    RunResult,
    fit_prior,
    random_spectral_factor,
    relative_error,
    run_experiment,
    simulate_process,
)
from .statespace import (
    SpectralFactor,
    StateSpaceModel,
    canonical_normalize,
    eval_transfer,
    factor_to_spectrum,
    inverse_factor,
)

__version__ = "0.1.0"

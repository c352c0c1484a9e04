"""Spectral implicit-Euler solver for heat equations with multiplicative noise.

Each eigenmode's driving Brownian motion is discretized on its own uniform
grid, with step counts allocated to balance variance decay against budget;
the scheme advances on the merged grid.  The package also ships the budget
allocator, a coupled fine-reference error estimator, and a convergence
harness that checks the achieved rates against their predicted exponents.
"""

from .allocation import (
    AllocationPlan,
    BudgetTooSmallError,
    RateExponents,
    custom_plan,
    error_objective,
    minimize_objective_exhaustive,
    plan_nonuniform,
    plan_uniform,
    predicted_error,
    rate_exponents,
)
from .experiment import (
    ConvergenceRecord,
    ErrorEstimate,
    convergence_study,
    estimate_error,
    fit_slope,
    moment_profile,
)
from .nemytskij import Nonlinearity, SpectralSynthesizer, pairing_by_quadrature
from .noise import BrownianIncrements, refine, sample_increments
from .reference import ReferenceConfig, exact_additive_stats, ou_integrated_second_moment
from .scheme import GalerkinState, PathEngine, SchemeRun, run_scheme
from .spectral import (
    CapacityError,
    CovarianceProfile,
    InitialValue,
    MultiIndex,
    enumerate_modes,
    eval_eigenfunction,
    eval_lambda,
    make_mode,
)
from .timegrid import GammaLedger, MergedTimeGrid, build_grid, gamma_at, gamma_ratio, uses_increment

__version__ = "0.1.0"

__all__ = [
    "AllocationPlan",
    "BrownianIncrements",
    "BudgetTooSmallError",
    "CapacityError",
    "ConvergenceRecord",
    "CovarianceProfile",
    "ErrorEstimate",
    "GalerkinState",
    "GammaLedger",
    "InitialValue",
    "MergedTimeGrid",
    "MultiIndex",
    "Nonlinearity",
    "PathEngine",
    "RateExponents",
    "ReferenceConfig",
    "SchemeRun",
    "SpectralSynthesizer",
    "build_grid",
    "convergence_study",
    "custom_plan",
    "enumerate_modes",
    "error_objective",
    "estimate_error",
    "eval_eigenfunction",
    "eval_lambda",
    "exact_additive_stats",
    "fit_slope",
    "gamma_at",
    "gamma_ratio",
    "make_mode",
    "minimize_objective_exhaustive",
    "moment_profile",
    "ou_integrated_second_moment",
    "pairing_by_quadrature",
    "plan_nonuniform",
    "plan_uniform",
    "predicted_error",
    "rate_exponents",
    "refine",
    "run_scheme",
    "sample_increments",
    "uses_increment",
]

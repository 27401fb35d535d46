"""Numerics for degenerate Kolmogorov operators with rough-in-time,
Hoelder-in-space coefficients: block-structure analysis, Gaussian kernels,
the drift-frozen parametrix, the Volterra correction series for the
fundamental solution, a terminal-value solver, and a verification harness
with a Monte Carlo oracle."""

from .cauchy import CauchyProblem, solve, terminal_continuity_check
from .coeffs import (CoefficientField, constant_field, estimate_holder_modulus,
                     field_from_exprs, validate_ellipticity)
from .errors import (ConfigError, CovarianceError, DimensionBudgetError,
                     ExprError, GrowthError, KolmoError, NumericalError,
                     QuadratureError, SeriesError, SmallTimeError)
from .expr import EvalError, evaluate, parse_expr, to_src
from .kernel import (CovMatrix, FrozenKernel, covariance_const,
                     covariance_frozen, covariance_reduced, expm,
                     gauss_density, prototype_density)
from .levi import (EvalResult, LeviSession, LeviSolution, QuadratureConfig,
                   SeriesResult, batch_quadrature, correction_integral,
                   correction_series, fundamental_solution, next_series_term)
from .model import ModelSpec, load_model, make_model, model_from_config
from .montecarlo import McResult, mc_oracle, simulate
from .parametrix import (KernelCache, ParametrixEval, frozen_apply, mismatch,
                         mismatch_values, parametrix_eval, parametrix_kernel)
from .structure import (BlockStructure, anisotropic_norm, block_decompose,
                        dilation, intrinsic_order, kalman_rank,
                        norm_homogeneity_check, reduced_drift)
from .verify import (DensityEvaluator, HolderEstimate, VerificationReport,
                     check_c2_blowup, check_chapman_kolmogorov,
                     check_expm_block_orders, check_gaussian_bounds,
                     check_mass, check_reduced_homogeneity, density_mass,
                     holder_seminorm, residual_along_flow)

__version__ = "0.1.0"

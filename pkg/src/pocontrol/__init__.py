"""Partially observed linear-quadratic control with non-Gaussian filters.

Closed-form solution of the LQ problem, common-noise particle filters,
Bellman-equation residuals on measure space, Poisson-randomized controls
and nested Monte Carlo verification.
"""

from .errors import ConfigError, GammaSingular, NonFinite, ValidationError
from .model import GeneralModel, LqModel, ValidationReport, lq_as_general, validate_lq
from .measures import EmpiricalMeasure, mean, quad_var, v1, v2, wasserstein2
from .lqsolve import (FeedbackCoefficients, LqSolution, eval_at, gain_coefficients,
                      optimal_action, optimal_cost, solve_backward, value)

__all__ = [
    "ConfigError", "GammaSingular", "NonFinite", "ValidationError",
    "GeneralModel", "LqModel", "ValidationReport", "lq_as_general", "validate_lq",
    "EmpiricalMeasure", "mean", "quad_var", "v1", "v2", "wasserstein2",
    "FeedbackCoefficients", "LqSolution", "eval_at", "gain_coefficients",
    "optimal_action", "optimal_cost", "solve_backward", "value",
]

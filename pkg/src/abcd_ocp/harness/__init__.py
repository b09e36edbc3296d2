"""Configuration, studies and command line for the solver."""

from .config import ConfigError, ProblemTemplate, StudyConfig, parse_config, standard_config
from .expressions import ExpressionError, parse_expression
from .studies import (
    NonConvergenceError,
    StudyResult,
    discretization_error_study,
    mesh_independence_study,
    oracle_check,
    rate_study,
    run_solve,
    tau_study,
)

__all__ = [
    "ConfigError", "ExpressionError", "NonConvergenceError", "ProblemTemplate", "StudyConfig",
    "StudyResult", "discretization_error_study", "mesh_independence_study", "oracle_check",
    "parse_config", "parse_expression", "rate_study", "run_solve", "standard_config", "tau_study",
]

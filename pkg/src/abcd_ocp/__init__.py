"""Accelerated block coordinate descent for sparse elliptic optimal control."""

from .grid_fem import FemOperators, TriMesh, assemble_operators, build_unit_square_mesh
from .prox_kit import BoxBounds
from .abcd_solver import (
    DualIterate,
    ProblemSpec,
    SolveReport,
    SolverConfig,
    compute_tau_h,
    dual_objective,
    kkt_residual,
    run,
)
from .primal_bridge import PrimalPair, duality_gap, primal_objective, recover_control, solve_state

__all__ = [
    "BoxBounds", "DualIterate", "FemOperators", "PrimalPair", "ProblemSpec", "SolveReport",
    "SolverConfig", "TriMesh", "assemble_operators", "build_unit_square_mesh", "compute_tau_h",
    "dual_objective", "duality_gap", "kkt_residual", "primal_objective", "recover_control",
    "run", "solve_state",
]

__version__ = "0.1.0"

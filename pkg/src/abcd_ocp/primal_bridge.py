"""Primal control and state recovered from a dual iterate, and the duality gap."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .abcd_solver import FEASIBILITY_TOL, ProblemSpec, _triple, control_of, dual_objective
from .prox_kit import project_box
from .sparse_core import LinearSolveError, cg_solve

STATE_TOL = 1e-11


@dataclass
class PrimalPair:
    u: np.ndarray
    u_hat: np.ndarray
    y: np.ndarray


def solve_state(spec: ProblemSpec, u: np.ndarray) -> np.ndarray:
    """Discrete state equation ``K y = M (u + yr)`` by Jacobi-preconditioned CG."""
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.n_dof,):
        raise ValueError(f"control must have length {spec.n_dof}, got shape {u.shape}")
    K = spec.ops.K
    y, stats = cg_solve(K.__matmul__, spec.ops.M @ (u + spec.yr), tol=STATE_TOL,
                        precond=1.0 / K.diagonal())
    if not stats.converged:
        raise LinearSolveError(
            f"state solve stalled at relative residual {stats.relative_residual:.3e}")
    return y


def recover_control(spec: ProblemSpec, z) -> PrimalPair:
    """``u = (p - lambda - mu)/alpha``, its box projection and the state of the projection."""
    u = control_of(spec, z)
    u_hat = project_box(u, spec.bounds)
    return PrimalPair(u=u, u_hat=u_hat, y=solve_state(spec, u_hat))


def primal_objective(spec: ProblemSpec, u: np.ndarray) -> float:
    """Reduced objective; ``inf`` outside the box (beyond round-off)."""
    u = np.asarray(u, dtype=float)
    b = spec.bounds
    if np.any(u < b.lo - FEASIBILITY_TOL) or np.any(u > b.hi + FEASIBILITY_TOL):
        return math.inf
    M = spec.ops.M
    e = solve_state(spec, u) - spec.yd
    Mu = M @ u
    return float(0.5 * e @ (M @ e) + 0.5 * spec.alpha * u @ Mu + spec.beta * np.sum(np.abs(Mu)))


def duality_gap(spec: ProblemSpec, z) -> float:
    """``J(u_hat) + Phi(z)``; nonnegative up to solve tolerance by weak duality."""
    lam, p, mu = _triple(z)
    u_hat = project_box(control_of(spec, (lam, p, mu)), spec.bounds)
    return primal_objective(spec, u_hat) + dual_objective(spec, (lam, p, mu))

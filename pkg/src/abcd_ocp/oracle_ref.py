"""
Independent reference solvers for the reduced discrete problem

    J(u) = 1/2 ||S (u + yr) - yd||^2_M + alpha/2 ||u||^2_M + beta ||M u||_1,
    a <= u <= b,  S = K^-1 M.

Everything here is dense linear algebra on small problems and shares no code
path with the dual solver beyond the assembled matrices.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .abcd_solver import ProblemSpec

ENUM_SLACK = 1e-10
MAX_ENUM_DOF = 6


class OracleError(RuntimeError):
    """No sign/activity pattern produced a verified KKT point."""


@dataclass
class OracleSolution:
    u_star: np.ndarray
    objective: float
    method: str
    certificate: float
    pattern: Optional[tuple] = None
    best_history: list = field(default_factory=list)


@dataclass(frozen=True)
class _Reduced:
    M: np.ndarray
    H: np.ndarray
    g0: np.ndarray
    const: float


def _reduce(spec: ProblemSpec) -> _Reduced:
    K = spec.ops.K.toarray()
    M = spec.ops.M.toarray()
    S = np.linalg.solve(K, M)
    SM = S.T @ M
    H = SM @ S + spec.alpha * M
    H = 0.5 * (H + H.T)
    e0 = S @ spec.yr - spec.yd
    return _Reduced(M=M, H=H, g0=SM @ e0, const=float(0.5 * e0 @ M @ e0))


def _objective(red: _Reduced, beta: float, u: np.ndarray) -> float:
    return float(0.5 * u @ red.H @ u + red.g0 @ u + red.const + beta * np.sum(np.abs(red.M @ u)))


def reduced_objective(spec: ProblemSpec, u: np.ndarray) -> float:
    """Dense evaluation of ``J`` (box not checked)."""
    return _objective(_reduce(spec), spec.beta, np.asarray(u, dtype=float))


def zero_threshold(spec: ProblemSpec) -> float:
    """
    ``||M^-1 grad(0)||_inf`` for the smooth part.

    For ``beta`` at or above this value ``u = 0`` satisfies the optimality
    system with ``zeta = -M^-1 grad(0) / beta`` in ``[-1, 1]`` and no active
    bound, so ``u* = 0``.
    """
    red = _reduce(spec)
    return float(np.max(np.abs(np.linalg.solve(red.M, red.g0))))


def _solve_pattern(red, beta, lo, hi, sigma, pi):
    """
    Solve the square KKT system of one pattern.

    sigma_i in {-1, 0, 1}: sign of (Mu)_i; pi_i in {-1, 0, 1}: u_i at lo, free, hi.
    Unknowns are the free u entries, zeta on sigma = 0 and nu on active bounds.
    Returns (u, zeta, nu) or None when singular.
    """
    n = len(sigma)
    sigma = np.asarray(sigma)
    pi = np.asarray(pi)
    free = np.flatnonzero(pi == 0)
    act = np.flatnonzero(pi != 0)
    zer = np.flatnonzero(sigma == 0)
    u_fix = np.zeros(n)
    u_fix[pi == -1] = lo
    u_fix[pi == 1] = hi
    zeta_fix = sigma.astype(float)

    nf, nz, na = len(free), len(zer), len(act)
    m = nf + nz + na
    A = np.zeros((n + nz, m))
    rhs = np.zeros(n + nz)
    # stationarity: H u + g0 + beta M zeta + nu = 0
    A[:n, :nf] = red.H[:, free]
    A[:n, nf:nf + nz] = beta * red.M[:, zer]
    A[act, nf + nz + np.arange(na)] = 1.0
    rhs[:n] = -(red.g0 + red.H @ u_fix + beta * red.M @ zeta_fix)
    # (M u)_i = 0 on the zero set
    A[n:, :nf] = red.M[np.ix_(zer, free)]
    rhs[n:] = -red.M[zer] @ u_fix
    try:
        x = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(x)) or np.linalg.cond(A) > 1e12:
        return None
    u = u_fix.copy()
    u[free] = x[:nf]
    zeta = zeta_fix.copy()
    zeta[zer] = x[nf:nf + nz]
    nu = np.zeros(n)
    nu[act] = x[nf + nz:]
    return u, zeta, nu


def _kkt_violation(red, beta, lo, hi, sigma, pi, u, zeta, nu) -> float:
    sigma = np.asarray(sigma)
    pi = np.asarray(pi)
    Mu = red.M @ u
    viol = [np.max(np.abs(red.H @ u + red.g0 + beta * red.M @ zeta + nu))]
    viol.append(np.max(np.where(sigma == 1, -Mu, 0.0)))
    viol.append(np.max(np.where(sigma == -1, Mu, 0.0)))
    viol.append(np.max(np.where(sigma == 0, np.abs(zeta) - 1.0, 0.0)))
    viol.append(np.max(np.where(pi == -1, nu, 0.0)))
    viol.append(np.max(np.where(pi == 1, -nu, 0.0)))
    viol.append(np.max(np.where(pi == 0, np.maximum(lo - u, u - hi), 0.0)))
    return float(max(viol))


def enumerate_solve(spec: ProblemSpec) -> OracleSolution:
    """
    Global minimizer by exhaustive enumeration of KKT patterns.

    Tries every pair of a sign pattern of ``M u`` and an activity pattern of
    ``u`` (``9^n`` pairs), solves the linear KKT system of each and keeps the
    patterns whose inequalities hold to ``1e-10``.  Among verified patterns
    the lowest objective wins, ties broken by enumeration order.

    Raises
    ------
    ValueError
        If ``n_dof > 6``.
    OracleError
        If no pattern verifies.
    """
    n = spec.n_dof
    if n > MAX_ENUM_DOF:
        raise ValueError(f"enumeration limited to n_dof <= {MAX_ENUM_DOF}, got {n}")
    red = _reduce(spec)
    lo, hi = spec.bounds.lo, spec.bounds.hi
    best = None
    for sigma in itertools.product((-1, 0, 1), repeat=n):
        for pi in itertools.product((-1, 0, 1), repeat=n):
            sol = _solve_pattern(red, spec.beta, lo, hi, sigma, pi)
            if sol is None:
                continue
            cert = _kkt_violation(red, spec.beta, lo, hi, sigma, pi, *sol)
            if cert > ENUM_SLACK:
                continue
            obj = _objective(red, spec.beta, sol[0])
            if best is None or obj < best.objective:
                best = OracleSolution(u_star=sol[0], objective=obj, method="enumeration",
                                      certificate=cert, pattern=(sigma, pi))
    if best is None:
        raise OracleError("no KKT pattern verified; inputs or assembly are inconsistent")
    return best


def subgradient_solve(spec: ProblemSpec, iters: int = 100_000,
                      u_main: Optional[np.ndarray] = None,
                      record_every: int = 1000) -> OracleSolution:
    """
    Projected subgradient method in the lumped-mass metric.

    ``u <- P_[a,b](u - t_k W^-1 g_k)`` with ``g_k = H u + g0 + beta M sign(M u)``
    and ``t_k = c / sqrt(k)``, ``c = 1 / (1 + L)``, ``L`` the largest
    eigenvalue of ``W^-1 H``.  The W metric makes the step size
    mesh-independent; plain Euclidean steps stall by a factor ``h^-2``.

    The certificate is ``J(u_best) - J(u_main)`` when ``u_main`` is given,
    otherwise the classical bound ``(R^2 + G^2 sum t_k^2) / (2 sum t_k)`` with
    ``R`` the W-diameter of the box and ``G`` the largest W^-1-norm subgradient seen.
    """
    if iters < 1:
        raise ValueError("iters must be positive")
    red = _reduce(spec)
    w = spec.ops.w.copy()
    w_inv = 1.0 / w
    lo, hi = spec.bounds.lo, spec.bounds.hi
    beta = spec.beta
    L = float(np.max(np.linalg.eigvalsh(red.H * np.sqrt(w_inv)[:, None] * np.sqrt(w_inv)[None, :])))
    c = 1.0 / (1.0 + L)

    u = np.zeros(spec.n_dof)
    best_u = u.copy()
    best = _objective(red, beta, u)
    history = [best]
    sum_t = sum_t2 = 0.0
    g2_max = 0.0
    H, g0, M = red.H, red.g0, red.M
    for k in range(1, iters + 1):
        Mu = M @ u
        g = H @ u + g0 + beta * (M @ np.sign(Mu))
        gw = g * w_inv
        g2_max = max(g2_max, float(g @ gw))
        t = c / math.sqrt(k)
        u = np.clip(u - t * gw, lo, hi)
        sum_t += t
        sum_t2 += t * t
        val = 0.5 * u @ (H @ u) + g0 @ u + red.const + beta * np.abs(M @ u).sum()
        if val < best:
            best = float(val)
            best_u = u.copy()
        if k % record_every == 0:
            history.append(best)

    if u_main is not None:
        cert = best - _objective(red, beta, np.asarray(u_main, dtype=float))
    else:
        R2 = float(np.sum(w) * (hi - lo) ** 2)
        cert = (R2 + g2_max * sum_t2) / (2.0 * sum_t)
    return OracleSolution(u_star=best_u, objective=best, method="subgradient",
                          certificate=float(cert), best_history=history)

"""
Accelerated block coordinate descent on the discretized dual problem.

The dual variables are ``z = (lambda, p, mu)``.  One iteration performs a
symmetric Gauss-Seidel sweep ``p_hat -> lambda -> p`` over the ``(lambda, p)``
block, a closed-form proximal step for ``mu`` and a Nesterov-type
extrapolation of all three blocks.  The dual objective is

    Phi(z) = 1/2 ||K p - M yd||^2_{M^-1} + 1/(2 alpha) ||lambda + mu - p||^2_M
             + <M yr, p> + indicator_{[-beta, beta]}(lambda)
             + support_{[a, b]}(M mu) - 1/2 ||yd||^2_M.

The primal control is recovered as ``u = (p - lambda - mu) / alpha``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .grid_fem import FemOperators, TriMesh
from .prox_kit import BoxBounds, project_box, prox_support_weighted, support_box
from .sparse_core import SUBPROBLEM_TOL, SchurSolver, mass_solve

FEASIBILITY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Discrete sparse control problem on interior DOFs."""

    alpha: float
    beta: float
    bounds: BoxBounds
    yd: np.ndarray
    yr: np.ndarray
    ops: FemOperators
    mesh: Optional[TriMesh] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        n = self.ops.n_dof
        for name in ("yd", "yr"):
            vec = np.asarray(getattr(self, name), dtype=float)
            if vec.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got shape {vec.shape}")
            object.__setattr__(self, name, vec)

    @property
    def n_dof(self) -> int:
        return self.ops.n_dof

    @cached_property
    def Myd(self) -> np.ndarray:
        return self.ops.M @ self.yd

    @cached_property
    def Myr(self) -> np.ndarray:
        return self.ops.M @ self.yr

    @cached_property
    def p_rhs0(self) -> np.ndarray:
        # constant part of the p-subproblem right-hand side
        return self.ops.K @ self.yd - self.Myr

    @cached_property
    def schur(self) -> SchurSolver:
        return SchurSolver(self.ops, self.alpha)

    def with_params(self, **kw) -> "ProblemSpec":
        fields = dict(alpha=self.alpha, beta=self.beta, bounds=self.bounds, yd=self.yd,
                      yr=self.yr, ops=self.ops, mesh=self.mesh)
        fields.update(kw)
        return ProblemSpec(**fields)


@dataclass
class DualIterate:
    """Current iterate, its extrapolated copy, momentum scalar and counter."""

    lam: np.ndarray
    p: np.ndarray
    mu: np.ndarray
    lam_tilde: np.ndarray
    p_tilde: np.ndarray
    mu_tilde: np.ndarray
    t: float = 1.0
    k: int = 0

    @classmethod
    def start(cls, lam, p, mu) -> "DualIterate":
        lam, p, mu = (np.array(v, dtype=float) for v in (lam, p, mu))
        return cls(lam, p, mu, lam.copy(), p.copy(), mu.copy(), 1.0, 0)

    @classmethod
    def zeros(cls, n: int) -> "DualIterate":
        return cls.start(np.zeros(n), np.zeros(n), np.zeros(n))

    @property
    def triple(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.lam, self.p, self.mu


def _triple(z):
    if isinstance(z, DualIterate):
        return z.triple
    lam, p, mu = z
    return (np.asarray(lam, dtype=float), np.asarray(p, dtype=float),
            np.asarray(mu, dtype=float))


@dataclass
class SolverConfig:
    kkt_tol: float = 1e-6
    max_iter: int = 20000
    record_history: bool = True
    record_gap: bool = True
    reference_z: Optional[tuple] = None
    z0: Optional[tuple] = None
    schur_method: str = "direct"
    subproblem_tol: Optional[float] = None
    check_subproblems: bool = False
    # stop early once max(eta) has not halved over this many iterations
    stall_window: Optional[int] = None

    def __post_init__(self):
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    @property
    def inner_tol(self) -> float:
        if self.subproblem_tol is not None:
            return self.subproblem_tol
        return max(min(SUBPROBLEM_TOL, 0.01 * self.kkt_tol), 1e-14)


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    kkt_tol: float
    history: dict
    final: DualIterate
    wall_time: float
    linear_solves: dict = field(default_factory=dict)
    stalled: bool = False
    best_eta: float = math.inf

    @property
    def z(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.final.triple

    def to_dict(self, spec: Optional[ProblemSpec] = None, timing: bool = True) -> dict:
        """
        JSON-ready document.  With ``spec`` the primal control, state and both
        objective values are embedded; ``timing=False`` drops ``wall_time`` so
        that the document is reproducible.
        """
        out = {
            "iterations": self.iterations,
            "converged": self.converged,
            "stalled": self.stalled,
            "best_eta": self.best_eta,
            "kkt_tol": self.kkt_tol,
            "wall_time": self.wall_time,
            "linear_solves": dict(self.linear_solves),
            "history": {k: [float(x) for x in v] for k, v in self.history.items()},
            "final": {
                "lambda": self.final.lam.tolist(),
                "p": self.final.p.tolist(),
                "mu": self.final.mu.tolist(),
            },
        }
        if not timing:
            del out["wall_time"]
        if spec is not None:
            from .primal_bridge import primal_objective, recover_control
            pair = recover_control(spec, self.final)
            out["primal"] = {
                "u": pair.u.tolist(),
                "u_hat": pair.u_hat.tolist(),
                "y": pair.y.tolist(),
                "objective": primal_objective(spec, pair.u_hat),
                "dual_objective": dual_objective(spec, self.final),
            }
        return out


# ---------------------------------------------------------------------------
# objective and residuals

def dual_objective(spec: ProblemSpec, z) -> float:
    """Dual objective; ``inf`` when ``lambda`` leaves ``[-beta, beta]``."""
    lam, p, mu = _triple(z)
    if np.any(np.abs(lam) > spec.beta + FEASIBILITY_TOL):
        return math.inf
    ops = spec.ops
    r = ops.K @ p - spec.Myd
    s = lam + mu - p
    return float(0.5 * r @ mass_solve(ops, r)
                 + 0.5 / spec.alpha * s @ (ops.M @ s)
                 + spec.Myr @ p
                 + support_box(ops.M @ mu, spec.bounds)
                 - 0.5 * spec.yd @ spec.Myd)


def kkt_residual(spec: ProblemSpec, z) -> tuple[float, float, float]:
    """
    Relative residuals of the dual optimality system.

    With ``u = (p - lambda - mu)/alpha`` and ``s = M u``:

    * ``eta1 = ||K M^-1 (K p - M yd) + M yr + s|| / (1 + ||M yd||)``
    * ``eta2 = ||lambda - P_[-beta,beta](lambda + s)|| / (1 + ||lambda||)``
    * ``eta3 = ||u - P_[a,b](u + W^-1 M mu)||_inf / (1 + ||u||_inf)``

    All three vanish exactly at a solution.  The third inclusion is
    ``M mu in N_[a,b](u)``; any positive diagonal rescaling of the multiplier
    gives the same zero set, and ``W^-1 M mu`` puts it on the scale of nodal
    function values, which together with the max norm keeps ``eta3``
    comparable across meshes.
    """
    lam, p, mu = _triple(z)
    ops = spec.ops
    u = (p - lam - mu) / spec.alpha
    s = ops.M @ u
    r1 = ops.K @ mass_solve(ops, ops.K @ p - spec.Myd) + spec.Myr + s
    eta1 = np.linalg.norm(r1) / (1.0 + np.linalg.norm(spec.Myd))
    eta2 = np.linalg.norm(lam - np.clip(lam + s, -spec.beta, spec.beta)) / (1.0 + np.linalg.norm(lam))
    r3 = u - project_box(u + ops.w_inv * (ops.M @ mu), spec.bounds)
    eta3 = np.max(np.abs(r3), initial=0.0) / (1.0 + np.max(np.abs(u), initial=0.0))
    return float(eta1), float(eta2), float(eta3)


# ---------------------------------------------------------------------------
# block updates

def solve_phat(spec: ProblemSpec, lambda_in: np.ndarray, mu_in: np.ndarray,
               x0: Optional[np.ndarray] = None, schur: Optional[SchurSolver] = None) -> np.ndarray:
    """Minimize the ``p``-part of the dual objective with ``lambda``, ``mu`` frozen."""
    schur = spec.schur if schur is None else schur
    rhs = spec.p_rhs0 + spec.ops.M @ (lambda_in + mu_in) / spec.alpha
    return schur.solve(rhs, x0=x0)


def solve_p(spec: ProblemSpec, lambda_k: np.ndarray, mu_in: np.ndarray,
            x0: Optional[np.ndarray] = None, schur: Optional[SchurSolver] = None) -> np.ndarray:
    """Backward half of the sweep: same subproblem as ``solve_phat`` at the new ``lambda``."""
    return solve_phat(spec, lambda_k, mu_in, x0=x0, schur=schur)


def solve_lambda(spec: ProblemSpec, phat: np.ndarray, mu_in: np.ndarray,
                 lambda_tilde: np.ndarray) -> np.ndarray:
    """
    ``lambda``-step with the extra ``(W - M)`` proximal term.

    The quadratic has Hessian ``W / alpha``, which is diagonal, so the
    constrained minimizer is the clamp of the unconstrained one.
    """
    ops = spec.ops
    target = ops.M @ (phat - mu_in) + ops.w * lambda_tilde - ops.M @ lambda_tilde
    return np.clip(target * ops.w_inv, -spec.beta, spec.beta)


def solve_mu(spec: ProblemSpec, p_k: np.ndarray, lambda_k: np.ndarray,
             mu_tilde: np.ndarray) -> np.ndarray:
    """
    ``mu``-step with proximal operator ``(gamma M W^-1 M - M)/alpha``.

    In the variable ``xi = M mu`` the subproblem is a weighted prox of the box
    support function centred at ``v = M mu_tilde + W (p - lambda - mu_tilde)/gamma``.
    """
    ops = spec.ops
    v = ops.M @ mu_tilde + ops.w * (p_k - lambda_k - mu_tilde) / ops.gamma
    xi = prox_support_weighted(v, ops, spec.alpha, spec.bounds)
    return mass_solve(spec.ops, xi, x0=mu_tilde)


def momentum_step(state: DualIterate, z_prev) -> DualIterate:
    """Advance ``t`` and extrapolate every block with weight ``(t_k - 1)/t_{k+1}``."""
    lam0, p0, mu0 = _triple(z_prev)
    t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * state.t * state.t))
    w = (state.t - 1.0) / t_next
    return DualIterate(
        lam=state.lam, p=state.p, mu=state.mu,
        lam_tilde=state.lam + w * (state.lam - lam0),
        p_tilde=state.p + w * (state.p - p0),
        mu_tilde=state.mu + w * (state.mu - mu0),
        t=t_next, k=state.k,
    )


# ---------------------------------------------------------------------------
# dense checks (small meshes only)

def _dense(A) -> np.ndarray:
    return A.toarray() if hasattr(A, "toarray") else np.asarray(A)


def lambda_prox_operator(spec: ProblemSpec) -> np.ndarray:
    """Dense ``alpha * D1`` block on ``lambda``: ``M (M + alpha K M^-1 K)^-1 M + W - M``."""
    K, M = _dense(spec.ops.K), _dense(spec.ops.M)
    inner = M + spec.alpha * K @ np.linalg.solve(M, K)
    return M @ np.linalg.solve(inner, M) + np.diag(spec.ops.w) - M


def lp_subproblem_residual(spec: ProblemSpec, lam, p, lam_tilde, p_tilde, mu_tilde) -> float:
    """
    First-order residual of the joint ``(lambda, p)`` proximal subproblem.

    The subproblem is the coupled quadratic in ``(lambda, p)`` at fixed
    ``mu_tilde`` plus ``1/2 ||(lambda, p) - (lambda_tilde, p_tilde)||^2_{D1}``
    with ``D1`` acting on ``lambda`` only; a symmetric Gauss-Seidel sweep solves
    it exactly.  Returned value is relative to ``1 + ||rhs||``.
    """
    K, M = _dense(spec.ops.K), _dense(spec.ops.M)
    a = spec.alpha
    Minv_K = np.linalg.solve(M, K)
    g_p = K @ Minv_K @ p - spec.ops.K @ spec.yd + spec.Myr - M @ (lam - p + mu_tilde) / a
    D = lambda_prox_operator(spec) / a
    g_lam = M @ (lam - p + mu_tilde) / a + D @ (lam - lam_tilde)
    r_lam = lam - np.clip(lam - g_lam, -spec.beta, spec.beta)
    scale = 1.0 + np.linalg.norm(spec.p_rhs0) + np.linalg.norm(M @ mu_tilde) / a
    return float(max(np.linalg.norm(g_p), np.linalg.norm(r_lam)) / scale)


def mu_subproblem_residual(spec: ProblemSpec, mu, p, lam, mu_tilde) -> float:
    """
    First-order residual of the ``mu`` subproblem.

    Optimality reads ``-M^-1 g in argmax_{w in [a,b]} <w, M mu>`` with ``g`` the
    gradient of the smooth part; measured as ``||w - P(w + M mu)||``.
    """
    M = _dense(spec.ops.M)
    Winv = np.diag(spec.ops.w_inv)
    g = (M @ (mu - p + lam) + (spec.ops.gamma * M @ Winv @ M - M) @ (mu - mu_tilde)) / spec.alpha
    w = -np.linalg.solve(M, g)
    r = w - project_box(w + M @ mu, spec.bounds)
    return float(np.linalg.norm(r) / (1.0 + np.linalg.norm(mu)))


# ---------------------------------------------------------------------------
# driver

def compute_tau_h(spec: ProblemSpec, z0, zstar, schur: Optional[SchurSolver] = None) -> float:
    """
    Initial-distance constant of the O(1/k^2) bound.

    ``tau_h = 1/(2 alpha) [ <d_l, (M (M + alpha K M^-1 K)^-1 M + W - M) d_l>
                             + gamma <M d_m, W^-1 M d_m> ]`` with ``d = z0 - zstar``.
    The ``p`` block carries no weight.
    """
    l0, _, m0 = _triple(z0)
    ls, _, ms = _triple(zstar)
    d_l, d_m = l0 - ls, m0 - ms
    ops = spec.ops
    schur = spec.schur if schur is None else schur
    Md_l = ops.M @ d_l
    # (M + alpha K M^-1 K)^-1 = (1/alpha) (K M^-1 K + M/alpha)^-1
    q = schur.solve(Md_l) / spec.alpha
    lam_part = Md_l @ q + d_l @ (ops.w * d_l) - d_l @ Md_l
    Md_m = ops.M @ d_m
    mu_part = ops.gamma * Md_m @ (ops.w_inv * Md_m)
    return float(0.5 / spec.alpha * (lam_part + mu_part))


def control_of(spec: ProblemSpec, z) -> np.ndarray:
    lam, p, mu = _triple(z)
    return (p - lam - mu) / spec.alpha


def _m_norm(ops: FemOperators, v: np.ndarray) -> float:
    return float(np.sqrt(max(v @ (ops.M @ v), 0.0)))


def run(spec: ProblemSpec, config: Optional[SolverConfig] = None) -> SolveReport:
    """
    Run the accelerated sweep until ``max(eta) <= kkt_tol`` or ``max_iter``.

    Non-convergence is reported through ``SolveReport.converged``.
    History keys: ``phi, eta1, eta2, eta3`` always; ``gap`` when
    ``record_gap``; ``z_dist, u_dist, u_hat_dist`` (Euclidean ``z`` distance,
    L2 distances of ``u`` and the projected ``u_hat``) when a reference is set;
    ``sgs_residual, mu_residual`` in ``check_subproblems`` mode.
    """
    from .primal_bridge import duality_gap

    config = SolverConfig() if config is None else config
    n = spec.n_dof
    started = time.perf_counter()
    if config.schur_method == "direct" and config.subproblem_tol is None:
        schur = spec.schur
        schur_solves0 = schur.n_solves
    else:
        schur = SchurSolver(spec.ops, spec.alpha, method=config.schur_method, tol=config.inner_tol)
        schur_solves0 = 0

    state = DualIterate.zeros(n) if config.z0 is None else DualIterate.start(*config.z0)
    if np.any(np.abs(state.lam) > spec.beta):
        raise ValueError("initial lambda must lie in [-beta, beta]")

    keys = ["phi", "eta1", "eta2", "eta3"]
    if config.record_gap:
        keys.append("gap")
    ref_u = None
    if config.reference_z is not None:
        ref = _triple(config.reference_z)
        ref_u = control_of(spec, ref)
        keys += ["z_dist", "u_dist", "u_hat_dist"]
    if config.check_subproblems:
        keys += ["sgs_residual", "mu_residual"]
    history = {k: [] for k in keys} if config.record_history else {}

    converged = stalled = False
    best_eta, best_at = math.inf, 0
    p_warm = state.p
    for k in range(1, config.max_iter + 1):
        lam_t, p_t, mu_t = state.lam_tilde, state.p_tilde, state.mu_tilde
        phat = solve_phat(spec, lam_t, mu_t, x0=p_warm, schur=schur)
        lam = solve_lambda(spec, phat, mu_t, lam_t)
        p = solve_p(spec, lam, mu_t, x0=phat, schur=schur)
        mu = solve_mu(spec, p, lam, mu_t)
        p_warm = p

        z_prev = state.triple
        state = DualIterate(lam, p, mu, lam_t, p_t, mu_t, state.t, k)
        etas = kkt_residual(spec, state)

        if config.record_history:
            history["phi"].append(dual_objective(spec, state))
            for i, e in enumerate(etas, start=1):
                history[f"eta{i}"].append(e)
            if config.record_gap:
                history["gap"].append(duality_gap(spec, state))
            if ref_u is not None:
                history["z_dist"].append(float(np.sqrt(sum(
                    np.sum((a - b) ** 2) for a, b in zip(state.triple, ref)))))
                u = control_of(spec, state)
                history["u_dist"].append(_m_norm(spec.ops, u - ref_u))
                history["u_hat_dist"].append(_m_norm(spec.ops, project_box(u, spec.bounds) - ref_u))
            if config.check_subproblems:
                history["sgs_residual"].append(lp_subproblem_residual(spec, lam, p, lam_t, p_t, mu_t))
                history["mu_residual"].append(mu_subproblem_residual(spec, mu, p, lam, mu_t))

        eta = max(etas)
        if eta <= config.kkt_tol:
            converged = True
            best_eta = min(best_eta, eta)
            break
        if eta < 0.5 * best_eta:
            best_at = k
        best_eta = min(best_eta, eta)
        if config.stall_window is not None and k - best_at >= config.stall_window:
            stalled = True
            break
        state = momentum_step(state, z_prev)

    state.k = k
    return SolveReport(
        iterations=k,
        converged=converged,
        kkt_tol=config.kkt_tol,
        history=history,
        final=state,
        wall_time=time.perf_counter() - started,
        stalled=stalled,
        best_eta=best_eta,
        linear_solves={
            "schur_method": schur.method,
            "schur_solves": schur.n_solves - schur_solves0,
            "schur_cg_iterations": schur.cg_iterations,
        },
    )


class ReferenceSolveError(RuntimeError):
    """Raised when a reference solve cannot reach the accepted accuracy."""


def solve_reference(spec: ProblemSpec, kkt_tol: float = 1e-12, floor_tol: float = 1e-8,
                    max_iter: int = 5000, stall_window: int = 100, **kw) -> SolveReport:
    """
    High-accuracy solve used as ``z*``.

    Runs towards ``kkt_tol``.  On fine meshes ``eta1`` has a round-off floor
    of order ``eps ||K M^-1 K|| ||p||`` (growing like ``h^-2``) which can sit
    above ``1e-12``; the run then stops on stall and is accepted if it
    reached ``floor_tol``.
    """
    cfg = SolverConfig(kkt_tol=kkt_tol, max_iter=max_iter, stall_window=stall_window,
                       record_history=False, record_gap=False, **kw)
    report = run(spec, cfg)
    if not report.converged and report.best_eta > floor_tol:
        raise ReferenceSolveError(
            f"reference solve reached max(eta) = {report.best_eta:.3e} only "
            f"(target {kkt_tol:.0e}, accepted floor {floor_tol:.0e})")
    return report

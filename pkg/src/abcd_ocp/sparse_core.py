"""
Sparse products and the linear solves used by the subproblems.

Matrices are stored as :class:`scipy.sparse.csr_matrix`.  Iterative solves go
through :func:`cg_solve`, a plain preconditioned conjugate gradient loop with
a fixed operation order (bitwise reproducible for identical inputs).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse as sp
from scipy.sparse import linalg as spla

from .grid_fem import FemOperators

LinearOperator = Callable[[np.ndarray], np.ndarray]

MASS_TOL = 1e-13
SUBPROBLEM_TOL = 1e-11


class LinearSolveError(RuntimeError):
    """Raised when an iterative solve breaks down or fails to converge."""


@dataclass
class LinearSolveStats:
    iterations: int
    relative_residual: float
    converged: bool


def as_csr(A) -> sp.csr_matrix:
    """Convert to canonical CSR: sorted column indices, no stored zeros."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def matvec(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: matrix {A.shape} times vector {x.shape}")
    return A @ x


def cg_solve(apply: LinearOperator, rhs: np.ndarray, tol: float = 1e-10,
             max_iter: Optional[int] = None, precond: Optional[np.ndarray] = None,
             x0: Optional[np.ndarray] = None) -> tuple[np.ndarray, LinearSolveStats]:
    """
    Preconditioned conjugate gradients for a symmetric positive definite operator.

    Parameters
    ----------
    apply : callable
        ``x -> A x``.
    rhs : ndarray
        Right-hand side.
    tol : float
        Relative residual target, ``||rhs - A x|| <= tol ||rhs||``.
    max_iter : int, optional
        Defaults to ``10 * len(rhs)``.
    precond : ndarray, optional
        Diagonal preconditioner given as the diagonal of ``P^{-1}``.
    x0 : ndarray, optional
        Warm start.

    Returns
    -------
    x : ndarray
    stats : LinearSolveStats
        ``converged`` is False if ``max_iter`` was exhausted; callers decide
        whether that is fatal.

    Raises
    ------
    LinearSolveError
        On NaN breakdown or loss of positive definiteness.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * max(n, 1)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), LinearSolveStats(0, 0.0, True)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x) if x0 is not None else b.copy()
    rnorm = np.linalg.norm(r)
    if rnorm <= tol * bnorm:
        return x, LinearSolveStats(0, rnorm / bnorm, True)

    z = r * precond if precond is not None else r
    d = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ad = apply(d)
        dAd = d @ Ad
        if not np.isfinite(dAd):
            raise LinearSolveError("NaN breakdown in conjugate gradients")
        if dAd <= 0.0:
            raise LinearSolveError("operator is not positive definite")
        step = rz / dAd
        x += step * d
        r -= step * Ad
        rnorm = np.linalg.norm(r)
        if rnorm <= tol * bnorm:
            return x, LinearSolveStats(it, rnorm / bnorm, True)
        z = r * precond if precond is not None else r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    return x, LinearSolveStats(max_iter, rnorm / bnorm, False)


def mass_solve(ops: FemOperators, rhs: np.ndarray, tol: float = MASS_TOL,
               x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Solve ``M x = rhs`` by CG preconditioned with the lumped mass diagonal."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (ops.n_dof,):
        raise ValueError(f"expected vector of length {ops.n_dof}, got shape {rhs.shape}")
    x, stats = cg_solve(ops.M.__matmul__, rhs, tol=tol, precond=ops.w_inv, x0=x0)
    if not stats.converged:
        raise LinearSolveError(
            f"mass solve stalled at relative residual {stats.relative_residual:.3e}")
    return x


def schur_apply(ops: FemOperators, alpha: float, p: np.ndarray, mass_tol: float = MASS_TOL) -> np.ndarray:
    """Apply ``(K M^{-1} K + M / alpha)`` to ``p``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return ops.K @ mass_solve(ops, ops.K @ p, tol=mass_tol) + (ops.M @ p) / alpha


class SchurSolver:
    """
    Solver for ``(K M^{-1} K + M / alpha) p = rhs``.

    ``method="direct"`` factorizes the equivalent symmetric block system

        [ M/alpha   K ] [p]   [rhs]
        [   K      -M ] [q] = [ 0 ]      (q = M^{-1} K p)

    once and back-substitutes per call.  ``method="cg"`` runs outer CG on
    :func:`schur_apply` with inner mass solves one order tighter than ``tol``.
    """

    def __init__(self, ops: FemOperators, alpha: float, method: str = "direct",
                 tol: float = SUBPROBLEM_TOL, max_iter: Optional[int] = None):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        if method not in ("direct", "cg"):
            raise ValueError(f"unknown method {method!r}")
        self.ops = ops
        self.alpha = float(alpha)
        self.method = method
        self.tol = tol
        self.inner_tol = min(MASS_TOL, tol / 100.0)
        self.max_iter = max_iter if max_iter is not None else 10 * ops.n_dof
        self.n_solves = 0
        self.cg_iterations = 0
        self._lu = None
        if method == "direct":
            n = ops.n_dof
            block = sp.bmat([[ops.M / self.alpha, ops.K], [ops.K, -ops.M]], format="csc")
            self._lu = spla.splu(block)
            self._n = n
        else:
            # Jacobi-type preconditioner: inverse diagonal of K W^{-1} K + W/alpha
            Kd = ops.K.multiply(ops.K).T @ ops.w_inv
            self._precond = 1.0 / (np.asarray(Kd).ravel() + ops.w / self.alpha)

    def apply(self, p: np.ndarray) -> np.ndarray:
        return schur_apply(self.ops, self.alpha, p, mass_tol=self.inner_tol)

    def solve(self, rhs: np.ndarray, x0: Optional[np.ndarray] = None) -> np.ndarray:
        self.n_solves += 1
        rhs = np.asarray(rhs, dtype=float)
        if self.method == "direct":
            full = np.concatenate([rhs, np.zeros(self._n)])
            return self._lu.solve(full)[: self._n]
        x, stats = cg_solve(self.apply, rhs, tol=self.tol, max_iter=self.max_iter,
                            precond=self._precond, x0=x0)
        self.cg_iterations += stats.iterations
        if not stats.converged:
            raise LinearSolveError(
                f"Schur CG stalled at relative residual {stats.relative_residual:.3e}")
        return x


def extreme_eigenvalue(apply: LinearOperator, n: int, which: str = "largest",
                       tol: float = 1e-8, max_iter: int = 20000, seed: int = 0) -> float:
    """
    Largest (power iteration) or smallest (inverse iteration) eigenvalue of a
    symmetric positive semidefinite operator.

    Iteration stops once the Rayleigh quotient changes by less than ``tol``
    relative; inverse iteration solves with :func:`cg_solve` at ``tol * 1e-3``.
    """
    if which not in ("largest", "smallest"):
        raise ValueError("which must be 'largest' or 'smallest'")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    rq_old = np.inf
    for _ in range(max_iter):
        if which == "largest":
            y = apply(x)
        else:
            y, stats = cg_solve(apply, x, tol=max(tol * 1e-3, 1e-14), x0=x)
            if not stats.converged:
                raise LinearSolveError("inner solve failed in inverse iteration")
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        rq = float(x @ apply(x))
        if abs(rq - rq_old) <= tol * abs(rq):
            return rq
        rq_old = rq
    raise LinearSolveError(f"eigenvalue iteration did not converge in {max_iter} steps")

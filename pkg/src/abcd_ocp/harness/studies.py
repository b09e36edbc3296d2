"""
Solve and study drivers behind the command line.

Each study returns a :class:`StudyResult` (column names, rows, summary) and
can write it as CSV with 17 significant digits.  Wall-clock timings are kept
out of the main tables so that re-running a study reproduces its files byte
for byte; the mesh study writes them to a separate ``*_timing.csv``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..abcd_solver import (
    ProblemSpec,
    SolveReport,
    SolverConfig,
    compute_tau_h,
    control_of,
    dual_objective,
    run,
    solve_reference,
)
from ..grid_fem import l2_error, nodal_sample, p1_function
from ..oracle_ref import MAX_ENUM_DOF, enumerate_solve, subgradient_solve
from ..primal_bridge import primal_objective
from ..prox_kit import project_box
from .config import StudyConfig


class NonConvergenceError(RuntimeError):
    """A solve required by a study stopped before its tolerance."""


@dataclass
class StudyResult:
    name: str
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([np.nan if r[j] is None else r[j] for r in self.rows], dtype=float)

    def write_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([_fmt(v) for v in row])
        return path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _z0(cfg: StudyConfig, spec: ProblemSpec):
    return tuple(nodal_sample(spec.mesh, f) for f in cfg.z0_fields())


def _solver_config(cfg: StudyConfig, **kw) -> SolverConfig:
    base = dict(kkt_tol=cfg.kkt_tol, max_iter=cfg.max_iter, schur_method=cfg.schur_method)
    base.update(kw)
    return SolverConfig(**base)


def _require(report: SolveReport, what: str) -> SolveReport:
    if not report.converged:
        raise NonConvergenceError(
            f"{what}: no convergence after {report.iterations} iterations "
            f"(best max eta {report.best_eta:.3e}, target {report.kkt_tol:.1e})")
    return report


# ---------------------------------------------------------------------------

def run_solve(cfg: StudyConfig, write: bool = True) -> tuple[SolveReport, ProblemSpec, Optional[Path]]:
    """Single solve on ``cfg.n_side``; writes ``solve_n<N>.json`` when ``write``."""
    spec = cfg.problem.build(cfg.n_side)
    report = run(spec, _solver_config(cfg, z0=_z0(cfg, spec)))
    path = None
    if write:
        doc = report.to_dict(spec, timing=False)
        doc["config"] = {"n_side": cfg.n_side, "alpha": spec.alpha, "beta": spec.beta,
                         "a": spec.bounds.lo, "b": spec.bounds.hi, "yd": cfg.problem.yd,
                         "yr": cfg.problem.yr, "c0": cfg.problem.c0}
        path = Path(cfg.out_dir) / f"solve_n{cfg.n_side}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=1) + "\n")
    return report, spec, path


def _loglog_slope(k: np.ndarray, v: np.ndarray) -> float:
    keep = v > 0
    if np.count_nonzero(keep) < 2:
        return math.nan
    return float(np.polyfit(np.log(k[keep]), np.log(v[keep]), 1)[0])


def rate_study(cfg: StudyConfig) -> StudyResult:
    """
    Per-iteration rate table on ``cfg.n_side`` against a high-accuracy reference.

    Columns: ``k, phi_gap, bound, z_dist, k_z_dist, u_gap, sqrt_k_u_gap,
    duality_gap, k_duality_gap`` with ``bound = 4 tau_h/(k+1)^2``.  The summary
    holds the log-log slope of ``phi_gap`` over ``k in [10, k_final/2]`` and the
    positions of the maxima of the scaled distance columns.
    """
    spec = cfg.problem.build(cfg.n_side)
    z0 = _z0(cfg, spec)
    ref = solve_reference(spec, z0=z0)
    phi_star = dual_objective(spec, ref.final)
    tau = compute_tau_h(spec, z0, ref.z)
    rep = _require(run(spec, _solver_config(cfg, z0=z0, reference_z=ref.z)), "rate study")

    H = rep.history
    k = np.arange(1, rep.iterations + 1, dtype=float)
    phi_gap = np.asarray(H["phi"]) - phi_star
    bound = 4.0 * tau / (k + 1.0) ** 2
    z_dist = np.asarray(H["z_dist"])
    u_gap = np.asarray(H["u_hat_dist"])
    gap = np.asarray(H["gap"])
    rows = [
        (int(k[i]), phi_gap[i], bound[i], z_dist[i], k[i] * z_dist[i], u_gap[i],
         math.sqrt(k[i]) * u_gap[i], gap[i], k[i] * gap[i])
        for i in range(rep.iterations)
    ]
    k_final = rep.iterations
    window = (k >= 10) & (k <= k_final / 2)
    kz, ku, kg = k * z_dist, np.sqrt(k) * u_gap, k * gap
    summary = {
        "n_side": cfg.n_side,
        "tau_h": tau,
        "phi_star": phi_star,
        "reference_eta": ref.best_eta,
        "k_final": k_final,
        "bound_holds": bool(np.all(phi_gap <= bound)),
        "bound_violations": int(np.count_nonzero(phi_gap > bound)),
        "phi_gap_slope": _loglog_slope(k[window], phi_gap[window]),
        "window": (10, k_final // 2),
        "sup_k_z_dist": float(kz.max()),
        "argmax_k_z_dist": int(np.argmax(kz)) + 1,
        "sup_sqrt_k_u_gap": float(ku.max()),
        "argmax_sqrt_k_u_gap": int(np.argmax(ku)) + 1,
        "sup_k_duality_gap": float(kg.max()),
    }
    return StudyResult("rate_study",
                       ["k", "phi_gap", "bound", "z_dist", "k_z_dist", "u_gap",
                        "sqrt_k_u_gap", "duality_gap", "k_duality_gap"], rows, summary)


def _first_below(values, eps: float) -> Optional[int]:
    for i, v in enumerate(values):
        if v < eps:
            return i + 1
    return None


def _spread(values) -> tuple[int, float]:
    lo, hi = min(values), max(values)
    return hi - lo, max(3.0, 0.2 * lo)


def mesh_independence_study(cfg: StudyConfig) -> tuple[StudyResult, StudyResult]:
    """
    Iterations to ``kkt_tol`` and ``k_h(eps)`` per mesh.

    ``k_h(eps)`` is the first ``k`` with ``||u^k - u*_h||_{L2} < eps`` where
    ``u*_h`` is that mesh's own reference solution.  Returns the main table and
    a separate timing table.
    """
    if len(cfg.meshes) < 3:
        raise ValueError("need ≥ 3 meshes")
    eps = cfg.eps
    rows, timing = [], []
    for n in cfg.meshes:
        spec = cfg.problem.build(n)
        z0 = _z0(cfg, spec)
        t0 = time.perf_counter()
        ref = solve_reference(spec, z0=z0)
        t_ref = time.perf_counter() - t0
        rep = _require(run(spec, _solver_config(cfg, z0=z0, reference_z=ref.z, record_gap=False)),
                       f"mesh study n_side={n}")
        k_h = _first_below(rep.history["u_dist"], eps)
        if k_h is None:
            longer = run(spec, _solver_config(cfg, z0=z0, reference_z=ref.z, record_gap=False,
                                              kkt_tol=1e-12, stall_window=100))
            k_h = _first_below(longer.history["u_dist"], eps)
        rows.append((n, 1.0 / n, spec.n_dof, rep.iterations, k_h,
                     rep.linear_solves["schur_solves"], ref.best_eta))
        timing.append((n, rep.wall_time, t_ref))

    result = StudyResult("mesh_study",
                         ["n_side", "h", "n_dof", "iterations", "k_h_eps", "schur_solves",
                          "reference_eta"], rows)
    iters = [r[3] for r in rows]
    khs = [r[4] for r in rows]
    it_spread, it_bound = _spread(iters)
    result.summary = {"epsilon": eps, "kkt_tol": cfg.kkt_tol,
                      "iterations": iters, "iteration_spread": it_spread,
                      "iteration_bound": it_bound, "iterations_ok": it_spread <= it_bound}
    if all(k is not None for k in khs):
        kh_spread, kh_bound = _spread(khs)
        result.summary.update(k_h=khs, k_h_spread=kh_spread, k_h_bound=kh_bound,
                              k_h_ok=kh_spread <= kh_bound)
    else:
        result.summary.update(k_h=khs, k_h_ok=False)
    return result, StudyResult("mesh_study_timing", ["n_side", "wall_time", "reference_wall_time"],
                               timing)


def tau_study(cfg: StudyConfig) -> StudyResult:
    """
    ``tau_h`` for a fixed continuous initial triple sampled on each mesh.

    Columns ``n_side, h, tau_h, diff, ratio`` where ``diff = tau_h - tau_{2h}``
    and ``ratio`` is the previous ``|diff|`` over the current one.
    """
    rows = []
    prev_tau = prev_diff = None
    for n in cfg.meshes:
        spec = cfg.problem.build(n)
        z0 = _z0(cfg, spec)
        ref = solve_reference(spec)
        tau = compute_tau_h(spec, z0, ref.z)
        diff = None if prev_tau is None else tau - prev_tau
        ratio = None
        if prev_diff is not None and diff is not None and diff != 0.0:
            ratio = abs(prev_diff) / abs(diff)
        rows.append((n, 1.0 / n, tau, diff, ratio))
        prev_tau, prev_diff = tau, diff
    ratios = [r[4] for r in rows if r[4] is not None]
    diffs = [abs(r[3]) for r in rows if r[3] is not None]
    summary = {
        "tau": [r[2] for r in rows],
        "ratios": ratios,
        "differences_shrink": all(b < a for a, b in zip(diffs, diffs[1:])),
        "contraction_ok": bool(ratios) and all(q >= 1.5 for q in ratios),
    }
    return StudyResult("tau_study", ["n_side", "h", "tau_h", "diff", "ratio"], rows, summary)


def discretization_error_study(cfg: StudyConfig) -> StudyResult:
    """
    L2 distance of each mesh's optimal control to a fine-mesh surrogate.

    The surrogate lives on ``reference_n_side`` (default twice the largest
    mesh); coarse controls are evaluated as P1 functions at its quadrature
    points.  Orders are ``log(e_{2h}/e_h)/log 2`` between consecutive meshes.
    """
    if len(cfg.meshes) < 3:
        raise ValueError("need ≥ 3 meshes")
    ref_n = cfg.reference_n_side or 2 * max(cfg.meshes)
    fine = cfg.problem.build(ref_n)
    u_fine = control_of(fine, solve_reference(fine).z)
    rows = []
    prev = None
    for n in cfg.meshes:
        if n == ref_n:
            err = 0.0
        else:
            spec = cfg.problem.build(n)
            u_h = control_of(spec, solve_reference(spec).z)
            err = l2_error(fine.mesh, u_fine, p1_function(spec.mesh, u_h))
        order = None
        if prev is not None and prev[1] > 0 and err > 0:
            order = math.log(prev[1] / err) / math.log(n / prev[0])
        rows.append((n, 1.0 / n, err, order))
        prev = (n, err)
    orders = [r[3] for r in rows if r[3] is not None]
    summary = {"reference_n_side": ref_n, "orders": orders,
               "min_order": min(orders) if orders else math.nan,
               "order_ok": bool(orders) and min(orders) >= 0.9}
    return StudyResult("error_study", ["n_side", "h", "l2_error", "order"], rows, summary)


def oracle_check(cfg: StudyConfig, subgradient_iters: int = 100_000) -> StudyResult:
    """
    Compare the main solver with an independent oracle on ``cfg.n_side``.

    Enumeration is used when ``n_dof <= 6``, the subgradient method otherwise.
    """
    spec = cfg.problem.build(cfg.n_side)
    rep = _require(run(spec, _solver_config(cfg, kkt_tol=min(cfg.kkt_tol, 1e-10))), "oracle check")
    u_main = project_box(control_of(spec, rep.final), spec.bounds)
    j_main = primal_objective(spec, u_main)
    if spec.n_dof <= MAX_ENUM_DOF:
        sol = enumerate_solve(spec)
    else:
        sol = subgradient_solve(spec, subgradient_iters, u_main=u_main)
    du = float(np.linalg.norm(u_main - sol.u_star))
    row = (cfg.n_side, spec.n_dof, sol.method, du, j_main - sol.objective, sol.certificate)
    return StudyResult("oracle_check",
                       ["n_side", "n_dof", "method", "u_diff", "objective_diff", "certificate"],
                       [row], {"u_diff": du, "objective_diff": j_main - sol.objective,
                               "method": sol.method})

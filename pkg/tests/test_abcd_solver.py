import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from abcd_ocp.abcd_solver import (
    DualIterate,
    ProblemSpec,
    SolverConfig,
    compute_tau_h,
    control_of,
    dual_objective,
    kkt_residual,
    momentum_step,
    mu_subproblem_residual,
    run,
    solve_lambda,
    solve_mu,
    solve_p,
    solve_phat,
    solve_reference,
)
from abcd_ocp.grid_fem import FemOperators
from abcd_ocp.primal_bridge import duality_gap, primal_objective
from abcd_ocp.prox_kit import BoxBounds
from abcd_ocp.sparse_core import SchurSolver, schur_apply


def zero_data(spec):
    n = spec.n_dof
    return spec.with_params(yd=np.zeros(n), yr=np.zeros(n))


def scalar_spec(alpha=1.0, beta=1.0, bounds=(-1.0, 2.0), m=1.0, k=1.0):
    ops = FemOperators.from_dense([[k]], [[m]], [m])
    return ProblemSpec(alpha, beta, BoxBounds(*bounds), np.zeros(1), np.zeros(1), ops)


class TestProblemSpec:
    def test_validation(self, standard):
        spec = standard(4)
        with pytest.raises(ValueError):
            spec.with_params(alpha=0.0)
        with pytest.raises(ValueError):
            spec.with_params(beta=-1.0)
        with pytest.raises(ValueError):
            spec.with_params(yd=np.zeros(3))


class TestDualObjective:
    def test_zero_iterate(self, standard):
        spec = standard(8)
        z = (np.zeros(spec.n_dof),) * 3
        assert abs(dual_objective(spec, z)) <= 1e-13 * (1 + spec.yd @ spec.Myd)

    def test_infeasible_lambda(self, standard):
        spec = standard(4)
        lam = np.zeros(spec.n_dof)
        lam[2] = spec.beta + 1
        assert dual_objective(spec, (lam, np.zeros(spec.n_dof), np.zeros(spec.n_dof))) == math.inf

    def test_zero_data(self, standard):
        spec = zero_data(standard(4))
        assert dual_objective(spec, (np.zeros(spec.n_dof),) * 3) == 0.0

    def test_weak_duality_random(self, mixed, rng):
        spec = mixed(6)
        n = spec.n_dof
        for _ in range(20):
            z = (rng.uniform(-spec.beta, spec.beta, n), rng.standard_normal(n), rng.standard_normal(n))
            u = rng.uniform(spec.bounds.lo, spec.bounds.hi, n)
            j = primal_objective(spec, u)
            assert j + dual_objective(spec, z) >= -1e-9 * (1 + abs(j))


class TestSweep:
    def test_phat_zero_data(self, standard):
        spec = zero_data(standard(6))
        z = np.zeros(spec.n_dof)
        assert not solve_phat(spec, z, z).any()

    @given(st.integers(0, 2**32 - 1))
    def test_phat_residual(self, seed):
        from tests.conftest import STANDARD, build
        spec = build(STANDARD, 8)
        rng = np.random.default_rng(seed)
        lam, mu = rng.standard_normal(spec.n_dof), rng.standard_normal(spec.n_dof)
        p = solve_phat(spec, lam, mu)
        rhs = spec.ops.K @ spec.yd - spec.Myr + spec.ops.M @ (lam + mu) / spec.alpha
        assert np.linalg.norm(schur_apply(spec.ops, spec.alpha, p) - rhs) <= 1e-9 * np.linalg.norm(rhs)

    def test_phat_one_dof_closed_form(self, standard):
        spec = standard(2)
        K, M = spec.ops.K[0, 0], spec.ops.M[0, 0]
        lam, mu = np.array([0.004]), np.array([-0.3])
        expected = (K * spec.yd[0] - M * spec.yr[0] + M / spec.alpha * (lam[0] + mu[0])) / (K * K / M + M / spec.alpha)
        assert solve_phat(spec, lam, mu)[0] == pytest.approx(expected, rel=1e-13)

    def test_phat_cg_path(self, standard):
        spec = standard(8)
        lam, mu = np.full(spec.n_dof, 0.003), np.zeros(spec.n_dof)
        cg = SchurSolver(spec.ops, spec.alpha, method="cg", tol=1e-12)
        assert np.allclose(solve_phat(spec, lam, mu, schur=cg), solve_phat(spec, lam, mu), rtol=1e-8, atol=1e-10)

    def test_lambda_when_w_equals_m(self):
        spec = scalar_spec(beta=0.5)
        assert solve_lambda(spec, np.array([3.0]), np.array([1.0]), np.array([7.0]))[0] == 0.5
        assert solve_lambda(spec, np.array([1.2]), np.array([1.0]), np.array([7.0]))[0] == pytest.approx(0.2)

    def test_lambda_interior_optimality(self, standard, rng):
        spec = standard(6).with_params(beta=1e6)
        n = spec.n_dof
        phat, mu, lam_t = rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n)
        lam = solve_lambda(spec, phat, mu, lam_t)
        M, w = spec.ops.M, spec.ops.w
        r = M @ (lam - phat + mu) + w * (lam - lam_t) - M @ (lam - lam_t)
        assert np.linalg.norm(r) <= 1e-12 * (1 + np.linalg.norm(M @ phat))

    @given(st.floats(-0.01, 0.01))
    def test_lambda_fixed_point(self, c):
        from tests.conftest import STANDARD, build
        spec = build(STANDARD, 5)
        ones = np.ones(spec.n_dof)
        lam = solve_lambda(spec, c * ones, np.zeros(spec.n_dof), c * ones)
        assert np.allclose(lam, c, rtol=0, atol=1e-15)

    @given(st.integers(0, 2**32 - 1))
    def test_lambda_feasible(self, seed):
        from tests.conftest import STANDARD, build
        spec = build(STANDARD, 5)
        rng = np.random.default_rng(seed)
        lam = solve_lambda(spec, *(100 * rng.standard_normal((3, spec.n_dof))))
        assert np.all(np.abs(lam) <= spec.beta)

    def test_p_equals_phat_without_lambda_change(self, mixed, rng):
        spec = mixed(6)
        lam, mu = rng.uniform(-0.01, 0.01, spec.n_dof), rng.standard_normal(spec.n_dof)
        assert np.array_equal(solve_p(spec, lam, mu), solve_phat(spec, lam, mu))

    def test_p_zero_data(self, standard):
        spec = zero_data(standard(4))
        z = np.zeros(spec.n_dof)
        assert not solve_p(spec, z, z).any()


class TestMuStep:
    def test_zero(self, standard):
        spec = standard(4)
        p = np.linspace(-1, 1, spec.n_dof)
        assert np.allclose(solve_mu(spec, p, p, np.zeros(spec.n_dof)), 0.0, atol=1e-300)

    def test_scalar_example(self):
        spec = scalar_spec(alpha=1.0, bounds=(-1.0, 2.0))
        mu = solve_mu(spec, np.array([40.0]), np.array([0.0]), np.array([0.0]))
        assert mu[0] == pytest.approx(9.5, rel=1e-13)

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0))
    def test_optimality_random(self, seed, scale):
        from tests.conftest import MIXED, build
        spec = build(MIXED, 4)
        rng = np.random.default_rng(seed)
        p, lam, mu_t = scale * rng.standard_normal((3, spec.n_dof))
        mu = solve_mu(spec, p, lam, mu_t)
        assert mu_subproblem_residual(spec, mu, p, lam, mu_t) <= 1e-9

    def test_literal_printed_form_fails_optimality(self, mixed, rng):
        """The variant with an extra M on (p - lambda) is not the minimizer."""
        from abcd_ocp.prox_kit import prox_support_weighted
        from abcd_ocp.sparse_core import mass_solve
        spec = mixed(4)
        ops = spec.ops
        p, lam, mu_t = rng.standard_normal((3, spec.n_dof))
        v = ops.M @ mu_t + ops.w * (ops.M @ (p - lam) - mu_t) / ops.gamma
        mu_alt = mass_solve(ops, prox_support_weighted(v, ops, spec.alpha, spec.bounds))
        assert mu_subproblem_residual(spec, mu_alt, p, lam, mu_t) > 1e-3


class TestMomentum:
    def _state(self, z, t=1.0, k=1):
        return DualIterate(*z, *(v.copy() for v in z), t=t, k=k)

    def test_first_steps(self):
        z = tuple(np.arange(3.0) + i for i in range(3))
        zp = tuple(np.zeros(3) for _ in range(3))
        s2 = momentum_step(self._state(z), zp)
        assert s2.t == pytest.approx((1 + math.sqrt(5)) / 2, rel=1e-15)
        assert all(np.array_equal(a, b) for a, b in zip((s2.lam_tilde, s2.p_tilde, s2.mu_tilde), z))
        s3 = momentum_step(self._state(z, t=s2.t), zp)
        assert s3.t == pytest.approx(2.193527, abs=1e-6)
        # beta_2 = (t_2 - 1)/t_3 = 0.2817535...
        assert s3.lam_tilde[1] - 1 == pytest.approx(0.281752, abs=5e-6)

    @given(st.floats(1.0, 1e6))
    def test_stationary_iterate(self, t):
        z = tuple(np.full(2, float(i)) for i in range(3))
        s = momentum_step(self._state(z, t=t), z)
        assert np.array_equal(s.p_tilde, z[1])

    def test_t_lower_bound(self):
        t = 1.0
        for k in range(1, 10000):
            assert t >= (k + 1) / 2
            t = 0.5 * (1 + math.sqrt(1 + 4 * t * t))


class TestKkt:
    def test_at_reference(self, mixed):
        spec = mixed(6)
        ref = solve_reference(spec)
        assert ref.converged
        assert max(kkt_residual(spec, ref.final)) <= 1e-10

    def test_zero_data(self, standard):
        spec = zero_data(standard(4))
        assert kkt_residual(spec, (np.zeros(spec.n_dof),) * 3) == (0.0, 0.0, 0.0)

    def test_eta1_linear_in_p_perturbation(self, mixed, rng):
        spec = mixed(6)
        lam, p, mu = solve_reference(spec).z
        d = rng.standard_normal(spec.n_dof)
        e = [kkt_residual(spec, (lam, p + s * d, mu))[0] for s in (1e-4, 2e-4, 4e-4)]
        assert e[1] / e[0] == pytest.approx(2.0, rel=1e-3)
        assert e[2] / e[1] == pytest.approx(2.0, rel=1e-3)


class TestRun:
    def test_zero_data_stops_at_once(self, standard):
        spec = zero_data(standard(6))
        rep = run(spec)
        assert rep.converged and rep.iterations == 1
        assert not any(v.any() for v in rep.z)

    def test_small_mesh_end_to_end(self, standard):
        spec = standard(4)
        rep = run(spec, SolverConfig(kkt_tol=1e-6))
        assert rep.converged and max(kkt_residual(spec, rep.final)) <= 1e-6
        u_hat = np.clip(control_of(spec, rep.final), spec.bounds.lo, spec.bounds.hi)
        j = primal_objective(spec, u_hat)
        assert duality_gap(spec, rep.final) <= 1e-6 * (1 + abs(j))

    def test_envelope_on_mixed_problem(self, mixed):
        spec = mixed(8)
        ref = solve_reference(spec)
        phi_star = dual_objective(spec, ref.final)
        tau = compute_tau_h(spec, (np.zeros(spec.n_dof),) * 3, ref.z)
        rep = run(spec, SolverConfig(kkt_tol=1e-10))
        k = np.arange(1, rep.iterations + 1)
        assert np.all(np.array(rep.history["phi"]) - phi_star <= 4 * tau / (k + 1) ** 2)

    def test_lambda_feasible_every_iteration(self, mixed):
        spec = mixed(5)
        for kmax in (1, 2, 5, 13):
            rep = run(spec, SolverConfig(kkt_tol=1e-14, max_iter=kmax))
            assert np.all(np.abs(rep.final.lam) <= spec.beta)
            assert rep.iterations == kmax and not rep.converged

    def test_deterministic(self, mixed):
        spec = mixed(6)
        a = run(spec, SolverConfig(kkt_tol=1e-8)).to_dict(timing=False)
        b = run(spec, SolverConfig(kkt_tol=1e-8)).to_dict(timing=False)
        assert json.dumps(a) == json.dumps(b)

    def test_report_fields(self, standard):
        spec = standard(4)
        doc = run(spec, SolverConfig(kkt_tol=1e-6)).to_dict(spec)
        for key in ("iterations", "converged", "kkt_tol"):
            assert key in doc
        for key in ("phi", "eta1", "eta2", "eta3", "gap"):
            assert len(doc["history"][key]) == doc["iterations"]
        assert set(doc["final"]) == {"lambda", "p", "mu"}
        assert set(doc["primal"]) >= {"u", "u_hat", "y", "objective"}
        json.dumps(doc)

    def test_cg_and_direct_agree(self, mixed):
        spec = mixed(6)
        a = run(spec, SolverConfig(kkt_tol=1e-9))
        b = run(spec, SolverConfig(kkt_tol=1e-9, schur_method="cg"))
        assert b.converged and b.linear_solves["schur_cg_iterations"] > 0
        assert np.linalg.norm(control_of(spec, a.final) - control_of(spec, b.final)) <= 1e-6

    def test_infeasible_start_rejected(self, standard):
        spec = standard(4)
        n = spec.n_dof
        with pytest.raises(ValueError):
            run(spec, SolverConfig(z0=(np.ones(n), np.zeros(n), np.zeros(n))))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(kkt_tol=0.0)
        with pytest.raises(ValueError):
            SolverConfig(max_iter=0)

    def test_subproblem_check_mode(self, mixed):
        spec = mixed(3)
        rep = run(spec, SolverConfig(kkt_tol=1e-8, check_subproblems=True))
        assert max(rep.history["sgs_residual"]) <= 1e-10
        assert max(rep.history["mu_residual"]) <= 1e-9

    def test_reference_stall_is_accepted_at_floor(self, standard):
        spec = standard(32)
        ref = solve_reference(spec)
        assert ref.best_eta <= 1e-8
        assert ref.converged or ref.stalled


class TestTau:
    def test_zero_at_solution(self, mixed):
        spec = mixed(6)
        zs = solve_reference(spec).z
        assert compute_tau_h(spec, zs, zs) == 0.0

    def test_mu_block_alone(self, mixed, rng):
        spec = mixed(6)
        n = spec.n_dof
        dm = rng.standard_normal(n)
        tau = compute_tau_h(spec, (np.zeros(n), rng.standard_normal(n), dm), (np.zeros(n),) * 3)
        Md = spec.ops.M @ dm
        assert tau == pytest.approx(spec.ops.gamma / (2 * spec.alpha) * Md @ (spec.ops.w_inv * Md), rel=1e-12)

    def test_positive_away_from_solution(self, mixed, rng):
        spec = mixed(6)
        n = spec.n_dof
        zs = solve_reference(spec).z
        assert compute_tau_h(spec, (np.zeros(n),) * 3, zs) > 0
        assert compute_tau_h(spec, (0.1 * rng.standard_normal(n), zs[1], zs[2]), zs) > 0

    def test_lambda_block_dense(self, mixed, rng):
        from abcd_ocp.abcd_solver import lambda_prox_operator
        spec = mixed(4)
        n = spec.n_dof
        dl = rng.standard_normal(n)
        tau = compute_tau_h(spec, (dl, np.zeros(n), np.zeros(n)), (np.zeros(n),) * 3)
        assert tau == pytest.approx(dl @ lambda_prox_operator(spec) @ dl / (2 * spec.alpha), rel=1e-10)

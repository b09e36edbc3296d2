import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from abcd_ocp.abcd_solver import SolverConfig, run, solve_reference
from abcd_ocp.primal_bridge import (
    STATE_TOL,
    duality_gap,
    primal_objective,
    recover_control,
    solve_state,
)


class TestRecover:
    def test_zero_iterate(self, mixed):
        spec = mixed(5)
        spec = spec.with_params(yr=np.linspace(0, 1, spec.n_dof))
        pair = recover_control(spec, (np.zeros(spec.n_dof),) * 3)
        assert not pair.u.any() and not pair.u_hat.any()
        y_exp = np.linalg.solve(spec.ops.K.toarray(), spec.ops.M @ spec.yr)
        assert np.allclose(pair.y, y_exp, rtol=1e-9, atol=1e-12)

    @given(st.floats(-2, 2))
    def test_constant_control(self, c):
        from tests.conftest import STANDARD, build
        spec = build(STANDARD, 4)
        rng = np.random.default_rng(0)
        lam, mu = rng.uniform(-0.01, 0.01, spec.n_dof), rng.standard_normal(spec.n_dof)
        p = spec.alpha * c + lam + mu
        pair = recover_control(spec, (lam, p, mu))
        assert np.allclose(pair.u, c, atol=1e-12)
        assert np.allclose(pair.u_hat, pair.u, atol=1e-12)

    def test_limit_is_feasible(self, mixed):
        spec = mixed(8)
        pair = recover_control(spec, solve_reference(spec).final)
        assert np.linalg.norm(pair.u - pair.u_hat) <= 1e-8 * (1 + np.linalg.norm(pair.u))


class TestState:
    def test_cancelling_source(self, mixed):
        spec = mixed(6)
        spec = spec.with_params(yr=np.sin(np.arange(spec.n_dof)))
        assert np.allclose(solve_state(spec, -spec.yr), 0.0, atol=1e-300)

    @given(st.integers(0, 2**32 - 1))
    def test_residual(self, seed):
        from tests.conftest import MIXED, build
        spec = build(MIXED, 12)
        u = np.random.default_rng(seed).standard_normal(spec.n_dof)
        y = solve_state(spec, u)
        b = spec.ops.M @ (u + spec.yr)
        assert np.linalg.norm(spec.ops.K @ y - b) <= STATE_TOL * np.linalg.norm(b) * 1.0001

    def test_superposition(self, mixed, rng):
        spec = mixed(8)
        spec = spec.with_params(yr=rng.standard_normal(spec.n_dof))
        u1, u2 = rng.standard_normal((2, spec.n_dof))
        lhs = solve_state(spec, u1 + u2)
        rhs = solve_state(spec, u1) + solve_state(spec, u2) - solve_state(spec, np.zeros(spec.n_dof))
        assert np.allclose(lhs, rhs, atol=1e-9)

    def test_length_check(self, mixed):
        with pytest.raises(ValueError):
            solve_state(mixed(4), np.zeros(2))


class TestObjective:
    def test_zero_control(self, standard):
        spec = standard(8)
        assert primal_objective(spec, np.zeros(spec.n_dof)) == pytest.approx(0.5 * spec.yd @ spec.Myd, rel=1e-14)

    def test_infeasible(self, standard):
        spec = standard(4)
        u = np.zeros(spec.n_dof)
        u[0] = spec.bounds.hi + 1e-9
        assert primal_objective(spec, u) == math.inf

    def test_strong_convexity_gap(self, mixed, rng):
        spec = mixed(8)
        u_star = recover_control(spec, solve_reference(spec).final).u_hat
        j_star = primal_objective(spec, u_star)
        for _ in range(10):
            u = np.clip(u_star + 0.3 * rng.standard_normal(spec.n_dof), spec.bounds.lo, spec.bounds.hi)
            d = u - u_star
            assert primal_objective(spec, u) - j_star >= 0.5 * spec.alpha * d @ (spec.ops.M @ d) - 1e-10


class TestGap:
    def test_zero_data(self, standard):
        spec = standard(4)
        spec = spec.with_params(yd=np.zeros(spec.n_dof))
        assert duality_gap(spec, (np.zeros(spec.n_dof),) * 3) == 0.0

    @pytest.mark.parametrize("n", [6, 10])
    def test_vanishes_at_solution(self, mixed, n):
        spec = mixed(n)
        rep = run(spec, SolverConfig(kkt_tol=1e-10))
        j = primal_objective(spec, recover_control(spec, rep.final).u_hat)
        assert abs(duality_gap(spec, rep.final)) <= 1e-8 * (1 + abs(j))

    def test_nonnegative_along_run(self, mixed):
        spec = mixed(8)
        rep = run(spec, SolverConfig(kkt_tol=1e-10))
        gaps = np.array(rep.history["gap"])
        assert gaps.min() >= -1e-9 * (1 + abs(rep.history["phi"][-1]))

    def test_rate_quantities_bounded(self, mixed):
        """k * gap and sqrt(k) * ||u_hat^k - u*|| stay bounded over the history."""
        spec = mixed(8)
        ref = solve_reference(spec)
        rep = run(spec, SolverConfig(kkt_tol=1e-10, reference_z=ref.z))
        k = np.arange(1, rep.iterations + 1)
        kg = k * np.array(rep.history["gap"])
        ku = np.sqrt(k) * np.array(rep.history["u_hat_dist"])
        half = rep.iterations // 2
        assert kg[half:].max() <= kg.max() and np.argmax(kg) < half
        assert np.argmax(ku) < half

import numpy as np
import pytest

from ileqg import (
    JacobianOracle,
    conjgrad,
    dual_solve_final_state,
    linearize,
    pendulum_costs,
    pendulum_system,
    reg_step_closed_form,
    solve_leqg,
)
from ileqg.dualcg import NegativeCurvature
from ileqg.systems import flat
from ileqg.validate import feasible_theta, model_as_instance, random_lq_model


def final_state_instance(rng, tau=5, d=2, p=1):
    model = random_lq_model(rng, tau, d, p, additive=True, final_state_only=True)
    return model, *model_as_instance(model)


# ---------------------------------------------------------------------------
# oracle sweeps
# ---------------------------------------------------------------------------


def test_adjoint_consistency(rng):
    for _ in range(10):
        model, _, _ = final_state_instance(rng, tau=int(rng.integers(1, 8)), d=3, p=2)
        oracle = JacobianOracle(model)
        z = rng.standard_normal(3)
        v = rng.standard_normal((model.horizon, 2))
        w = rng.standard_normal((model.horizon, 2))
        lhs_u = z @ oracle.jvp_u(v)
        rhs_u = flat(oracle.vjp_u(z)) @ flat(v)
        lhs_w = z @ oracle.jvp_w(w)
        rhs_w = flat(oracle.vjp_w(z)) @ flat(w)
        scale = 1.0 + abs(lhs_u) + abs(lhs_w)
        assert abs(lhs_u - rhs_u) < 1e-10 * scale
        assert abs(lhs_w - rhs_w) < 1e-10 * scale


def test_oracle_counts_sweeps():
    model = random_lq_model(np.random.default_rng(0), 3, 2, 1, additive=True)
    oracle = JacobianOracle(model)
    oracle.reverse(np.ones(2))
    assert oracle.calls == 1  # one reverse sweep serves both vjps
    oracle.forward(np.ones((3, 1)), np.ones((3, 1)))
    assert oracle.calls == 2  # one forward sweep serves both jvps


# ---------------------------------------------------------------------------
# conjugate gradients
# ---------------------------------------------------------------------------


def test_conjgrad_identity_single_iteration():
    res = conjgrad(lambda v: v, np.array([3.0, -1.0, 2.0]))
    assert res.iterations == 1
    assert np.array_equal(res.x, np.array([3.0, -1.0, 2.0]))


def test_conjgrad_two_by_two():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    res = conjgrad(lambda v: A @ v, np.array([1.0, 1.0]))
    assert np.abs(res.x - np.array([0.4, 0.2])).max() < 1e-12
    assert res.residual_norm < 1e-12


def test_conjgrad_matches_dense_solve(rng):
    F = rng.standard_normal((50, 50))
    A = F @ F.T + 0.5 * np.eye(50)
    b = rng.standard_normal(50)
    res = conjgrad(lambda v: A @ v, b)
    ref = np.linalg.solve(A, b)
    assert np.abs(res.x - ref).max() < 1e-8 * max(1.0, np.abs(ref).max())
    assert res.converged


def test_conjgrad_negative_curvature_raises():
    A = np.diag([1.0, -1.0])
    with pytest.raises(NegativeCurvature):
        conjgrad(lambda v: A @ v, np.array([1.0, 1.0]))


# ---------------------------------------------------------------------------
# dual step vs the dynamic-programming step
# ---------------------------------------------------------------------------


def test_dual_step_matches_dp_on_random_instances(rng):
    for _ in range(20):
        tau = int(rng.integers(2, 7))
        model, sysm, costs = final_state_instance(rng, tau=tau, d=2, p=1)
        theta = feasible_theta(model, 1.0, 0.4)
        gamma = float(rng.uniform(0.5, 8.0))
        U = np.zeros((tau, 1))
        sol = solve_leqg(linearize(sysm, costs, U), theta, 1.0, 1.0 / gamma)
        dual = dual_solve_final_state(sysm, costs, U, theta, 1.0, gamma)
        assert dual.feasible
        scale = max(1.0, np.abs(dual.controls).max())
        assert np.abs((U + sol.v_opt) - dual.controls).max() < 1e-6 * scale


def test_dual_step_matches_dp_on_pendulum_iterates(rng):
    sysm = pendulum_system(delta=0.05, horizon=30)
    costs = pendulum_costs(0.1, 0.01, delta=0.05, horizon=30)
    theta, sigma, gamma = 2.0, 0.1, 4.0
    for _ in range(20):
        U = 0.3 * rng.standard_normal((30, 1))
        model = linearize(sysm, costs, U)
        sol = solve_leqg(model, theta, sigma, 1.0 / gamma)
        dual = dual_solve_final_state(sysm, costs, U, theta, sigma, gamma, model=model)
        assert dual.feasible
        scale = max(1.0, np.abs(dual.controls).max())
        assert np.abs((U + sol.v_opt) - dual.controls).max() < 1e-6 * scale


def test_dual_theta_zero_matches_gauss_newton_step(rng):
    model, sysm, costs = final_state_instance(rng, tau=5)
    U = np.zeros((5, 1))
    gamma = 2.0
    sol = solve_leqg(linearize(sysm, costs, U), 1e-15, 1.0, 1.0 / gamma)
    dual = dual_solve_final_state(sysm, costs, U, 1e-15, 1.0, gamma)
    assert np.abs((U + sol.v_opt) - dual.controls).max() < 1e-8


def test_dual_matches_closed_form_step(rng):
    model, sysm, costs = final_state_instance(rng, tau=4)
    theta = feasible_theta(model, 1.0, 0.4)
    U = np.zeros((4, 1))
    dual = dual_solve_final_state(sysm, costs, U, theta, 1.0, 3.0)
    direct = reg_step_closed_form(sysm, costs, U, theta, 1.0, 3.0)
    assert np.abs(dual.controls - direct).max() < 1e-8 * max(1.0, np.abs(direct).max())


def test_dual_infeasibility_consistent_with_dp(rng):
    # At a single stage the dual condition H^-1 > s BB' and the stage-wise
    # condition 1/s > lambda_max(C'P C) are the same statement, so the two
    # solvers must agree on both sides of the boundary.
    found = 0
    for _ in range(20):
        model, sysm, costs = final_state_instance(rng, tau=1)
        base = feasible_theta(model, 1.0, 1.0)
        for frac in (0.6, 1.5):
            theta = frac * base
            dual = dual_solve_final_state(sysm, costs, np.zeros((1, 1)), theta, 1.0, np.inf)
            sol = solve_leqg(linearize(sysm, costs, np.zeros((1, 1))), theta, 1.0, 0.0)
            assert dual.feasible == sol.feasible == (frac < 1.0)
            found += not dual.feasible
    assert found == 20


def test_dual_and_dp_agree_when_final_stage_violates(rng):
    # multi-stage instance whose violation sits in the last transition:
    # lambda_max(C_{tau-1}' H_tau C_{tau-1}) > 1/s trips both solvers
    model, sysm, costs = final_state_instance(rng, tau=4)
    M = model.C[-1].T @ model.H[-1] @ model.C[-1]
    lam = float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])
    theta = 1.3 / lam
    dual = dual_solve_final_state(sysm, costs, np.zeros((4, 1)), theta, 1.0, np.inf)
    sol = solve_leqg(linearize(sysm, costs, np.zeros((4, 1))), theta, 1.0, 0.0)
    assert not dual.feasible
    assert not sol.feasible
    assert sol.failed_stage == 3


def test_oracle_call_budget(rng):
    per_gradient = 2
    for _ in range(10):
        tau = int(rng.integers(2, 6))
        d = int(rng.integers(1, 4))
        model = random_lq_model(
            rng, tau, d, 1, additive=True, final_state_only=True
        )
        sysm, costs = model_as_instance(model)
        theta = feasible_theta(model, 1.0, 0.4)
        dual = dual_solve_final_state(sysm, costs, np.zeros((tau, 1)), theta, 1.0, 2.0)
        assert dual.feasible
        # 4d feasibility check + 2 for grad f(0) + 2 per CG matvec + 1 mapping
        expected = 4 * d + per_gradient + per_gradient * dual.cg_iterations + 1
        assert dual.oracle_calls == expected
        assert dual.oracle_calls <= 10 * d + 1


def test_feasibility_check_costs_exactly_4d(rng):
    model, sysm, costs = final_state_instance(rng, tau=4, d=3)
    theta = 2.0 * feasible_theta(model, 1.0, 1.0)
    dual = dual_solve_final_state(sysm, costs, np.zeros((4, 1)), theta, 1.0, 1.0)
    assert not dual.feasible
    assert dual.oracle_calls == 4 * 3


def test_pendulum_step_within_paper_budget():
    sysm = pendulum_system(delta=0.05, horizon=50)
    costs = pendulum_costs(0.1, 0.01, delta=0.05, horizon=50)
    dual = dual_solve_final_state(sysm, costs, np.zeros((50, 1)), 2.0, 0.1, 16.0)
    assert dual.feasible
    assert dual.oracle_calls <= 10 * 2 + 1


def test_dual_requires_final_state_cost(rng):
    model = random_lq_model(rng, 3, 2, 1, additive=True)  # costs on all stages
    sysm, costs = model_as_instance(model)
    with pytest.raises(ValueError):
        dual_solve_final_state(sysm, costs, np.zeros((3, 1)), 0.1, 1.0, 1.0)

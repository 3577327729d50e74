import math

import cvxpy as cp
import numpy as np
import pytest

from cpo_reloc.estimation import EstimatedBatch
from cpo_reloc.nn import FisherOperator, GaussianPolicy, MlpSpec, log_prob
from cpo_reloc.optim import (
    CostConstraintCfg,
    OptimizerAbort,
    TrustRegionCfg,
    conjugate_gradient,
    cost_surrogate,
    cpo_direction,
    cpo_step,
    empirical_kl,
    solve_cpo_dual,
    surrogate_loss,
    trpo_rp_step,
    trpo_step,
)
from gradcheck import numeric_grad

SPEC = MlpSpec(3, (4,), 2)  # 28 parameters with the log-std


def synthetic_batch(policy, n=64, seed=0, cost_scale=0.01, jc=0.1, nan_adv=False):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, SPEC.input_dim))
    actions = policy.mean(obs) + policy.std * rng.normal(size=(n, SPEC.output_dim))
    logps = log_prob(policy, obs, actions)
    adv = rng.normal(size=n) + actions[:, 0]
    adv = (adv - adv.mean()) / adv.std()
    if nan_adv:
        adv[3] = np.nan
    cadv = cost_scale * (rng.normal(size=n) + actions[:, 1])
    starts = np.arange(0, n, 8)
    episode_costs = np.full(starts.size, jc)
    return EstimatedBatch(obs, actions, logps, adv, cadv, np.zeros(n), np.zeros(n), episode_costs, starts)


def policy(seed=0):
    return GaussianPolicy.initial(SPEC, seed)


def dense_fisher(pol, obs, damping):
    f = FisherOperator(pol, obs, damping)
    return np.column_stack([f(e) for e in np.eye(len(pol.params))])


# --- conjugate gradient ----------------------------------------------------

@pytest.mark.parametrize("n", [2, 5, 20])
def test_cg_matches_dense_solve(n):
    for seed in range(10):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(n, n))
        H = a @ a.T + 0.5 * np.eye(n)
        b = rng.normal(size=n)
        x = conjugate_gradient(lambda v: H @ v, b, iters=n * 5, tol=1e-14)
        np.testing.assert_allclose(x, np.linalg.solve(H, b), rtol=1e-8, atol=1e-10)


def test_cg_stops_on_relative_residual_and_handles_zero_rhs():
    calls = []

    def op(v):
        calls.append(1)
        return 2.0 * v

    x = conjugate_gradient(op, np.array([1.0, 2.0]), iters=10)
    np.testing.assert_allclose(x, [0.5, 1.0])
    assert len(calls) == 1
    np.testing.assert_array_equal(conjugate_gradient(op, np.zeros(3)), np.zeros(3))


def test_cg_rejects_indefinite_operator():
    with pytest.raises(FloatingPointError, match="positive definite"):
        conjugate_gradient(lambda v: -v, np.ones(3))


# --- CPO dual --------------------------------------------------------------

def cvx_reference(g, b, c, H, delta):
    """The constrained linear program over the trust ellipsoid, or the recovery problem if it is empty."""
    x = cp.Variable(g.size)
    # default tolerances leave errors near 1e-3, the size of the tolerance under test
    tight = dict(solver="CLARABEL", tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    ball = cp.norm(np.linalg.cholesky(H).T @ x) <= math.sqrt(2 * delta)  # 0.5 x^T H x <= delta
    feas = cp.Problem(cp.Minimize(b @ x), [ball])
    feas.solve(**tight)
    if feas.value + c > 1e-9:
        return x.value.copy(), "infeasible"
    prob = cp.Problem(cp.Maximize(g @ x), [ball, b @ x + c <= 0])
    prob.solve(**tight)
    return x.value.copy(), None


def random_instance(rng):
    n = int(rng.integers(2, 6))
    a = rng.normal(size=(n, n))
    H = a @ a.T + 0.3 * np.eye(n)
    g, b = rng.normal(size=n), rng.normal(size=n)
    delta = float(rng.uniform(0.005, 0.05))
    # spread c so that all three cases occur: reachable when |c| <= sqrt(2 delta s)
    s = float(b @ np.linalg.solve(H, b))
    c = float(rng.uniform(-1.5, 1.5) * math.sqrt(2 * delta * s))
    return g, b, c, H, delta


def test_cpo_dual_matches_convex_solver():
    rng = np.random.default_rng(2024)
    cases = {"inactive": 0, "active": 0, "infeasible": 0}
    for _ in range(150):
        g, b, c, H, delta = random_instance(rng)
        v_g, v_b = np.linalg.solve(H, g), np.linalg.solve(H, b)
        x, sol = cpo_direction(v_g, v_b, g, b, c, delta)
        ref, kind = cvx_reference(g, b, c, H, delta)
        cases[sol.case] += 1
        assert (sol.case == "infeasible") == (kind == "infeasible")
        scale = np.linalg.norm(ref)
        np.testing.assert_allclose(x, ref, rtol=1e-3, atol=1e-3 * scale)
        if sol.case != "infeasible":
            assert g @ x == pytest.approx(g @ ref, rel=1e-3, abs=1e-6)
            assert 0.5 * x @ H @ x <= delta * (1 + 1e-9)
            assert b @ x + c <= 1e-9
    assert min(cases.values()) >= 20, cases


def brute_force_2d(g, b, c, H, delta, n_angles=200_000):
    """Best feasible point on the trust ellipse found by scanning angles (the objective is linear)."""
    L = np.linalg.cholesky(H)
    theta = np.linspace(0, 2 * np.pi, n_angles, endpoint=False)
    u = np.stack([np.cos(theta), np.sin(theta)]) * math.sqrt(2 * delta)
    pts = np.linalg.solve(L.T, u).T  # 0.5 x^T H x = delta for every column
    feasible = pts @ b + c <= 0
    if not feasible.any():
        return pts[np.argmin(pts @ b)]
    # the optimum may sit on the chord where the half-plane cuts the ellipse; include its endpoints
    cand = pts[feasible]
    return cand[np.argmax(cand @ g)]


def test_cpo_dual_matches_angle_scan_in_two_dimensions():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = 2
        a = rng.normal(size=(n, n))
        H = a @ a.T + 0.3 * np.eye(n)
        g, b = rng.normal(size=n), rng.normal(size=n)
        delta = 0.01
        c = float(rng.uniform(-0.2, 0.2))
        x, sol = cpo_direction(np.linalg.solve(H, g), np.linalg.solve(H, b), g, b, c, delta)
        ref = brute_force_2d(g, b, c, H, delta)
        if sol.case == "infeasible":
            assert b @ x == pytest.approx(b @ ref, rel=1e-3)
        elif 0.5 * x @ H @ x >= delta * (1 - 1e-6):
            # optimum on the ellipse: the scan finds it
            assert g @ x == pytest.approx(g @ ref, rel=1e-3, abs=1e-6)
        else:  # optimum strictly inside the ellipse is impossible for a linear objective
            pytest.fail("dual step is strictly inside the trust region")


def test_dual_inactive_case_is_the_trpo_step():
    H = np.diag([2.0, 1.0])
    g, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    x, sol = cpo_direction(np.linalg.solve(H, g), np.linalg.solve(H, b), g, b, -1.0, 0.01)
    assert sol.case == "inactive" and sol.nu == 0.0
    v = np.linalg.solve(H, g)
    np.testing.assert_allclose(x, math.sqrt(2 * 0.01 / (g @ v)) * v, rtol=1e-12)


def test_dual_one_dimensional_active_case():
    # maximize x s.t. x + c <= 0 with c = -0.05 inside a ball of radius sqrt(2 delta) = 0.1414
    x, sol = cpo_direction(np.array([1.0]), np.array([1.0]), np.array([1.0]), np.array([1.0]), -0.05, 0.01)
    assert sol.case == "active"
    np.testing.assert_allclose(x, [0.05], rtol=1e-12)


def test_dual_infeasible_case_is_pure_cost_descent():
    H = np.eye(3)
    b = np.array([0.0, 0.0, 1.0])
    x, sol = cpo_direction(np.ones(3), b, np.ones(3), b, 1.0, 0.01)
    assert sol.case == "infeasible"
    np.testing.assert_allclose(x, -math.sqrt(0.02) * b)
    assert 0.5 * x @ H @ x == pytest.approx(0.01)


def test_dual_with_vanishing_cost_gradient():
    assert solve_cpo_dual(1.0, 0.0, 0.0, -0.1, 0.01).case == "inactive"
    assert solve_cpo_dual(1.0, 0.0, 0.0, 0.1, 0.01).case == "infeasible"


# --- TRPO ------------------------------------------------------------------

def test_trpo_full_step_matches_closed_form():
    pol = policy(1)
    batch = synthetic_batch(pol, seed=1)
    cfg = TrustRegionCfg(cg_iters=200, cg_residual_tol=1e-14)
    params, report = trpo_step(pol, batch, cfg)
    assert report.step_kind == "full"
    flat = pol.params.flat
    g = numeric_grad(lambda w: float(surrogate_loss(SPEC, w, batch)), flat)
    F = dense_fisher(pol, batch.obs, cfg.damping)
    x = np.linalg.solve(F, g)
    expected = flat + math.sqrt(2 * cfg.delta / (x @ F @ x)) * x
    np.testing.assert_allclose(params.flat, expected, rtol=1e-5, atol=1e-8)
    assert report.kl_after <= cfg.delta
    assert report.surrogate_after > report.surrogate_before
    assert report.kl_after == pytest.approx(empirical_kl(pol, params.flat, batch.obs))


def test_trpo_line_search_backtracks_when_step_is_too_large():
    pol = policy(2)
    batch = synthetic_batch(pol, seed=2)
    # damping makes the quadratic model underestimate the true KL, forcing backtracking
    _, report = trpo_step(pol, batch, TrustRegionCfg(delta=0.05, damping=5.0))
    assert report.step_kind.startswith("backtracked") or report.step_kind == "full"
    assert report.kl_after <= 0.05


def test_trpo_rejects_when_no_improvement_is_possible():
    pol = policy(3)
    batch = synthetic_batch(pol, seed=3)
    zero = EstimatedBatch(batch.obs, batch.actions, batch.logps, np.zeros(len(batch)), batch.cost_advantages,
                          batch.reward_returns, batch.cost_returns, batch.episode_costs, batch.episode_starts)
    params, report = trpo_step(pol, zero)
    assert report.step_kind == "rejected"
    assert params == pol.params


def test_trpo_rp_is_labelled_trpo():
    pol = policy(4)
    batch = synthetic_batch(pol, seed=4)
    p1, r1 = trpo_step(pol, batch)
    p2, r2 = trpo_rp_step(pol, batch)
    assert p1 == p2
    assert (r1.algorithm, r2.algorithm) == ("trpo", "trpo_rp")


def test_non_finite_gradient_aborts():
    pol = policy(5)
    with pytest.raises(OptimizerAbort, match="non-finite"):
        trpo_step(pol, synthetic_batch(pol, seed=5, nan_adv=True))


# --- CPO -------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_cpo_equals_trpo_bitwise_on_zero_cost_batches(seed):
    pol = policy(seed)
    b = synthetic_batch(pol, seed=seed)
    zero = EstimatedBatch(b.obs, b.actions, b.logps, b.advantages, np.zeros(len(b)), b.reward_returns,
                          np.zeros(len(b)), np.zeros_like(b.episode_costs), b.episode_starts)
    p_cpo, r_cpo = cpo_step(pol, zero, TrustRegionCfg(), CostConstraintCfg(0.25, 0.995))
    p_trpo, r_trpo = trpo_step(pol, zero, TrustRegionCfg())
    assert np.array_equal(p_cpo.flat, p_trpo.flat)
    assert r_cpo.step_kind == r_trpo.step_kind


def test_cpo_feasible_update_respects_both_constraints():
    pol = policy(6)
    batch = synthetic_batch(pol, seed=6, jc=0.2, cost_scale=0.05)
    cost_cfg = CostConstraintCfg(0.25, 0.995)
    params, report = cpo_step(pol, batch, TrustRegionCfg(), cost_cfg)
    assert report.feasible_start and report.accepted
    assert report.kl_after <= 0.01
    assert report.surrogate_after > report.surrogate_before
    assert float(cost_surrogate(SPEC, params.flat, batch)) <= 0.25 + cost_cfg.slack


def test_cpo_active_constraint_step_lands_on_the_cost_limit():
    pol = policy(7)
    batch = synthetic_batch(pol, seed=7, jc=0.249, cost_scale=0.5)
    cfg = TrustRegionCfg(cg_iters=200, cg_residual_tol=1e-14)
    params, report = cpo_step(pol, batch, cfg, CostConstraintCfg(0.25, 0.995, slack_fraction=0.0))
    assert report.case == "active"
    if report.step_kind == "full":
        # the linearized cost is pinned at the limit, the true surrogate is close to it
        assert float(cost_surrogate(SPEC, params.flat, batch)) == pytest.approx(0.25, abs=5e-3)


def test_cpo_recovers_from_an_infeasible_start():
    pol = policy(8)
    batch = synthetic_batch(pol, seed=8, jc=5.0, cost_scale=0.01)
    params, report = cpo_step(pol, batch, TrustRegionCfg(), CostConstraintCfg(0.25, 0.995))
    assert report.case == "infeasible"
    assert report.step_kind == "recovery"
    assert not report.feasible_start
    assert float(cost_surrogate(SPEC, params.flat, batch)) < batch.jc
    assert report.kl_after <= 0.01


def test_cost_surrogate_equals_expected_cost_at_the_old_policy():
    pol = policy(9)
    batch = synthetic_batch(pol, seed=9, jc=0.37)
    assert float(cost_surrogate(SPEC, pol.params.flat, batch)) == pytest.approx(0.37, abs=1e-12)
    assert float(surrogate_loss(SPEC, pol.params.flat, batch)) == pytest.approx(batch.advantages.mean(), abs=1e-12)


def test_update_report_row_has_every_column():
    pol = policy(10)
    _, report = cpo_step(pol, synthetic_batch(pol, seed=10))
    row = report.row()
    assert set(row) >= {"step_kind", "case", "kl_after", "surrogate_before", "surrogate_after",
                        "expected_cost_before", "expected_cost_after_estimate", "feasible_start"}


@pytest.mark.parametrize("kwargs", [dict(delta=0.0), dict(cg_iters=0), dict(backtrack_ratio=1.0),
                                    dict(damping=-1.0)])
def test_trust_region_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrustRegionCfg(**kwargs)

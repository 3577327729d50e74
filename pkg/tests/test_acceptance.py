"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The training-based criteria share runs through ``trained``; the whole module
trains 37 desk-scale runs and takes the better part of an hour on one core.
"""

import functools
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from cpo_reloc import autodiff as ad
from cpo_reloc.estimation import EstimatedBatch
from cpo_reloc.geometry import CylinderConstraint, axial_parameter, evaluate, perpendicular_distance
from cpo_reloc.harness.config import ExperimentConfig
from cpo_reloc.harness.rollout import evaluate as evaluate_policy
from cpo_reloc.harness.train import train
from cpo_reloc.nn import FisherOperator
from cpo_reloc.optim import CostConstraintCfg, TrustRegionCfg, cpo_direction, cpo_step, trpo_step
from gradcheck import numeric_grad, numeric_jvp
from test_autodiff import PRIMITIVES
from test_geometry import dot_product_form, line_minimizer, random_rotation, random_triples
from test_nn import MEDIUM, SMALL, dense_kl_hessian, random_policy
from test_optim import brute_force_2d, cvx_reference, policy, random_instance, synthetic_batch

SEEDS = (0, 1, 2)
BASE = ExperimentConfig()


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    assert ok, line


@functools.lru_cache(maxsize=None)
def trained(algorithm: str, r: float, cl: float, seed: int):
    """Train one default-budget run and evaluate it on 500 deterministic rollouts."""
    cfg = BASE.with_(algorithm=algorithm, constraint__r=r, constraint__cl=cl, training__seed=seed)
    metrics = train(cfg)
    assert metrics.error is None, metrics.error
    ev = evaluate_policy(metrics.policy, 500, cfg.constraint, cfg.env, seed)
    return metrics, ev


# --- 1-4, 6, 7: exact properties -------------------------------------------

def test_criterion_01_geometry_matches_line_minimizer():
    start = time.perf_counter()
    triples = random_triples(1000, seed=11)
    worst_d = worst_t = 0.0
    for x_h, x_b, x in triples:
        cons = CylinderConstraint(x_h, x_b, r=0.05)
        d_ref, t_ref = line_minimizer(x_h, x_b, x)
        worst_d = max(worst_d, abs(perpendicular_distance(cons, x) - d_ref))
        worst_t = max(worst_t, abs(axial_parameter(cons, x) - t_ref))
    rng = np.random.default_rng(12)
    worst_iso = 0.0
    for x_h, x_b, x in triples:
        rot, shift = random_rotation(rng), rng.uniform(-5, 5, 3)
        a = CylinderConstraint(x_h, x_b, r=0.05)
        b = CylinderConstraint(rot @ x_h + shift, rot @ x_b + shift, r=0.05)
        y = rot @ x + shift
        worst_iso = max(worst_iso, abs(perpendicular_distance(a, x) - perpendicular_distance(b, y)),
                        abs(axial_parameter(a, x) - axial_parameter(b, y)))
    elapsed = time.perf_counter() - start
    ok = worst_d <= 1e-9 and worst_t <= 1e-9 and worst_iso <= 1e-9 and elapsed < 5.0
    record(1, ok, f"1000 triples: max |d err| {worst_d:.1e}, max |t err| {worst_t:.1e}, "
                  f"isometry {worst_iso:.1e} (atol 1e-9), {elapsed:.2f} s (< 5 s)")


def test_criterion_02_quadruple_product_identity():
    worst = 0.0
    for x_h, x_b, x in random_triples(1000, seed=11):
        u = x_b - x_h
        cross = np.cross(u, x_h - x)
        ref = cross @ cross / (u @ u)
        worst = max(worst, abs(dot_product_form(x_h, x_b, x) - ref) / max(abs(ref), 1e-300))
    record(2, worst <= 1e-9, f"max relative difference {worst:.1e} over 1000 triples (rtol 1e-9)")


def test_criterion_03_double_violation_costs_twice():
    res = evaluate(CylinderConstraint([0, 0, 0], [1, 0, 0], r=0.05, c=0.01), [1.5, 0.2, 0.0])
    record(3, res.count == 2 and res.cost == 0.02, f"count {res.count}, cost {res.cost!r} (expected 0.02)")


def _close(a, b, rtol=1e-4, atol=1e-7):
    return bool(np.allclose(a, b, rtol=rtol, atol=atol))


def test_criterion_04_gradients_and_fisher_products():
    failures = []
    for name in sorted(PRIMITIVES):
        for seed in range(100):
            rng = np.random.default_rng([seed, 4])
            fn, x = PRIMITIVES[name](rng)
            value = lambda z: ad._val(fn(ad.Var(z)))  # noqa: E731
            weights = rng.normal(size=np.shape(value(x)))
            vjp = ad.grad(lambda z: ad.vsum(fn(z) * weights), x)
            v = rng.normal(size=np.shape(x))
            _, jvp = ad.jvp(fn, x, v)
            if not (_close(vjp, numeric_grad(lambda z: float(np.sum(value(z) * weights)), x))
                    and _close(jvp, numeric_jvp(value, x, v))):
                failures.append(f"{name}/{seed}")
    worst_fvp, n_params = 0.0, []
    for spec, seed in ((SMALL, 0), (SMALL, 1), (MEDIUM, 2)):
        pol = random_policy(spec, seed)
        n_params.append(len(pol.params))
        obs = np.random.default_rng(seed).normal(size=(5, spec.input_dim))
        H = dense_kl_hessian(spec, pol.params.flat, obs)
        fisher = FisherOperator(pol, obs, damping=0.0)
        rng = np.random.default_rng(seed + 50)
        for _ in range(5):
            v = rng.normal(size=len(pol.params))
            ref = H @ v
            err = np.abs(fisher(v) - ref) / (np.abs(ref) + 1e-6 * np.abs(ref).max())
            worst_fvp = max(worst_fvp, float(err.max()))
    ok = not failures and worst_fvp <= 1e-4 and max(n_params) <= 30
    record(4, ok, f"{len(PRIMITIVES)} primitives x 100 cases, VJP and JVP (rtol 1e-4), failures: "
                  f"{failures[:5] or 'none'}; FVP on {n_params}-parameter policies vs dense KL Hessian, "
                  f"max rel err {worst_fvp:.1e} (rtol 1e-4)")


def test_criterion_06_cpo_reduces_to_trpo():
    identical = 0
    for seed in range(10):
        pol = policy(seed)
        b = synthetic_batch(pol, seed=seed)
        zero = EstimatedBatch(b.obs, b.actions, b.logps, b.advantages, np.zeros(len(b)), b.reward_returns,
                              np.zeros(len(b)), np.zeros_like(b.episode_costs), b.episode_starts)
        p_cpo, r_cpo = cpo_step(pol, zero, TrustRegionCfg(), CostConstraintCfg(0.25, 0.995))
        p_trpo, r_trpo = trpo_step(pol, zero, TrustRegionCfg())
        identical += int(p_cpo.flat.tobytes() == p_trpo.flat.tobytes() and r_cpo.step_kind == r_trpo.step_kind)
    record(6, identical == 10, f"{identical}/10 seeded zero-cost batches give bit-identical updates")


def test_criterion_07_cpo_dual_matches_brute_force():
    rng = np.random.default_rng(2024)
    cases = {"inactive": 0, "active": 0, "infeasible": 0}
    worst = 0.0
    for _ in range(150):
        g, b, c, H, delta = random_instance(rng)
        x, sol = cpo_direction(np.linalg.solve(H, g), np.linalg.solve(H, b), g, b, c, delta)
        ref, kind = cvx_reference(g, b, c, H, delta)
        cases[sol.case] += 1
        if (sol.case == "infeasible") != (kind == "infeasible"):
            worst = np.inf
        worst = max(worst, float(np.linalg.norm(x - ref) / np.linalg.norm(ref)))
    rng = np.random.default_rng(7)
    worst_scan = 0.0
    for _ in range(100):
        a = rng.normal(size=(2, 2))
        H = a @ a.T + 0.3 * np.eye(2)
        g, b = rng.normal(size=2), rng.normal(size=2)
        c = float(rng.uniform(-0.2, 0.2))
        x, sol = cpo_direction(np.linalg.solve(H, g), np.linalg.solve(H, b), g, b, c, 0.01)
        ref = brute_force_2d(g, b, c, H, 0.01)
        obj = b if sol.case == "infeasible" else g
        worst_scan = max(worst_scan, abs(obj @ x - obj @ ref) / max(abs(obj @ ref), 1e-6))
    ok = worst <= 1e-3 and worst_scan <= 1e-3 and min(cases.values()) > 0
    record(7, ok, f"150 instances in 2-5 D {cases}: max rel step err vs convex solver {worst:.1e}; "
                  f"100 2-D angle scans: max rel objective err {worst_scan:.1e} (rtol 1e-3)")


# --- 5, 8-12: training runs -------------------------------------------------

def test_criterion_05_trust_region_contract():
    metrics, _ = trained("cpo", 0.05, 0.25, 0)
    accepted = [u for u in metrics.updates if u["step_kind"] != "rejected"]
    delta = BASE.trust_region.delta
    worst = max(u["kl_after"] for u in accepted)
    ok = all(u["kl_after"] <= 1.5 * delta for u in accepted)
    record(5, ok, f"{len(accepted)}/{len(metrics.updates)} updates accepted, max KL {worst:.4f} "
                  f"<= 1.5 delta = {1.5 * delta:.4f}")


def test_criterion_08_cost_limit_adherence():
    at_limit = [trained("cpo", 0.05, 0.25, s)[0].trailing_mean("jc") for s in SEEDS]
    tight = [trained("cpo", 0.05, 0.1, s)[0].trailing_mean("jc") for s in SEEDS]
    loose = [trained("cpo", 0.05, 0.5, s)[0].trailing_mean("jc") for s in SEEDS]
    ok = max(at_limit) <= 0.30 and all(t < l for t, l in zip(tight, loose))
    fmt = lambda xs: "[" + ", ".join(f"{x:.3f}" for x in xs) + "]"  # noqa: E731
    record(8, ok, f"trailing J_C at cl=0.25 {fmt(at_limit)} (<= 0.30); cl=0.1 {fmt(tight)} "
                  f"< cl=0.5 {fmt(loose)} per seed")


def test_criterion_09_cpo_has_fewest_violations():
    parts, ok = [], True
    for r in (0.1, 0.05, 0.03):
        med = {alg: float(np.median([trained(alg, r, 0.25, s)[1].avg_violations for s in SEEDS]))
               for alg in ("cpo", "trpo", "trpo_rp")}
        ok &= med["cpo"] <= med["trpo"] and med["cpo"] <= med["trpo_rp"]
        parts.append(f"r={r}: cpo {med['cpo']:.3f} trpo {med['trpo']:.3f} trpo_rp {med['trpo_rp']:.3f}")
    record(9, ok, "median eval violations, " + "; ".join(parts))


def test_criterion_10_task_mastery():
    rates = {alg: [trained(alg, 0.1, 0.25, s)[1].success_rate for s in SEEDS]
             for alg in ("cpo", "trpo", "trpo_rp")}
    ok = all(rate >= 0.95 for rs in rates.values() for rate in rs)
    detail = "; ".join(f"{alg} {rs}" for alg, rs in rates.items())
    record(10, ok, f"eval success at r=0.1 with {BASE.training.iterations} x "
                   f"{BASE.training.episodes_per_iteration} budget (>= 0.95): {detail}")


def test_criterion_11_radius_monotonicity():
    med = {r: float(np.median([trained("cpo", r, 0.25, s)[0].samples_to_success(0.8) for s in SEEDS]))
           for r in (0.03, 0.05, 0.15)}
    ok = med[0.03] >= med[0.05] >= med[0.15]
    record(11, ok, "median samples to 80% success, " + ", ".join(f"r={r}: {v:.0f}" for r, v in med.items())
           + " (non-increasing in r)")


def test_criterion_12_determinism(tmp_path):
    cfg = BASE.with_(constraint__r=0.05)
    train(cfg, tmp_path / "w1")
    train(cfg.with_(training__workers=3), tmp_path / "w3")
    short = cfg.with_(training__iterations=10, training__eval_rollouts=0)
    train(short, tmp_path / "a")
    train(short, tmp_path / "b")
    full_same = (tmp_path / "w1" / "metrics.csv").read_bytes() == (tmp_path / "w3" / "metrics.csv").read_bytes()
    short_same = (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    record(12, full_same and short_same,
           f"full run workers 1 vs 3 identical: {full_same}; repeated 10-iteration run identical: {short_same}")

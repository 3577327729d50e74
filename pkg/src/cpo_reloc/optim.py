"""Trust-region policy updates: TRPO, reward-penalized TRPO and CPO.

All three share the same natural-gradient machinery: gradients of an
importance-weighted surrogate, conjugate gradient against the Fisher operator,
a step scaled to the KL boundary and a backtracking line search that checks
the empirical KL.

CPO solves, in the local linear/quadratic model,

    maximize    g.x
    subject to  b.x + c <= 0          (c = J_C - cost_limit)
                0.5 x.H.x <= delta

through its two-multiplier dual. With ``v_g = H^-1 g``, ``v_b = H^-1 b`` and
``q = g.v_g``, ``r = g.v_b``, ``s = b.v_b`` the dual objective is

    D(lam, nu) = (q - 2 nu r + nu^2 s) / (2 lam) - nu c + lam delta

minimized over ``lam > 0, nu >= 0``; the primal step is ``(v_g - nu v_b) / lam``.
When no step in the trust region satisfies the linearized constraint
(``c > 0`` and ``c^2 > 2 delta s``) a recovery step ``-sqrt(2 delta / s) v_b``
is taken instead.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .estimation import EstimatedBatch
from .nn import FisherOperator, GaussianPolicy, gaussian_log_prob, mean_kl

EPS = 1e-8


@dataclass(frozen=True)
class TrustRegionCfg:
    delta: float = 0.01
    cg_iters: int = 10
    cg_residual_tol: float = 1e-10
    damping: float = 0.1
    backtrack_ratio: float = 0.8
    max_backtracks: int = 10

    def __post_init__(self):
        if min(self.delta, self.cg_iters, self.cg_residual_tol, self.max_backtracks) <= 0 or self.damping < 0:
            raise ValueError(f"trust-region settings must be positive: {self}")
        if not 0 < self.backtrack_ratio < 1:
            raise ValueError("backtrack_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class CostConstraintCfg:
    cost_limit: float = 0.25
    gamma_c: float = 0.995
    slack_fraction: float = 0.1

    def __post_init__(self):
        if self.cost_limit < 0:
            raise ValueError("cost_limit must be >= 0")

    @property
    def slack(self) -> float:
        return self.slack_fraction * self.cost_limit


@dataclass
class UpdateReport:
    algorithm: str
    step_kind: str
    case: str
    surrogate_before: float
    surrogate_after: float
    kl_after: float
    expected_cost_before: float
    expected_cost_after_estimate: float
    step_norm: float = 0.0
    feasible_start: bool = True

    @property
    def accepted(self) -> bool:
        return self.step_kind != "rejected"

    def row(self) -> dict:
        return asdict(self)


class OptimizerAbort(RuntimeError):
    def __init__(self, message: str, report: UpdateReport):
        super().__init__(message)
        self.report = report


# --- surrogates ------------------------------------------------------------

def _ratio(spec, flat, batch: EstimatedBatch):
    return ad.exp(gaussian_log_prob(spec, flat, batch.obs, batch.actions) - batch.logps)


def _check_ratio(ratio):
    values = ratio.value if isinstance(ratio, ad.Var) else ratio
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FloatingPointError(f"non-finite importance ratio at sample {int(bad[0])}")


def surrogate_loss(spec, flat, batch: EstimatedBatch):
    """Mean importance-weighted advantage (the quantity TRPO maximizes)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    ratio = _ratio(spec, flat, batch)
    _check_ratio(ratio)
    return ad.vmean(ratio * batch.advantages)


def cost_surrogate(spec, flat, batch: EstimatedBatch):
    """Linearized expected discounted cost: ``J_C + mean(ratio A_C) - mean(A_C)``."""
    ratio = _ratio(spec, flat, batch)
    _check_ratio(ratio)
    correction = ad.vmean(ratio * batch.cost_advantages) - float(np.mean(batch.cost_advantages))
    return correction + batch.jc


def empirical_kl(policy: GaussianPolicy, new_flat, obs) -> float:
    return float(mean_kl(policy.spec, policy.params.flat, np.asarray(new_flat), obs))


# --- linear algebra --------------------------------------------------------

def conjugate_gradient(fvp, b, iters: int = 10, tol: float = 1e-10) -> np.ndarray:
    """Approximately solve ``fvp(x) = b`` for a symmetric positive-definite operator."""
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    for _ in range(iters):
        hp = fvp(p)
        php = float(p @ hp)
        if php <= 0:
            raise FloatingPointError(f"operator is not positive definite along search direction (p.Hp={php:.3e})")
        alpha = rr / php
        x = x + alpha * p
        r = r - alpha * hp
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite conjugate-gradient iterate")
        rr_new = float(r @ r)
        if math.sqrt(rr_new) <= tol * bnorm:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


# --- CPO dual --------------------------------------------------------------

@dataclass(frozen=True)
class DualSolution:
    case: str  # "inactive", "active" or "infeasible"
    lam: float
    nu: float


def _dual_value(lam, nu, q, r, s, c, delta):
    return (q - 2 * nu * r + nu * nu * s) / (2 * lam) - nu * c + lam * delta


def solve_cpo_dual(q: float, r: float, s: float, c: float, delta: float) -> DualSolution:
    """Multipliers for the linear-objective, linear-constraint, KL-ball problem."""
    q = max(q, 0.0)
    lam_trpo = math.sqrt(q / (2 * delta)) if q > 0 else EPS
    if s <= EPS:
        if c <= 0:
            return DualSolution("inactive", lam_trpo, 0.0)
        return DualSolution("infeasible", 0.0, 0.0)
    B = 2 * delta - c * c / s
    if B < 0:
        if c > 0:
            return DualSolution("infeasible", 0.0, math.sqrt(2 * delta / s))
        return DualSolution("inactive", lam_trpo, 0.0)
    A = max(q - r * r / s, 0.0)

    # nu*(lam) = max(0, (r + lam c)/s): region B is where that is positive.
    if c > 0:
        pivot = -r / c
        region_b = (max(pivot, 0.0), math.inf)
        region_a = (0.0, pivot) if pivot > 0 else None
    elif c < 0:
        pivot = -r / c
        region_b = (0.0, pivot) if pivot > 0 else None
        region_a = (max(pivot, 0.0), math.inf)
    else:
        region_b = (0.0, math.inf) if r >= 0 else None
        region_a = None if r >= 0 else (0.0, math.inf)

    def clip(x, lo, hi):
        return min(max(x, lo, EPS), hi)

    candidates = []
    if region_a is not None:
        candidates.append(clip(lam_trpo, *region_a))
    if region_b is not None:
        lam_b = math.sqrt(A / B) if B > 0 else math.inf
        candidates.append(clip(lam_b, *region_b))

    best = None
    for lam in candidates:
        if not math.isfinite(lam):
            continue
        nu = max(0.0, (r + lam * c) / s)
        value = _dual_value(lam, nu, q, r, s, c, delta)
        if best is None or value < best[0]:
            best = (value, lam, nu)
    _, lam, nu = best
    return DualSolution("active" if nu > 0 else "inactive", lam, nu)


def cpo_direction(v_g, v_b, g, b, c, delta) -> tuple[np.ndarray, DualSolution]:
    """Full CPO step from the two preconditioned gradients."""
    q, r, s = float(g @ v_g), float(g @ v_b), float(b @ v_b)
    sol = solve_cpo_dual(q, r, s, c, delta)
    if sol.case == "infeasible":
        return -sol.nu * v_b, sol
    if sol.case == "inactive":
        return v_g / sol.lam, sol
    # Same as (v_g - nu v_b) / lam with nu = (r + lam c) / s, written so that
    # g parallel to b (where lam -> 0) does not cancel catastrophically.
    ortho = v_g - (r / s) * v_b
    if q - r * r / s <= EPS * max(q, 1.0):
        return -(c / s) * v_b, sol
    return ortho / sol.lam - (c / s) * v_b, sol


# --- updates ---------------------------------------------------------------

def _grad(fn, flat):
    value, g = ad.value_and_grad(fn, flat)
    return value, g


def _line_search(policy, batch, cfg: TrustRegionCfg, full_step, accept):
    """Backtrack along ``full_step`` until ``accept(surr, kl, cost)`` holds."""
    spec, flat = policy.spec, policy.params.flat
    for k in range(cfg.max_backtracks + 1):
        frac = cfg.backtrack_ratio ** k
        candidate = flat + frac * full_step
        if not np.all(np.isfinite(candidate)):
            continue
        surr = float(surrogate_loss(spec, candidate, batch))
        kl = empirical_kl(policy, candidate, batch.obs)
        cost = float(cost_surrogate(spec, candidate, batch))
        if accept(surr, kl, cost):
            return candidate, ("full" if k == 0 else f"backtracked({k})"), surr, kl, cost, frac
    return None, "rejected", float("nan"), 0.0, float("nan"), 0.0


def _finish(policy, batch, algorithm, case, surr0, cost0, step, search, recovery=False, feasible=True):
    candidate, kind, surr, kl, cost, frac = search
    if candidate is None:
        report = UpdateReport(algorithm, "rejected", case, surr0, surr0, 0.0, cost0, cost0, 0.0, feasible)
        return policy.params, report
    if recovery:
        kind = "recovery"
    norm = float(frac * np.linalg.norm(step))
    return policy.with_params(candidate).params, UpdateReport(
        algorithm, kind, case, surr0, surr, kl, cost0, cost, norm, feasible)


def _trpo_core(policy, batch, cfg, fisher, g, surr0, cost0, algorithm, accept_extra=None):
    x = conjugate_gradient(fisher, g, cfg.cg_iters, cfg.cg_residual_tol)
    xhx = float(x @ fisher(x))
    if xhx <= 0 or not np.any(x):
        report = UpdateReport(algorithm, "rejected", "unconstrained", surr0, surr0, 0.0, cost0, cost0)
        return policy.params, report
    step = math.sqrt(2 * cfg.delta / xhx) * x

    def accept(surr, kl, cost):
        ok = surr > surr0 and kl <= cfg.delta
        return ok and (accept_extra is None or accept_extra(cost))

    search = _line_search(policy, batch, cfg, step, accept)
    return _finish(policy, batch, algorithm, "unconstrained", surr0, cost0, step, search)


def _prepare(policy, batch, cfg, algorithm):
    spec = policy.spec
    flat = policy.params.flat
    surr0, g = _grad(lambda w: surrogate_loss(spec, w, batch), flat)
    cost0 = batch.jc
    if not np.all(np.isfinite(g)):
        report = UpdateReport(algorithm, "rejected", "aborted", surr0, surr0, 0.0, cost0, cost0)
        raise OptimizerAbort("non-finite policy gradient", report)
    fisher = FisherOperator(policy, batch.obs, cfg.damping)
    return surr0, cost0, g, fisher


def trpo_step(policy: GaussianPolicy, batch: EstimatedBatch, cfg: TrustRegionCfg = TrustRegionCfg()):
    surr0, cost0, g, fisher = _prepare(policy, batch, cfg, "trpo")
    return _trpo_core(policy, batch, cfg, fisher, g, surr0, cost0, "trpo")


def trpo_rp_step(policy: GaussianPolicy, batch: EstimatedBatch, cfg: TrustRegionCfg = TrustRegionCfg()):
    """TRPO on a batch whose rewards were replaced by ``reward - cost`` before GAE.

    Build that batch with ``build_batch([penalized(t) for t in trajectories], ...)``.
    """
    params, report = trpo_step(policy, batch, cfg)
    report.algorithm = "trpo_rp"
    return params, report


def cpo_step(policy: GaussianPolicy, batch: EstimatedBatch, cfg: TrustRegionCfg = TrustRegionCfg(),
             cost_cfg: CostConstraintCfg = CostConstraintCfg()):
    surr0, cost0, g, fisher = _prepare(policy, batch, cfg, "cpo")
    spec, flat = policy.spec, policy.params.flat
    c = cost0 - cost_cfg.cost_limit
    limit = cost_cfg.cost_limit + cost_cfg.slack
    _, b = _grad(lambda w: cost_surrogate(spec, w, batch), flat)
    if not np.all(np.isfinite(b)):
        report = UpdateReport("cpo", "rejected", "aborted", surr0, surr0, 0.0, cost0, cost0)
        raise OptimizerAbort("non-finite cost gradient", report)

    if float(b @ b) <= EPS and c <= 0:
        # No usable cost signal and already feasible: plain TRPO.
        return _trpo_core(policy, batch, cfg, fisher, g, surr0, cost0, "cpo",
                          accept_extra=lambda cost: cost <= limit)

    v_g = conjugate_gradient(fisher, g, cfg.cg_iters, cfg.cg_residual_tol)
    v_b = conjugate_gradient(fisher, b, cfg.cg_iters, cfg.cg_residual_tol)
    step, sol = cpo_direction(v_g, v_b, g, b, c, cfg.delta)
    feasible = c <= 0
    if sol.case == "inactive" and feasible:
        # Same scaling as the TRPO step, so an inactive constraint changes nothing.
        xhx = float(v_g @ fisher(v_g))
        step = math.sqrt(2 * cfg.delta / xhx) * v_g if xhx > 0 else np.zeros_like(v_g)
    if not np.any(step):
        report = UpdateReport("cpo", "rejected", sol.case, surr0, surr0, 0.0, cost0, cost0, 0.0, feasible)
        return policy.params, report

    if sol.case == "infeasible":
        def accept(surr, kl, cost):
            return kl <= cfg.delta and cost < cost0
    elif feasible:
        def accept(surr, kl, cost):
            return kl <= cfg.delta and surr > surr0 and cost <= limit
    else:
        def accept(surr, kl, cost):
            return kl <= cfg.delta and cost < cost0

    search = _line_search(policy, batch, cfg, step, accept)
    return _finish(policy, batch, "cpo", sol.case, surr0, cost0, step, search,
                   recovery=sol.case == "infeasible", feasible=feasible)

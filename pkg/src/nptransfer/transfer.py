"""Two-stage adaptive transfer pipeline for Neyman-Pearson classification.

Stage one aligns the source false-positive level with the target constraint:
a warm start on target data anchors a band of near-optimal target solutions,
and the smallest admissible source level alpha_hat is found by minimizing the
free level subject to the max-composed feasibility constraint.  Stage two
solves the target and source subproblems inside the aligned feasible set,
solves a final source-risk program restricted to stay near-optimal on target,
and picks between the final solution and the target subproblem solution by a
source-risk gap test.  Every stage is one call to the stochastic solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ClassSamples,
    seed_entropy,
    ConfigurationError,
    ErrorBudgets,
    LossSpec,
    ParamVector,
    empirical_risk,
)
from .constraints import (
    Constraint,
    AffineConstraint,
    EmpiricalConstraint,
    dual_range_bound,
    max_of,
    risk_objective,
    type1_alpha_constraint,
    type1_constraint,
    type2_gap_constraint,
)
from .solver import (
    CPProblem,
    CPResult,
    InfeasibleConstraint,
    cp_solve,
    default_iteration_count,
    default_step_constant,
    project_ball,
)


class BudgetSizingError(ConfigurationError):
    """The statistical budgets are too large for the requested level alpha."""


@dataclass(frozen=True)
class TransferData:
    """The four training sample sets: one per (class, domain) pair."""

    source0: ClassSamples
    source1: ClassSamples
    target0: ClassSamples
    target1: ClassSamples

    def __post_init__(self):
        dims = {s.dim for s in (self.source0, self.source1, self.target0, self.target1)}
        if len(dims) != 1:
            raise ConfigurationError("all sample sets must share one feature dimension")
        expected = (("source0", 0, "S"), ("source1", 1, "S"), ("target0", 0, "T"), ("target1", 1, "T"))
        for name, cls, dom in expected:
            s = getattr(self, name)
            if s.class_label != cls or s.domain_label != dom:
                raise ConfigurationError(f"{name} must carry class {cls} and domain {dom}")

    @property
    def dim(self) -> int:
        return self.source0.dim


@dataclass
class TransferConfig:
    """Configuration of the pipeline.

    The five r values are boundary-gradient floors, one per solver stage
    (warm start, level alignment, target subproblem, source subproblem, final
    solve).  They are caller-supplied tuning constants; a conservative
    underestimate is safe and only costs iterations.  ``grad_bound`` and
    ``grad_smoothness`` bound the per-sample risk gradient and its Lipschitz
    constant.  ``n_iters`` caps every stage's iteration count; when None each
    stage derives its count from its tolerance, which can be very large.
    """

    alpha: float
    budgets: ErrorBudgets
    loss: LossSpec
    B: float
    r_warm: float
    r_alpha: float
    r_sub_t: float
    r_sub_s: float
    r_final: float
    grad_bound: float
    grad_smoothness: float
    seed: int = 0
    c_eta: float | None = None
    k_n: float | None = None
    n_iters: int | None = None
    theta0: object = None

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigurationError("alpha must lie in (0, 1)")
        for name in ("r_warm", "r_alpha", "r_sub_t", "r_sub_s", "r_final"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.grad_bound <= 0 or self.grad_smoothness <= 0:
            raise ConfigurationError("gradient bounds must be positive")
        if self.B <= 0:
            raise ConfigurationError("ball radius must be positive")

    @property
    def dual_range(self) -> float:
        """Uniform constraint bound: 2C plus the largest statistical budget."""
        return dual_range_bound(self.loss, self.budgets)


@dataclass(frozen=True)
class ToleranceSet:
    """Per-stage solve tolerances, in cascade order."""

    eps_final: float
    eps_sub_t: float
    eps_sub_s: float
    eps_alpha: float
    eps_warm: float

    def as_dict(self):
        return {
            "eps_final": self.eps_final,
            "eps_sub_t": self.eps_sub_t,
            "eps_sub_s": self.eps_sub_s,
            "eps_alpha": self.eps_alpha,
            "eps_warm": self.eps_warm,
        }


@dataclass(frozen=True)
class TransferResult:
    theta_hat: ParamVector
    alpha_hat: float
    branch: str
    theta_t_prime: ParamVector
    theta_s_prime: ParamVector
    theta_tilde: ParamVector | None
    tolerances: ToleranceSet
    diagnostics: dict
    manifest: dict


def slackness(eps: float, r: float, grad_bound: float, dual_range: float,
              smoothness: float, delta: float) -> float:
    """Slack assigned to an inexactly-known constraint so an eps-accurate
    solve of the slackened program stays eps-accurate for the true one:

        min{ 1/(4H), (G + G_lambda * sqrt(log(1/delta)))^-1 * eps/(2 + 2*H*eps) } * r
    """
    if min(eps, r, grad_bound, dual_range, smoothness) <= 0:
        raise ConfigurationError("slackness inputs must be positive")
    if not (0.0 < delta < 1.0):
        raise ConfigurationError("delta must lie in (0, 1)")
    a = 1.0 / (4.0 * smoothness)
    b = (eps / (2.0 + 2.0 * smoothness * eps)) / (
        grad_bound + dual_range * math.sqrt(math.log(1.0 / delta))
    )
    return min(a, b) * r


def tolerance_cascade(cfg: TransferConfig) -> ToleranceSet:
    """Derive the five stage tolerances from the statistical budgets.

    Later stages' inexact constraints force earlier stages to be solved to the
    slackness of every program they feed, hence the nested minima.
    """
    b = cfg.budgets

    def xi(eps, r):
        return slackness(eps, r, cfg.grad_bound, cfg.dual_range, cfg.grad_smoothness, b.delta)

    eps_final = b.eps_1s
    eps_sub_t = min(xi(eps_final, cfg.r_final), b.eps_1t)
    eps_sub_s = b.eps_1s
    eps_alpha = min(
        xi(eps_final, cfg.r_final),
        xi(eps_sub_s, cfg.r_sub_s),
        xi(eps_sub_t, cfg.r_sub_t),
    )
    eps_warm = min(
        xi(eps_final, cfg.r_final),
        xi(eps_sub_s, cfg.r_sub_s),
        xi(eps_sub_t, cfg.r_sub_t),
        xi(eps_alpha, cfg.r_alpha),
    )
    return ToleranceSet(eps_final, eps_sub_t, eps_sub_s, eps_alpha, eps_warm)


def _stage_problem(cfg: TransferConfig, objective, constraint, xi, eps, r, stage_index,
                   grad_bound=None, alpha_box=None, theta0=None, alpha0=None) -> CPProblem:
    g = grad_bound if grad_bound is not None else cfg.grad_bound
    rho_sq = cfg.B**2 + (g / r) ** 2
    c_eta = cfg.c_eta if cfg.c_eta is not None else default_step_constant(
        math.sqrt(rho_sq), cfg.dual_range, cfg.budgets.delta
    )
    if cfg.n_iters is not None:
        n = cfg.n_iters
    else:
        n = default_iteration_count(eps, g, cfg.dual_range, rho_sq,
                                    scale=cfg.k_n if cfg.k_n is not None else 400.0)
    seed = int(np.random.SeedSequence(seed_entropy((cfg.seed, stage_index))).generate_state(1)[0])
    return CPProblem(
        objective=objective,
        constraint=constraint,
        B=cfg.B,
        xi=xi,
        eps=eps,
        delta=cfg.budgets.delta,
        c_eta=c_eta,
        n_iters=n,
        grad_bound=g,
        seed=seed,
        r=r,
        alpha_box=alpha_box,
        theta0=theta0,
        alpha0=alpha0,
    )


def _summary(res: CPResult) -> dict:
    return {
        "objective_value": res.objective_value,
        "constraint_value": res.constraint_value,
        "projection_distance": res.projection_distance,
        "iterations": res.iterations,
        "lambda_final": res.lambda_final,
        "lambda_max": res.lambda_max,
    }


def warm_start_target(data: TransferData, cfg: TransferConfig, tol: ToleranceSet):
    """Solve the tightened target problem anchoring the near-optimal band.

    Minimizes the target class-1 risk subject to the class-0 risk staying at
    or below alpha minus its budget (zero extra slack).  Aborts with a sizing
    error when alpha - eps_0t is not positive, since no tightened program
    exists at this sample size.
    """
    b = cfg.budgets
    if cfg.alpha - b.eps_0t <= 0:
        raise BudgetSizingError(
            f"alpha - eps_0t = {cfg.alpha - b.eps_0t:.6g} <= 0; "
            "increase the class-0 target sample count or alpha"
        )
    constraint = type1_constraint(data.target0, cfg.loss, cfg.alpha, b.eps_0t, tighten=True)
    objective = risk_objective(data.target1, cfg.loss)
    problem = _stage_problem(cfg, objective, constraint, 0.0, tol.eps_warm, cfg.r_warm, 0,
                             theta0=cfg.theta0)
    try:
        res = cp_solve(problem)
    except InfeasibleConstraint as exc:
        raise InfeasibleConstraint(
            "tightened target constraint unreachable; increase the class-0 "
            f"target sample count or alpha ({exc})",
            best_point=exc.best_point,
            best_value=exc.best_value,
        ) from exc
    return res.theta_hat, res


def _aligned_constraint_leaves(data, cfg, theta_warm, alpha_value=None):
    """The three feasibility leaves; the source leaf is affine in the free
    level when alpha_value is None, else fixed at alpha_value."""
    b = cfg.budgets
    g_target = type1_constraint(data.target0, cfg.loss, cfg.alpha, b.eps_0t)
    if alpha_value is None:
        g_source = type1_alpha_constraint(data.source0, cfg.loss, b.eps_0s)
    else:
        g_source = EmpiricalConstraint(data.source0, cfg.loss, offset=alpha_value + b.eps_0s)
    g_band = type2_gap_constraint(data.target1, cfg.loss, theta_warm, b.eps_1t, 6)
    return g_target, g_source, g_band


def compute_alpha_hat(data: TransferData, cfg: TransferConfig, theta_warm: ParamVector,
                      tol: ToleranceSet):
    """Smallest source level at or above alpha keeping the aligned set nonempty.

    Minimizes the free level over the joint (theta, level) space subject to
    the max of the three feasibility leaves; the theta block of the solution
    is discarded.  The level is box-clamped to [alpha, 1] each step, so the
    returned value never undershoots alpha.
    """
    leaves = _aligned_constraint_leaves(data, cfg, theta_warm)
    constraint = max_of(leaves)
    objective = AffineConstraint(coef=np.zeros(data.dim), offset=0.0, alpha_coeff=1.0)
    xi = slackness(tol.eps_alpha, cfg.r_alpha, cfg.grad_bound, cfg.dual_range,
                   cfg.grad_smoothness, cfg.budgets.delta)
    grad_bound = math.hypot(cfg.grad_bound, 1.0)
    problem = _stage_problem(
        cfg, objective, constraint, xi, tol.eps_alpha, cfg.r_alpha, 1,
        grad_bound=grad_bound, alpha_box=(cfg.alpha, 1.0),
        theta0=theta_warm.theta, alpha0=cfg.alpha,
    )
    res = cp_solve(problem)
    return float(res.alpha_hat), res


def solve_subproblems(data: TransferData, cfg: TransferConfig, alpha_hat: float,
                      theta_warm: ParamVector, tol: ToleranceSet):
    """Minimize each domain's class-1 risk over the aligned feasible set."""
    leaves = _aligned_constraint_leaves(data, cfg, theta_warm, alpha_value=alpha_hat)
    constraint = max_of(leaves)
    xi_t = slackness(tol.eps_sub_t, cfg.r_sub_t, cfg.grad_bound, cfg.dual_range,
                     cfg.grad_smoothness, cfg.budgets.delta)
    xi_s = slackness(tol.eps_sub_s, cfg.r_sub_s, cfg.grad_bound, cfg.dual_range,
                     cfg.grad_smoothness, cfg.budgets.delta)
    prob_t = _stage_problem(cfg, risk_objective(data.target1, cfg.loss), constraint,
                            xi_t, tol.eps_sub_t, cfg.r_sub_t, 2, theta0=theta_warm.theta)
    prob_s = _stage_problem(cfg, risk_objective(data.source1, cfg.loss), constraint,
                            xi_s, tol.eps_sub_s, cfg.r_sub_s, 3, theta0=theta_warm.theta)
    res_t = cp_solve(prob_t)
    res_s = cp_solve(prob_s)
    return res_t.theta_hat, res_s.theta_hat, res_t, res_s


def select_final(source_risk_tilde: float, source_risk_sub: float, eps_1s: float) -> str:
    """Pure selection rule: fall back to the target subproblem solution when
    the final solve's source risk exceeds the source subproblem's by more
    than twice the class-1 source budget."""
    gap = source_risk_tilde - source_risk_sub
    return "target-only-fallback" if gap > 2.0 * eps_1s else "intersection"


def final_solve_and_select(data: TransferData, cfg: TransferConfig, alpha_hat: float,
                           theta_warm: ParamVector, theta_t_prime: ParamVector,
                           theta_s_prime: ParamVector, tol: ToleranceSet):
    """Final source-risk solve restricted to near-optimal target risk, then the
    branch decision.

    An infeasible final program (possible only through slack accumulation)
    falls back to the target subproblem solution and records the failure.
    """
    b = cfg.budgets
    leaves = _aligned_constraint_leaves(data, cfg, theta_warm, alpha_value=alpha_hat)
    g_near_t = type2_gap_constraint(data.target1, cfg.loss, theta_t_prime, b.eps_1t, 2)
    constraint = max_of([*leaves, g_near_t])
    xi = slackness(tol.eps_final, cfg.r_final, cfg.grad_bound, cfg.dual_range,
                   cfg.grad_smoothness, b.delta)
    problem = _stage_problem(cfg, risk_objective(data.source1, cfg.loss), constraint,
                             xi, tol.eps_final, cfg.r_final, 4, theta0=theta_t_prime.theta)
    note = None
    theta_tilde = None
    res = None
    try:
        res = cp_solve(problem)
        theta_tilde = res.theta_hat
    except InfeasibleConstraint as exc:
        note = f"final solve infeasible, falling back: {exc}"

    if theta_tilde is None:
        branch = "target-only-fallback"
        theta_hat = theta_t_prime
    else:
        risk_tilde = empirical_risk(theta_tilde, data.source1, cfg.loss)
        risk_sub = empirical_risk(theta_s_prime, data.source1, cfg.loss)
        branch = select_final(risk_tilde, risk_sub, b.eps_1s)
        theta_hat = theta_t_prime if branch == "target-only-fallback" else theta_tilde
    return theta_hat, theta_tilde, branch, res, note


def run_transfer(data: TransferData, cfg: TransferConfig) -> TransferResult:
    """Run the full pipeline and assemble the result with its run manifest."""
    tol = tolerance_cascade(cfg)
    diagnostics = {}

    theta_warm, res_warm = warm_start_target(data, cfg, tol)
    diagnostics["warm"] = _summary(res_warm)

    alpha_hat, res_alpha = compute_alpha_hat(data, cfg, theta_warm, tol)
    diagnostics["alpha"] = _summary(res_alpha)

    theta_t_prime, theta_s_prime, res_t, res_s = solve_subproblems(
        data, cfg, alpha_hat, theta_warm, tol
    )
    diagnostics["sub_t"] = _summary(res_t)
    diagnostics["sub_s"] = _summary(res_s)

    theta_hat, theta_tilde, branch, res_final, note = final_solve_and_select(
        data, cfg, alpha_hat, theta_warm, theta_t_prime, theta_s_prime, tol
    )
    if res_final is not None:
        diagnostics["final"] = _summary(res_final)
    if note is not None:
        diagnostics["final_note"] = note

    manifest = {
        "alpha": cfg.alpha,
        "alpha_hat": alpha_hat,
        "branch": branch,
        "seed": cfg.seed,
        "rng": "philox",
        "tolerances": tol.as_dict(),
        "r_values": {
            "warm": cfg.r_warm,
            "alpha": cfg.r_alpha,
            "sub_t": cfg.r_sub_t,
            "sub_s": cfg.r_sub_s,
            "final": cfg.r_final,
        },
        "budgets": {
            "c_tilde": cfg.budgets.c_tilde,
            "eps_0s": cfg.budgets.eps_0s,
            "eps_0t": cfg.budgets.eps_0t,
            "eps_1s": cfg.budgets.eps_1s,
            "eps_1t": cfg.budgets.eps_1t,
            "delta": cfg.budgets.delta,
        },
        "iterations": {k: v["iterations"] for k, v in diagnostics.items() if isinstance(v, dict) and "iterations" in v},
    }

    return TransferResult(
        theta_hat=theta_hat,
        alpha_hat=alpha_hat,
        branch=branch,
        theta_t_prime=theta_t_prime,
        theta_s_prime=theta_s_prime,
        theta_tilde=theta_tilde,
        tolerances=tol,
        diagnostics=diagnostics,
        manifest=manifest,
    )


def estimate_boundary_gradient_floor(
    constraint: Constraint,
    anchor: np.ndarray,
    B: float,
    n_rays: int = 1000,
    seed: int = 0,
    alpha: float | None = None,
    quantile: float = 0.05,
):
    """Diagnostic estimate of the constraint-gradient floor on the boundary.

    Casts random rays from a strictly feasible anchor, bisects each to the
    zero level set inside the ball, and reports a low quantile of the
    subgradient norms found there along with the samples.  Rays that never
    cross inside the ball are skipped.
    """
    anchor = np.asarray(anchor, dtype=float)
    g_anchor = constraint.value(anchor, alpha) if constraint.uses_alpha else constraint.value(anchor)
    if g_anchor >= 0:
        raise ConfigurationError("anchor must be strictly feasible (g < 0)")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed_entropy(seed))))
    norms = []
    for _ in range(n_rays):
        u = rng.standard_normal(anchor.shape[0])
        u /= np.linalg.norm(u)
        far = project_ball(anchor + 2.0 * B * u, B)
        g_far = constraint.value(far, alpha) if constraint.uses_alpha else constraint.value(far)
        if g_far <= 0:
            continue
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            pt = anchor + mid * (far - anchor)
            g_mid = constraint.value(pt, alpha) if constraint.uses_alpha else constraint.value(pt)
            if g_mid <= 0:
                lo = mid
            else:
                hi = mid
        pt = anchor + hi * (far - anchor)
        g_theta, g_alpha = (
            constraint.subgrad(pt, alpha) if constraint.uses_alpha else constraint.subgrad(pt)
        )
        norms.append(float(np.linalg.norm(g_theta)))
    if not norms:
        raise ConfigurationError("no boundary crossings found inside the ball")
    arr = np.sort(np.asarray(norms))
    return float(np.quantile(arr, quantile)), arr

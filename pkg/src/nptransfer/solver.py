"""Stochastic convex-program solver: projected gradient descent-ascent on the
regularized Lagrangian, followed by projection of the averaged iterate onto a
slackened constraint set {theta : g(theta) <= -xi}.

The iteration is

    theta_{t+1} = Pi_B( theta_t - eta * (grad_f_t + lambda_t * grad_g_t) )
    lambda_{t+1} = [ (1 - gamma*eta) * lambda_t + eta * g(theta_t; datum) ]_+

with eta = c_eta / sqrt(N) and gamma = G^2 * eta.  Joint problems carry one
extra free-level coordinate that is box-clamped to [alpha_lo, alpha_hi] after
each step and excluded from the ball projection; the box and ball blocks are
disjoint so the two projections compose coordinate-wise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernel
from .core import ConfigurationError, ParamVector, seed_entropy
from .constraints import (
    AffineConstraint,
    Constraint,
    EmpiricalConstraint,
    MaxConstraint,
)

_CHUNK = 1 << 19
_TOL_PROJ = 1e-9


class InfeasibleConstraint(RuntimeError):
    """The feasibility probe could not reach the slackened constraint set.

    Carries the most feasible point found so callers can inspect or fall back.
    """

    def __init__(self, message, best_point=None, best_alpha=None, best_value=None):
        super().__init__(message)
        self.best_point = best_point
        self.best_alpha = best_alpha
        self.best_value = best_value


class NumericalDivergence(RuntimeError):
    """A non-finite iterate appeared; carries the iteration index."""

    def __init__(self, iteration):
        super().__init__(f"non-finite iterate at step {iteration}")
        self.iteration = iteration


@dataclass
class CPProblem:
    """One convex program for the solver.

    ``objective`` is a zero-offset constraint-like risk; ``constraint`` is any
    Constraint.  ``grad_bound`` is the uniform bound G on stochastic gradient
    norms of both.  ``r`` (optional) is the boundary-gradient floor used only
    for the rho-squared diagnostic.  ``alpha_box`` switches on the joint
    parameterization; ``theta0``/``alpha0`` override the all-zeros start.
    """

    objective: Constraint
    constraint: Constraint
    B: float
    xi: float
    eps: float
    delta: float
    c_eta: float
    n_iters: int
    grad_bound: float
    seed: int
    r: float | None = None
    alpha_box: tuple[float, float] | None = None
    theta0: np.ndarray | None = None
    alpha0: float | None = None

    def __post_init__(self):
        if self.B <= 0:
            raise ConfigurationError("ball radius must be positive")
        if self.xi < 0:
            raise ConfigurationError("slackness xi must be nonnegative")
        if self.eps <= 0:
            raise ConfigurationError("target accuracy eps must be positive")
        if self.n_iters < 1:
            raise ConfigurationError("iteration count must be >= 1")
        if self.c_eta <= 0 or self.grad_bound <= 0:
            raise ConfigurationError("c_eta and grad_bound must be positive")
        if not (0.0 < self.delta < 1.0):
            raise ConfigurationError("delta must lie in (0, 1)")
        if self.gamma * self.eta >= 1.0:
            raise ConfigurationError(
                "gamma * eta >= 1; decrease c_eta or increase the iteration count"
            )
        if self.constraint.uses_alpha and self.alpha_box is None:
            raise ConfigurationError("constraint reads a free level but alpha_box is unset")

    @property
    def eta(self) -> float:
        return self.c_eta / math.sqrt(self.n_iters)

    @property
    def gamma(self) -> float:
        return self.grad_bound**2 * self.eta

    @property
    def rho_sq(self) -> float | None:
        if self.r is None:
            return None
        return self.B**2 + (self.grad_bound / self.r) ** 2


@dataclass(frozen=True)
class CPResult:
    theta_hat: ParamVector
    averaged_theta: ParamVector
    lambda_final: float
    objective_value: float
    constraint_value: float
    projection_distance: float
    iterations: int
    lambda_max: float
    alpha_hat: float | None = None
    alpha_bar: float | None = None


def default_iteration_count(eps: float, grad_bound: float, constraint_bound: float,
                            rho_sq: float, scale: float = 400.0) -> int:
    """Iteration budget ceil(K / eps^2) with K = scale * (G + C_g)^2 * rho^2."""
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    k = scale * (grad_bound + constraint_bound) ** 2 * rho_sq
    return int(math.ceil(k / eps**2))


def default_step_constant(rho: float, constraint_bound: float, delta: float) -> float:
    """Step-size constant rho / (12 * sqrt(6) * C_g * sqrt(log(2/delta)))."""
    return rho / (12.0 * math.sqrt(6.0) * constraint_bound * math.sqrt(math.log(2.0 / delta)))


def project_ball(theta: np.ndarray, B: float) -> np.ndarray:
    """Radially scale theta onto the B-ball; interior points pass through."""
    if B <= 0:
        raise ConfigurationError("ball radius must be positive")
    theta = np.asarray(theta, dtype=float)
    nrm = float(np.linalg.norm(theta))
    return theta / max(1.0, nrm / B)


def dual_update(lam: float, gamma: float, eta: float, g_sample: float) -> float:
    """One dual ascent step: [(1 - gamma*eta) * lam + eta * g_sample]_+."""
    if lam < 0:
        raise ConfigurationError("dual variable must be nonnegative")
    if not (0.0 < gamma * eta < 1.0):
        raise ConfigurationError("gamma * eta must lie in (0, 1)")
    return max(0.0, (1.0 - gamma * eta) * lam + eta * g_sample)


def _constraint_eval(constraint, theta, alpha):
    if constraint.uses_alpha:
        return constraint.value(theta, alpha)
    return constraint.value(theta)


def _constraint_subgrad(constraint, theta, alpha):
    if constraint.uses_alpha:
        return constraint.subgrad(theta, alpha)
    g_theta, g_alpha = constraint.subgrad(theta)
    return g_theta, 0.0


def project_constraint(
    theta_bar: np.ndarray,
    constraint: Constraint,
    xi: float,
    B: float,
    alpha: float | None = None,
    alpha_box: tuple[float, float] | None = None,
    probe_iters: int = 500,
    tol: float = _TOL_PROJ,
):
    """Retract theta_bar into {g <= -xi} (intersected with the ball and box).

    If theta_bar already satisfies g <= -xi it is returned unchanged.
    Otherwise a projected subgradient descent on g (``probe_iters`` steps,
    diminishing steps) searches for a strictly feasible anchor; the segment
    from the anchor to theta_bar crosses the level set g = -xi exactly once
    by convexity, and bisection pins that crossing to within ``tol`` in
    g-value, returning the feasible side.  This approximates the Euclidean
    projection; the contract is feasibility plus proximity.

    Returns (theta, alpha, distance).
    """
    theta_bar = np.asarray(theta_bar, dtype=float)
    g_bar = _constraint_eval(constraint, theta_bar, alpha)
    if g_bar <= -xi:
        return theta_bar.copy(), alpha, 0.0

    # feasibility probe: minimize g from theta_bar
    th = theta_bar.copy()
    al = alpha
    best_th, best_al, best_g = th.copy(), al, g_bar
    margin = max(100.0 * tol, 1e-6)
    for t in range(probe_iters):
        g_theta, g_alpha = _constraint_subgrad(constraint, th, al)
        nrm = math.sqrt(float(g_theta @ g_theta) + g_alpha * g_alpha)
        if nrm < 1e-14:
            break
        step = B / math.sqrt(t + 1.0)
        th = project_ball(th - (step / nrm) * g_theta, B)
        if alpha_box is not None:
            al = min(max(al - (step / nrm) * g_alpha, alpha_box[0]), alpha_box[1])
        g_here = _constraint_eval(constraint, th, al)
        if g_here < best_g:
            best_g = g_here
            best_th = th.copy()
            best_al = al
        if best_g <= -xi - margin:
            break
    if best_g > -xi - tol:
        raise InfeasibleConstraint(
            f"no point with g <= -xi found (best g = {best_g:.6g}, -xi = {-xi:.6g})",
            best_point=best_th,
            best_alpha=best_al,
            best_value=best_g,
        )

    # bisection along the segment from the strictly feasible anchor to theta_bar
    lo, hi = 0.0, 1.0
    lo_th, lo_al = best_th, best_al

    def _point(t):
        th_t = best_th + t * (theta_bar - best_th)
        al_t = None
        if alpha is not None:
            al_t = best_al + t * (alpha - best_al)
        return th_t, al_t

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        th_m, al_m = _point(mid)
        g_m = _constraint_eval(constraint, th_m, al_m)
        if g_m <= -xi:
            lo, lo_th, lo_al = mid, th_m, al_m
            if g_m >= -xi - tol:
                break
        else:
            hi = mid
        if hi - lo < 1e-15:
            break

    dist = float(np.linalg.norm(lo_th - theta_bar))
    if alpha is not None and lo_al is not None:
        dist = math.hypot(dist, lo_al - alpha)
    return lo_th, lo_al, dist


def _flatten(objective, constraint, dim, has_alpha):
    """Lower the objective/constraint structure onto the kernel's array form."""
    p = dim + (1 if has_alpha else 0)
    dummy_rows = np.zeros((1, dim))

    if isinstance(objective, EmpiricalConstraint):
        if objective.uses_alpha:
            raise ConfigurationError("empirical objectives cannot read the free level")
        obj_kind = _kernel.OBJ_EMPIRICAL
        obj_sign = objective.samples.margin_sign
        obj_x = np.ascontiguousarray(objective.samples.features)
        obj_coef = np.zeros(p)
        obj_shift = -objective.offset
        loss = objective.loss
    elif isinstance(objective, AffineConstraint):
        obj_kind = _kernel.OBJ_AFFINE
        obj_sign = 1.0
        obj_x = dummy_rows
        obj_coef = np.zeros(p)
        obj_coef[:dim] = objective.coef
        if objective.uses_alpha:
            obj_coef[dim] = objective.alpha_coeff
        obj_shift = -objective.offset
        loss = None
    else:
        raise ConfigurationError(f"unsupported objective type {type(objective).__name__}")

    leaves = constraint.children if isinstance(constraint, MaxConstraint) else (constraint,)
    m = len(leaves)
    leaf_kind = np.zeros(m, dtype=np.int64)
    leaf_sign = np.zeros(m)
    leaf_offset = np.zeros(m)
    leaf_lo = np.zeros(m, dtype=np.int64)
    leaf_hi = np.zeros(m, dtype=np.int64)
    leaf_coef = np.zeros((m, p))
    rows = []
    row_count = 0
    for k, leaf in enumerate(leaves):
        if isinstance(leaf, EmpiricalConstraint):
            if leaf.samples.dim != dim:
                raise ConfigurationError("constraint sample dimension mismatch")
            if loss is None:
                loss = leaf.loss
            elif leaf.loss != loss:
                raise ConfigurationError("all empirical terms must share one loss")
            leaf_kind[k] = (
                _kernel.LEAF_EMPIRICAL_ALPHA if leaf.uses_alpha else _kernel.LEAF_EMPIRICAL
            )
            if leaf.uses_alpha and not has_alpha:
                raise ConfigurationError("constraint reads a free level but none is configured")
            leaf_sign[k] = leaf.samples.margin_sign
            leaf_offset[k] = leaf.offset
            leaf_lo[k] = row_count
            row_count += leaf.samples.n
            leaf_hi[k] = row_count
            rows.append(leaf.samples.features)
        elif isinstance(leaf, AffineConstraint):
            leaf_kind[k] = _kernel.LEAF_AFFINE
            leaf_offset[k] = leaf.offset
            leaf_coef[k, :dim] = leaf.coef
            if leaf.uses_alpha:
                if not has_alpha:
                    raise ConfigurationError("constraint reads a free level but none is configured")
                leaf_coef[k, dim] = leaf.alpha_coeff
        else:
            raise ConfigurationError(f"unsupported constraint leaf {type(leaf).__name__}")
    x_rows = np.ascontiguousarray(np.concatenate(rows, axis=0)) if rows else dummy_rows

    if loss is None:
        loss_kind, loss_c = _kernel.LOSS_HINGE, 1.0
    else:
        loss_kind = _kernel.LOSS_HINGE if loss.kind == "hinge" else _kernel.LOSS_LOGISTIC
        loss_c = loss.C

    return dict(
        p=p,
        obj_kind=obj_kind,
        obj_sign=obj_sign,
        obj_x=obj_x,
        obj_coef=obj_coef,
        obj_shift=obj_shift,
        loss_kind=loss_kind,
        loss_c=loss_c,
        leaf_kind=leaf_kind,
        leaf_sign=leaf_sign,
        leaf_offset=leaf_offset,
        leaf_lo=leaf_lo,
        leaf_hi=leaf_hi,
        x_rows=x_rows,
        leaf_coef=leaf_coef,
    )


def _infer_dim(objective, constraint):
    for c in (objective, constraint):
        leaves = c.children if isinstance(c, MaxConstraint) else (c,)
        for leaf in leaves:
            if isinstance(leaf, EmpiricalConstraint):
                return leaf.samples.dim
            if isinstance(leaf, AffineConstraint):
                return leaf.coef.shape[0]
    raise ConfigurationError("cannot infer parameter dimension")


def cp_solve(problem: CPProblem, trace_sink=None, trace_every: int = 0, debug: bool = False) -> CPResult:
    """Run the descent-ascent loop, then retract the averaged iterate.

    Deterministic given the problem (including its seed): all randomness flows
    through one counter-based stream.  ``trace_sink`` receives one record per
    ``trace_every`` iterations with keys iteration/objective/constraint/dual.
    """
    dim = _infer_dim(problem.objective, problem.constraint)
    has_alpha = problem.alpha_box is not None
    flat = _flatten(problem.objective, problem.constraint, dim, has_alpha)
    p = flat["p"]

    w = np.zeros(p)
    if problem.theta0 is not None:
        th0 = np.asarray(problem.theta0, dtype=float)
        if th0.shape != (dim,):
            raise ConfigurationError("theta0 dimension mismatch")
        w[:dim] = project_ball(th0, problem.B)
    alpha_lo, alpha_hi = (problem.alpha_box if has_alpha else (0.0, 0.0))
    if has_alpha:
        a0 = problem.alpha0 if problem.alpha0 is not None else 0.0
        w[dim] = min(max(a0, alpha_lo), alpha_hi)
    wsum = np.zeros(p)
    lam = 0.0
    lam_max = 0.0
    eta = problem.eta
    gamma = problem.gamma

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed_entropy(problem.seed))))
    n = problem.n_iters
    trace_cap = 0 if trace_every <= 0 else (_CHUNK // max(trace_every, 1)) + 2
    tr_iter = np.zeros(max(trace_cap, 1), dtype=np.int64)
    tr_f = np.zeros(max(trace_cap, 1))
    tr_g = np.zeros(max(trace_cap, 1))
    tr_lam = np.zeros(max(trace_cap, 1))

    done = 0
    while done < n:
        steps = min(_CHUNK, n - done)
        u_f = rng.random(steps)
        u_g = rng.random(steps)
        status, last_t, lam, lam_max, n_traced = _kernel.run_chunk(
            w,
            lam,
            lam_max,
            wsum,
            done,
            steps,
            eta,
            gamma,
            problem.B,
            dim,
            dim if has_alpha else -1,
            alpha_lo,
            alpha_hi,
            flat["obj_kind"],
            flat["obj_sign"],
            flat["obj_x"],
            flat["obj_coef"],
            flat["obj_shift"],
            flat["loss_kind"],
            flat["loss_c"],
            flat["leaf_kind"],
            flat["leaf_sign"],
            flat["leaf_offset"],
            flat["leaf_lo"],
            flat["leaf_hi"],
            flat["x_rows"],
            flat["leaf_coef"],
            u_f,
            u_g,
            trace_every,
            tr_iter,
            tr_f,
            tr_g,
            tr_lam,
            1 if debug else 0,
        )
        if status == _kernel.STATUS_NONFINITE:
            raise NumericalDivergence(last_t)
        if status in (_kernel.STATUS_BALL_VIOLATION, _kernel.STATUS_NEGATIVE_DUAL):
            raise AssertionError(f"iterate invariant violated at step {last_t} (status {status})")
        if trace_sink is not None and trace_every > 0:
            for i in range(n_traced):
                trace_sink(
                    {
                        "iteration": int(tr_iter[i]),
                        "objective": float(tr_f[i]),
                        "constraint": float(tr_g[i]),
                        "dual": float(tr_lam[i]),
                    }
                )
        done += steps

    w_bar = wsum / n
    theta_bar = w_bar[:dim]
    alpha_bar = None
    if has_alpha:
        # every iterate satisfies the box; re-impose it on the average, whose
        # accumulated rounding can drift a few ulps past the clamp
        alpha_bar = min(max(float(w_bar[dim]), alpha_lo), alpha_hi)

    theta_hat, alpha_hat, dist = project_constraint(
        theta_bar,
        problem.constraint,
        problem.xi,
        problem.B,
        alpha=alpha_bar,
        alpha_box=problem.alpha_box if has_alpha else None,
    )
    if has_alpha and alpha_hat is not None:
        alpha_hat = min(max(alpha_hat, alpha_lo), alpha_hi)

    obj_val = (
        problem.objective.value(theta_hat, alpha_hat)
        if problem.objective.uses_alpha
        else problem.objective.value(theta_hat)
    )
    con_val = _constraint_eval(problem.constraint, theta_hat, alpha_hat)

    return CPResult(
        theta_hat=ParamVector(theta_hat, problem.B),
        averaged_theta=ParamVector(theta_bar, problem.B),
        lambda_final=float(lam),
        objective_value=float(obj_val),
        constraint_value=float(con_val),
        projection_distance=float(dist),
        iterations=n,
        lambda_max=float(lam_max),
        alpha_hat=alpha_hat,
        alpha_bar=alpha_bar,
    )

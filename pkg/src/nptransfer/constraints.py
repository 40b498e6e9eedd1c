"""Convex constraint functions with exact evaluation and stochastic subgradients.

Every constraint maps a parameter vector theta (and, for the joint problems,
an extra scalar level ``alpha``) to a real value; feasibility means value <= 0.
Exact evaluation averages over the full sample set; ``sample`` draws a single
datum and returns an unbiased value/subgradient pair for stochastic solvers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ClassSamples,
    ConfigurationError,
    ErrorBudgets,
    LossSpec,
    empirical_risk,
)


class Constraint:
    """Base interface shared by all constraint kinds."""

    uses_alpha: bool = False

    def value(self, theta, alpha=None) -> float:
        raise NotImplementedError

    def subgrad(self, theta, alpha=None):
        """Full-batch (value-wise exact) subgradient: (d/dtheta, d/dalpha)."""
        raise NotImplementedError

    def sample(self, theta, rng, alpha=None):
        """One-datum stochastic estimate: (value, d/dtheta, d/dalpha)."""
        raise NotImplementedError

    def _need_alpha(self, alpha):
        if self.uses_alpha and alpha is None:
            raise ConfigurationError("this constraint requires an alpha level")


@dataclass(frozen=True)
class EmpiricalConstraint(Constraint):
    """Average of per-sample losses minus a fixed offset.

    value(theta) = mean_i loss(sign * <theta, x_i>) - offset
                   (- alpha when alpha_coeff is -1)

    ``offset`` absorbs levels, statistical slacks and frozen reference risks,
    so the constraint itself never recomputes an earlier stage's output.
    """

    samples: ClassSamples
    loss: LossSpec
    offset: float
    alpha_coeff: float = 0.0

    def __post_init__(self):
        if self.alpha_coeff not in (0.0, -1.0):
            raise ConfigurationError("alpha_coeff must be 0 or -1")
        object.__setattr__(self, "uses_alpha", self.alpha_coeff != 0.0)

    def value(self, theta, alpha=None) -> float:
        self._need_alpha(alpha)
        v = empirical_risk(theta, self.samples, self.loss) - self.offset
        if self.uses_alpha:
            v -= alpha
        return v

    def subgrad(self, theta, alpha=None):
        self._need_alpha(alpha)
        th = np.asarray(getattr(theta, "theta", theta), dtype=float)
        s = self.samples.margin_sign
        z = s * (self.samples.features @ th)
        w = self.loss.slope(z) * s
        g_theta = (self.samples.features.T @ w) / self.samples.n
        return g_theta, self.alpha_coeff

    def sample(self, theta, rng, alpha=None):
        self._need_alpha(alpha)
        th = np.asarray(getattr(theta, "theta", theta), dtype=float)
        i = int(rng.integers(0, self.samples.n))
        x = self.samples.features[i]
        s = self.samples.margin_sign
        z = s * float(th @ x)
        v = float(self.loss.value(z)) - self.offset
        g_theta = (float(self.loss.slope(z)) * s) * x
        if self.uses_alpha:
            v -= alpha
        return v, g_theta, self.alpha_coeff


@dataclass(frozen=True)
class AffineConstraint(Constraint):
    """value = <coef, theta> - offset (+ alpha_coeff * alpha); deterministic."""

    coef: np.ndarray
    offset: float
    alpha_coeff: float = 0.0

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.coef, dtype=float))
        c.setflags(write=False)
        object.__setattr__(self, "coef", c)
        object.__setattr__(self, "uses_alpha", self.alpha_coeff != 0.0)

    def value(self, theta, alpha=None) -> float:
        self._need_alpha(alpha)
        th = np.asarray(getattr(theta, "theta", theta), dtype=float)
        v = float(self.coef @ th) - self.offset
        if self.uses_alpha:
            v += self.alpha_coeff * alpha
        return v

    def subgrad(self, theta, alpha=None):
        self._need_alpha(alpha)
        return self.coef.copy(), self.alpha_coeff

    def sample(self, theta, rng, alpha=None):
        v = self.value(theta, alpha)
        return v, self.coef.copy(), self.alpha_coeff


@dataclass(frozen=True)
class MaxConstraint(Constraint):
    """Pointwise maximum of child constraints.

    The stochastic subgradient first identifies the active child by exact
    (full-batch) evaluation of every child, breaking ties toward the lowest
    index, and then samples a single datum from that child only.  This keeps
    the subgradient valid for the max while retaining single-sample cost in
    the gradient term.
    """

    children: tuple

    def __post_init__(self):
        if len(self.children) == 0:
            raise ConfigurationError("max composition needs at least one child")
        object.__setattr__(self, "children", tuple(self.children))
        object.__setattr__(self, "uses_alpha", any(c.uses_alpha for c in self.children))

    def active_child(self, theta, alpha=None):
        vals = [c.value(theta, alpha) if c.uses_alpha else c.value(theta) for c in self.children]
        k = 0
        best = vals[0]
        for i in range(1, len(vals)):
            if vals[i] > best:
                best = vals[i]
                k = i
        return k, vals

    def value(self, theta, alpha=None) -> float:
        self._need_alpha(alpha)
        _, vals = self.active_child(theta, alpha)
        return max(vals)

    def subgrad(self, theta, alpha=None):
        self._need_alpha(alpha)
        k, _ = self.active_child(theta, alpha)
        child = self.children[k]
        return child.subgrad(theta, alpha if child.uses_alpha else None)

    def sample(self, theta, rng, alpha=None):
        self._need_alpha(alpha)
        k, _ = self.active_child(theta, alpha)
        child = self.children[k]
        return child.sample(theta, rng, alpha if child.uses_alpha else None)


def type1_constraint(
    samples0: ClassSamples,
    loss: LossSpec,
    alpha: float,
    slack: float,
    tighten: bool = False,
) -> EmpiricalConstraint:
    """False-positive-side risk constraint at level alpha with statistical slack.

    The relaxed form uses offset alpha + slack; ``tighten=True`` builds the
    warm-start variant with offset alpha - slack, which must stay positive.
    """
    if samples0.class_label != 0:
        raise ConfigurationError("type1 constraints average over class-0 samples")
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError("alpha must lie in (0, 1)")
    if slack <= 0:
        raise ConfigurationError("slack must be positive")
    if tighten:
        if alpha - slack <= 0:
            raise ConfigurationError(
                f"tightened level alpha - slack = {alpha - slack:.6g} is not positive; "
                "increase the class-0 target sample count or alpha"
            )
        return EmpiricalConstraint(samples0, loss, offset=alpha - slack)
    return EmpiricalConstraint(samples0, loss, offset=alpha + slack)


def type1_alpha_constraint(
    source0: ClassSamples, loss: LossSpec, slack: float
) -> EmpiricalConstraint:
    """Source false-positive constraint affine in the free level alpha.

    value(theta, alpha) = risk(theta) - alpha - slack; slope in alpha is -1.
    """
    if source0.class_label != 0:
        raise ConfigurationError("type1 constraints average over class-0 samples")
    if slack <= 0:
        raise ConfigurationError("slack must be positive")
    return EmpiricalConstraint(source0, loss, offset=slack, alpha_coeff=-1.0)


def type2_gap_constraint(
    samples1: ClassSamples,
    loss: LossSpec,
    theta_ref,
    eps: float,
    multiplier: float,
) -> EmpiricalConstraint:
    """Bound the class-1 risk by a frozen reference risk plus multiplier * eps.

    The reference risk is computed once here and baked into the offset, so a
    later stage cannot drift an earlier stage's anchor.
    """
    if samples1.class_label != 1:
        raise ConfigurationError("type2 constraints average over class-1 samples")
    if multiplier not in (1, 2, 6):
        raise ConfigurationError("slack multiplier must be one of 1, 2, 6")
    ref_risk = empirical_risk(theta_ref, samples1, loss)
    return EmpiricalConstraint(samples1, loss, offset=ref_risk + multiplier * eps)


def max_of(children) -> Constraint:
    """Compose constraints by pointwise maximum; a singleton passes through."""
    children = tuple(children)
    if len(children) == 0:
        raise ConfigurationError("max composition needs at least one child")
    if len(children) == 1:
        return children[0]
    flat = []
    for c in children:
        if isinstance(c, MaxConstraint):
            flat.extend(c.children)
        else:
            flat.append(c)
    return MaxConstraint(tuple(flat))


def dual_range_bound(loss: LossSpec, budgets: ErrorBudgets) -> float:
    """Uniform bound on |constraint(theta; datum)|: 2C plus the largest budget."""
    return 2.0 * loss.C + budgets.max_eps


def risk_objective(samples: ClassSamples, loss: LossSpec) -> EmpiricalConstraint:
    """Plain empirical risk packaged as a zero-offset constraint-like objective."""
    return EmpiricalConstraint(samples, loss, offset=0.0)

"""Exact brute-force references over a finite hypothesis class.

These routines re-derive the selection procedure by exhaustive scans over a
tabulated grid of hypotheses.  They are deliberately independent of the
stochastic solver so the two can verify each other: the tables are plain
risk arrays and every set is an explicit index set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, ErrorBudgets, LossSpec
from .transfer import TransferData


class InfeasibleTable(RuntimeError):
    """No tabulated hypothesis satisfies the tightened target constraint."""


@dataclass(frozen=True)
class FiniteClass:
    """A finite grid of linear hypotheses standing in for the full class."""

    thetas: np.ndarray
    description: str = ""

    def __post_init__(self):
        th = np.ascontiguousarray(np.asarray(self.thetas, dtype=float))
        if th.ndim != 2 or th.shape[0] < 1:
            raise ConfigurationError("thetas must be a nonempty 2-d array")
        th.setflags(write=False)
        object.__setattr__(self, "thetas", th)

    @property
    def m(self) -> int:
        return self.thetas.shape[0]

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]


def threshold_grid(t_lo: float, t_hi: float, m: int) -> FiniteClass:
    """Grid of threshold rules h(x) = x - t over intercept-augmented features.

    Each row is (1, -t); apply to features of the form (x, 1).
    """
    if m < 1 or t_hi <= t_lo:
        raise ConfigurationError("need m >= 1 and t_hi > t_lo")
    ts = np.linspace(t_lo, t_hi, m)
    thetas = np.column_stack([np.ones(m), -ts])
    return FiniteClass(thetas, description=f"thresholds[{t_lo},{t_hi}]x{m}")


@dataclass(frozen=True)
class RiskTable:
    """Empirical risks of every hypothesis on the four sample sets."""

    r0s: np.ndarray
    r0t: np.ndarray
    r1s: np.ndarray
    r1t: np.ndarray

    def __post_init__(self):
        arrs = {}
        m = None
        for name in ("r0s", "r0t", "r1s", "r1t"):
            a = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            if a.ndim != 1:
                raise ConfigurationError("risk columns must be 1-d")
            if m is None:
                m = a.shape[0]
            elif a.shape[0] != m:
                raise ConfigurationError("risk columns must share one length")
            a.setflags(write=False)
            arrs[name] = a
        for name, a in arrs.items():
            object.__setattr__(self, name, a)

    @property
    def m(self) -> int:
        return self.r0t.shape[0]


@dataclass(frozen=True)
class OracleOutcome:
    chosen_index: int
    alpha_hat_s: float
    h_star_indices: np.ndarray
    h_prime_indices: np.ndarray
    h1s_indices: np.ndarray
    h1t_indices: np.ndarray
    branch: str


def tabulate_risks(cls: FiniteClass, data: TransferData, loss: LossSpec) -> RiskTable:
    """Exact empirical risks of every grid hypothesis on all four sets."""

    def column(samples):
        z = samples.margin_sign * (samples.features @ cls.thetas.T)
        return loss.value(z).mean(axis=0)

    return RiskTable(
        r0s=column(data.source0),
        r0t=column(data.target0),
        r1s=column(data.source1),
        r1t=column(data.target1),
    )


def oracle_procedure(table: RiskTable, alpha: float, budgets: ErrorBudgets) -> OracleOutcome:
    """Set-based selection by exhaustive scan.

    Builds the near-optimal target band around the tightened-constraint risk
    minimizer, aligns the source level, intersects, restricts to near-minimal
    class-1 risks per domain, and picks the final hypothesis.  Ties break
    toward the lowest index throughout, and the source-level membership test
    reuses the same subtracted form that defines alpha_hat_s so the chain is
    float-exact.
    """
    b = budgets
    m = table.m
    idx = np.arange(m)

    # tightened-level candidates; the slack and budget cancel to a plain alpha cut
    tight = table.r0t <= alpha
    if not np.any(tight):
        raise InfeasibleTable(
            f"no hypothesis has target class-0 risk <= alpha = {alpha}"
        )
    ref_type2 = table.r1t[tight].min()

    in_target = table.r0t <= alpha + b.eps_0t
    h_star_mask = in_target & (table.r1t <= ref_type2 + 6.0 * b.eps_1t)
    h_star = idx[h_star_mask]

    shifted = table.r0s[h_star_mask] - b.eps_0s
    alpha_hat_s = max(alpha, float(shifted.min()))

    h_prime_mask = h_star_mask & ((table.r0s - b.eps_0s) <= alpha_hat_s)
    h_prime = idx[h_prime_mask]

    min_r1s = table.r1s[h_prime_mask].min()
    min_r1t = table.r1t[h_prime_mask].min()
    h1s_mask = h_prime_mask & (table.r1s <= min_r1s + 2.0 * b.eps_1s)
    h1t_mask = h_prime_mask & (table.r1t <= min_r1t + 2.0 * b.eps_1t)
    both = h1s_mask & h1t_mask

    if np.any(both):
        chosen = int(idx[both][0])
        branch = "intersection"
    else:
        inside = idx[h_prime_mask]
        chosen = int(inside[np.argmin(table.r1t[h_prime_mask])])
        branch = "fallback"

    return OracleOutcome(
        chosen_index=chosen,
        alpha_hat_s=alpha_hat_s,
        h_star_indices=h_star,
        h_prime_indices=h_prime,
        h1s_indices=idx[h1s_mask],
        h1t_indices=idx[h1t_mask],
        branch=branch,
    )


def _std_normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _std_normal_quantile(p: float) -> float:
    if not (0.0 < p < 1.0):
        raise ConfigurationError("quantile argument must lie in (0, 1)")
    lo, hi = -13.0, 13.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _std_normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    return 0.5 * (lo + hi)


def np_lemma_threshold(mean0: float, sd0: float, alpha: float) -> float:
    """Threshold t with indicator false-positive rate exactly alpha when the
    negative class is Normal(mean0, sd0^2) and the rule is 1{x >= t}."""
    if sd0 <= 0:
        raise ConfigurationError("sd0 must be positive")
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError("alpha must lie in (0, 1)")
    return mean0 + sd0 * _std_normal_quantile(1.0 - alpha)


def transfer_moduli(population_table: RiskTable, alpha: float, eps: float):
    """Worst-case translation of source performance into target performance.

    The pivot is the largest-target-risk member of the set minimizing source
    class-1 risk inside the intersection of the two alpha-feasible sets; the
    first modulus maps a source excess-risk allowance to the worst target
    excess risk, the second maps a source class-0 level to the worst target
    class-0 risk.  The second is None when no hypothesis meets the level.
    """
    t = population_table
    feasible = (t.r0s <= alpha) & (t.r0t <= alpha)
    if not np.any(feasible):
        raise InfeasibleTable("no hypothesis is alpha-feasible in both domains")
    min_r1s = t.r1s[feasible].min()
    pivot_set = feasible & (t.r1s == min_r1s)
    pivot_candidates = np.where(pivot_set)[0]
    pivot = int(pivot_candidates[np.argmax(t.r1t[pivot_set])])

    excess_s = t.r1s - t.r1s[pivot]
    excess_t = t.r1t - t.r1t[pivot]
    admissible = excess_s <= eps
    phi1 = float(excess_t[admissible].max()) if np.any(admissible) else 0.0

    within_level = t.r0s <= eps
    phi0 = float(t.r0t[within_level].max()) if np.any(within_level) else None
    return phi1, phi0

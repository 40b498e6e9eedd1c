"""Surrogate losses, linear hypotheses, empirical risks, and statistical error budgets."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)


class ConfigurationError(ValueError):
    """Supplied constants are out of range or mutually inconsistent."""


def seed_entropy(seed) -> list[int]:
    """Flatten a nested seed description into SeedSequence entropy words.

    Tuples/lists recurse, strings hash to a stable 64-bit word, ints pass
    through, so composite seeds like (base, stage_tag) stay deterministic.
    """
    if isinstance(seed, (tuple, list)):
        out: list[int] = []
        for part in seed:
            out.extend(seed_entropy(part))
        return out
    if isinstance(seed, str):
        return [int.from_bytes(hashlib.sha256(seed.encode()).digest()[:8], "big")]
    return [int(seed)]


def make_generator(seed) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by a possibly-composite seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed_entropy(seed))))


@dataclass(frozen=True)
class LossSpec:
    """A monotone nondecreasing surrogate loss normalized to value 1 at margin 0.

    Two families are supported:

    * ``hinge``: max(0, 1 + z), clipped above at C.  The clip is part of the
      loss definition; with a properly sized C the clip region is outside the
      reachable margin range.
    * ``logistic``: log2(1 + exp(z)), smooth with bounded curvature.

    L is a global Lipschitz constant of the loss and C a uniform bound on the
    values the loss takes at reachable margins.  Both are carried explicitly
    so gradient and dual-range bounds can be derived downstream.
    """

    kind: str
    L: float
    C: float

    def __post_init__(self):
        if self.kind not in ("hinge", "logistic"):
            raise ConfigurationError(f"unknown loss kind {self.kind!r}")
        if not (self.L > 0 and self.C > 0):
            raise ConfigurationError("loss constants L and C must be positive")

    def value(self, z):
        """Loss value, vectorized over z."""
        z = np.asarray(z, dtype=float)
        if self.kind == "hinge":
            return np.clip(1.0 + z, 0.0, self.C)
        # log2(1 + e^z), computed stably for large |z|
        out = np.where(
            z > 35.0,
            z / LN2,
            np.log1p(np.exp(np.minimum(z, 35.0))) / LN2,
        )
        return out

    def slope(self, z):
        """Derivative of the loss, with a fixed subgradient convention at kinks.

        For ``hinge``: 0 strictly below the kink at z = -1, slope 1 at and
        above it, and 0 at and above the upper clip at z = C - 1.
        """
        z = np.asarray(z, dtype=float)
        if self.kind == "hinge":
            return np.where((z >= -1.0) & (z < self.C - 1.0), 1.0, 0.0)
        return _sigmoid(z) / LN2

    def curvature_bound(self) -> float | None:
        """Upper bound on the second derivative; None for nonsmooth kinds."""
        if self.kind == "logistic":
            return 0.25 / LN2
        return None


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def hinge_loss(margin_bound: float) -> LossSpec:
    """Hinge-family loss sized to cover margins up to ``margin_bound``."""
    if margin_bound <= 0:
        raise ConfigurationError("margin_bound must be positive")
    return LossSpec("hinge", L=1.0, C=1.0 + margin_bound)


def logistic_loss(margin_bound: float) -> LossSpec:
    """Logistic-family loss sized to cover margins up to ``margin_bound``."""
    if margin_bound <= 0:
        raise ConfigurationError("margin_bound must be positive")
    if margin_bound > 700.0:
        c = margin_bound / LN2
    else:
        c = math.log1p(math.exp(margin_bound)) / LN2
    return LossSpec("logistic", L=1.0 / LN2, C=c)


def surrogate_eval(loss: LossSpec, z: float) -> float:
    """Evaluate the loss at a single margin value."""
    if not math.isfinite(z):
        raise ValueError(f"margin must be finite, got {z!r}")
    return float(loss.value(z))


@dataclass(frozen=True)
class ParamVector:
    """Parameter vector of a linear-in-features hypothesis, norm-bounded by B."""

    theta: np.ndarray
    B: float

    def __post_init__(self):
        th = np.ascontiguousarray(np.asarray(self.theta, dtype=float))
        if th.ndim != 1:
            raise ConfigurationError("theta must be a 1-d vector")
        if not np.all(np.isfinite(th)):
            raise ConfigurationError("theta must be finite")
        if self.B <= 0:
            raise ConfigurationError("norm bound B must be positive")
        nrm = float(np.linalg.norm(th))
        if nrm > self.B * (1.0 + 1e-9) + 1e-12:
            raise ConfigurationError(f"norm {nrm} exceeds bound {self.B}")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class ClassSamples:
    """Immutable feature array for one (class, domain) pair.

    ``class_label`` 0 means the loss is applied to +h(x) (false-positive side),
    1 means -h(x).  ``domain_label`` is 'S' or 'T'.
    """

    features: np.ndarray
    class_label: int
    domain_label: str

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.features, dtype=float))
        if x.ndim != 2 or x.shape[0] < 1:
            raise ConfigurationError("features must be a nonempty 2-d array")
        if not np.all(np.isfinite(x)):
            raise ConfigurationError("features must be finite")
        if self.class_label not in (0, 1):
            raise ConfigurationError("class_label must be 0 or 1")
        if self.domain_label not in ("S", "T"):
            raise ConfigurationError("domain_label must be 'S' or 'T'")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def margin_sign(self) -> float:
        """+1 for class 0 (loss on h), -1 for class 1 (loss on -h)."""
        return 1.0 if self.class_label == 0 else -1.0


def predict(theta: ParamVector, x) -> float:
    """Score h(x) = <theta, x>; the induced decision rule is 1{h(x) >= 0}."""
    x = np.asarray(x, dtype=float)
    if x.shape != (theta.dim,):
        raise ConfigurationError(f"feature dim {x.shape} does not match {theta.dim}")
    return float(theta.theta @ x)


def margins(theta_arr: np.ndarray, samples: ClassSamples) -> np.ndarray:
    """Raw scores h(x_i) for every row of a sample set."""
    theta_arr = np.asarray(theta_arr, dtype=float)
    if theta_arr.shape[0] != samples.dim:
        raise ConfigurationError("parameter and feature dimensions disagree")
    return samples.features @ theta_arr


def empirical_risk(theta, samples: ClassSamples, loss: LossSpec) -> float:
    """Mean surrogate loss of theta on one sample set.

    Class 0 averages loss(h(x)); class 1 averages loss(-h(x)).
    """
    th = theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, float)
    z = samples.margin_sign * margins(th, samples)
    return float(np.mean(loss.value(z)))


def risk_gradient(theta, samples: ClassSamples, loss: LossSpec) -> np.ndarray:
    """Gradient (or fixed-convention subgradient) of empirical_risk in theta."""
    th = theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, float)
    s = samples.margin_sign
    z = s * margins(th, samples)
    w = loss.slope(z) * s
    return (samples.features.T @ w) / samples.n


@dataclass(frozen=True)
class ErrorBudgets:
    """The four statistical tolerances eps_{class,domain} plus their shared scale.

    c_tilde = 8 * b_h * L + 2 * C * sqrt(2 * log(2/delta)) and each budget is
    c_tilde / sqrt(n) for its sample count.  b_h bounds the hypothesis-class
    complexity (scaled Rademacher) and is always caller-supplied.
    """

    c_tilde: float
    eps_0s: float
    eps_0t: float
    eps_1s: float
    eps_1t: float
    delta: float
    b_h: float

    def __post_init__(self):
        for name in ("c_tilde", "eps_0s", "eps_0t", "eps_1s", "eps_1t"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be strictly positive")
        if not (0.0 < self.delta < 1.0):
            raise ConfigurationError("delta must lie in (0, 1)")

    @property
    def max_eps(self) -> float:
        return max(self.eps_0s, self.eps_0t, self.eps_1s, self.eps_1t)


def make_error_budgets(
    n_0s: int,
    n_0t: int,
    n_1s: int,
    n_1t: int,
    b_h: float,
    lipschitz: float,
    bound: float,
    delta: float,
) -> ErrorBudgets:
    """Build the error budgets from sample counts and statistical constants.

    ``lipschitz`` and ``bound`` play the roles of the loss constants L and C
    in the concentration constant; at desk scale they may be chosen smaller
    than the literal loss constants (see README).
    """
    for name, n in (("n_0s", n_0s), ("n_0t", n_0t), ("n_1s", n_1s), ("n_1t", n_1t)):
        if n < 1:
            raise ConfigurationError(f"{name} must be >= 1")
    if not (0.0 < delta < 1.0):
        raise ConfigurationError("delta must lie in (0, 1)")
    if b_h <= 0 or lipschitz <= 0 or bound <= 0:
        raise ConfigurationError("b_h, lipschitz and bound must be positive")
    c_tilde = 8.0 * b_h * lipschitz + 2.0 * bound * math.sqrt(2.0 * math.log(2.0 / delta))
    return ErrorBudgets(
        c_tilde=c_tilde,
        eps_0s=c_tilde / math.sqrt(n_0s),
        eps_0t=c_tilde / math.sqrt(n_0t),
        eps_1s=c_tilde / math.sqrt(n_1s),
        eps_1t=c_tilde / math.sqrt(n_1t),
        delta=delta,
        b_h=b_h,
    )


def max_feature_norm(*sample_sets: ClassSamples) -> float:
    """Largest row norm across the given sample sets."""
    if not sample_sets:
        raise ConfigurationError("at least one sample set required")
    return max(float(np.max(np.linalg.norm(s.features, axis=1))) for s in sample_sets)


def validate_loss_cover(loss: LossSpec, ball_radius: float, *sample_sets: ClassSamples) -> None:
    """Check that the declared C covers every margin reachable inside the ball.

    A violation is a configuration error rather than a silent clip: the loss
    constants must be re-derived for the actual data scale.
    """
    bound = ball_radius * max_feature_norm(*sample_sets)
    if loss.kind == "hinge":
        required = 1.0 + bound
    else:
        required = math.log1p(math.exp(min(bound, 700.0))) / LN2
    if loss.C < required - 1e-9:
        raise ConfigurationError(
            f"loss bound C={loss.C} does not cover reachable margins "
            f"(needs >= {required:.6g} for ball radius {ball_radius})"
        )


def derive_gradient_bound(loss: LossSpec, *sample_sets: ClassSamples) -> float:
    """Bound on the norm of any per-sample risk gradient: L * max row norm."""
    return loss.L * max_feature_norm(*sample_sets)


def derive_smoothness_bound(loss: LossSpec, *sample_sets: ClassSamples) -> float | None:
    """Lipschitz constant of the risk gradient, or None for nonsmooth losses."""
    curv = loss.curvature_bound()
    if curv is None:
        return None
    return curv * max_feature_norm(*sample_sets) ** 2

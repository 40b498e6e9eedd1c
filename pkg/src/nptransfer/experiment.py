"""Experiment harness: three methods, multi-trial sweeps over source size,
indicator-loss evaluation on held-out target data, and plot-data emission.

The adaptive method is compared against two baselines that solve the plain
one-domain program (minimize class-1 risk subject to the class-0 risk staying
below alpha plus its budget) on target-only and source-only data.  All three
are scored on one shared held-out target test set with both the indicator
decision rule 1{h(x) >= 0} and the surrogate loss.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass

import numpy as np

from .core import (
    ClassSamples,
    seed_entropy,
    ConfigurationError,
    LossSpec,
    derive_gradient_bound,
    derive_smoothness_bound,
    empirical_risk,
    hinge_loss,
    logistic_loss,
    make_error_budgets,
    max_feature_norm,
    validate_loss_cover,
)
from .constraints import risk_objective, type1_constraint
from .data import DatasetBundle, load_csv, make_gaussian_bundle, persist_run, subsample
from .solver import CPProblem, cp_solve, default_step_constant
from .transfer import TransferConfig, TransferData, run_transfer

METHODS = ("TLA", "only-target", "only-source")

SCENARIO_NAMES = ("informative-source", "shared-mu0", "uninformative-source")


def scenario_means(name: str, mu1: float, n_features: int):
    """Mean vectors (target_mu0, target_mu1, source_mu0, source_mu1).

    Class 0 sits at the origin in both domains and class 1 is shifted by mu1
    along the first coordinate; the remaining coordinates are pure noise, so
    small-sample fits overweight them and a large source corrects that.  The
    informative and shared geometries use an identical source, the
    uninformative one negates the source class-1 shift so source-optimal
    rules point the wrong way on target.
    """
    zero = np.zeros(n_features)
    # class-1 shift spread evenly over all features with total norm mu1, so the
    # direction itself must be estimated and small fits carry angular error
    shift = np.full(n_features, mu1 / math.sqrt(n_features))
    if name in ("informative-source", "shared-mu0"):
        return (zero, shift, zero, shift)
    if name == "uninformative-source":
        return (zero, shift, zero, -shift)
    raise ConfigurationError(f"unknown scenario {name!r}")


@dataclass
class ExperimentConfig:
    """Sweep definition plus every constant the pipeline needs.

    ``stat_l``/``stat_c``/``b_h`` feed the error budgets; at desk scale they
    are calibration constants chosen so the budgets are informative at the
    configured sample sizes (see README).  ``scenario`` is one of the named
    synthetic geometries or 'csv'.
    """

    alpha: float = 0.1
    trials: int = 10
    n_target: int = 40
    source_sizes: tuple = (100, 400, 900)
    scenario: str = "informative-source"
    n_test: int = 1700
    seed: int = 0
    output_dir: str = "runs"
    loss_kind: str = "logistic"
    B: float = 4.0
    mu1: float = 0.8
    n_features: int = 2
    var0: float = 0.01
    var1: float = 1.0
    b_h: float = 0.01
    stat_l: float = 1.0
    stat_c: float = 0.035
    delta: float = 0.1
    r_value: float = 0.3
    n_iters: int = 120_000
    c_eta: float | None = 0.15
    intercept: bool = True
    source_csv: str | None = None
    target_csv: str | None = None
    label_column: str = "label"
    feature_columns: tuple = ()

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        sizes = tuple(int(s) for s in self.source_sizes)
        if not sizes or list(sizes) != sorted(set(sizes)):
            raise ConfigurationError("source_sizes must be nonempty and strictly ascending")
        self.source_sizes = sizes
        if self.scenario not in (*SCENARIO_NAMES, "csv"):
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "csv" and not (self.source_csv and self.target_csv and self.feature_columns):
            raise ConfigurationError("csv scenario needs source_csv, target_csv and feature_columns")


@dataclass(frozen=True)
class TrialMetrics:
    method: str
    type1_test: float
    type2_test: float
    type1_surrogate: float
    type2_surrogate: float
    seed: object
    test_hash: str
    branch: str | None = None
    error: str | None = None

    def __post_init__(self):
        for name in ("type1_test", "type2_test"):
            v = getattr(self, name)
            if not math.isnan(v) and not (0.0 <= v <= 1.0):
                raise ConfigurationError(f"{name} must lie in [0, 1]")

    def as_dict(self):
        return {
            "method": self.method,
            "type1_test": self.type1_test,
            "type2_test": self.type2_test,
            "type1_surrogate": self.type1_surrogate,
            "type2_surrogate": self.type2_surrogate,
            "seed": str(self.seed),
            "test_hash": self.test_hash,
            "branch": self.branch or "",
            "error": self.error or "",
        }


def _make_loss(kind: str, ball_radius: float, *sample_sets) -> LossSpec:
    bound = ball_radius * max_feature_norm(*sample_sets)
    return hinge_loss(bound) if kind == "hinge" else logistic_loss(bound)


def make_bundle(cfg: ExperimentConfig, n_source: int, trial_seed) -> DatasetBundle:
    if cfg.scenario == "csv":
        s0, s1 = load_csv(cfg.source_csv, cfg.label_column, cfg.feature_columns, "S")
        t0, t1 = load_csv(cfg.target_csv, cfg.label_column, cfg.feature_columns, "T")
        if cfg.intercept:
            from .data import add_intercept

            s0 = ClassSamples(add_intercept(s0.features), 0, "S")
            s1 = ClassSamples(add_intercept(s1.features), 1, "S")
            t0 = ClassSamples(add_intercept(t0.features), 0, "T")
            t1 = ClassSamples(add_intercept(t1.features), 1, "T")
        need_t = cfg.n_target + cfg.n_test
        if t0.n < need_t or t1.n < need_t:
            raise ConfigurationError("target csv too small for n_target + n_test")
        perm0 = subsample(t0, t0.n, (trial_seed, "t0"))
        perm1 = subsample(t1, t1.n, (trial_seed, "t1"))
        target0 = ClassSamples(perm0.features[: cfg.n_target], 0, "T")
        test0 = ClassSamples(perm0.features[cfg.n_target : need_t], 0, "T")
        target1 = ClassSamples(perm1.features[: cfg.n_target], 1, "T")
        test1 = ClassSamples(perm1.features[cfg.n_target : need_t], 1, "T")
        return DatasetBundle(
            source0=subsample(s0, min(n_source, s0.n), (trial_seed, "s0")),
            source1=subsample(s1, min(n_source, s1.n), (trial_seed, "s1")),
            target0=target0,
            target1=target1,
            test0=test0,
            test1=test1,
            manifest={"kind": "csv", "source": cfg.source_csv, "target": cfg.target_csv},
        )
    mus = scenario_means(cfg.scenario, cfg.mu1, cfg.n_features)
    return make_gaussian_bundle(
        *mus,
        n_target=cfg.n_target,
        n_source=n_source,
        n_test=cfg.n_test,
        seed=trial_seed,
        var0=cfg.var0,
        var1=cfg.var1,
        intercept=cfg.intercept,
    )


def make_transfer_config(cfg: ExperimentConfig, bundle: DatasetBundle, trial_seed) -> TransferConfig:
    train = bundle.training()
    sets = (train.source0, train.source1, train.target0, train.target1,
            bundle.test0, bundle.test1)
    loss = _make_loss(cfg.loss_kind, cfg.B, *sets)
    validate_loss_cover(loss, cfg.B, *sets)
    budgets = make_error_budgets(
        train.source0.n, train.target0.n, train.source1.n, train.target1.n,
        cfg.b_h, cfg.stat_l, cfg.stat_c, cfg.delta,
    )
    grad_bound = derive_gradient_bound(loss, *sets)
    smooth = derive_smoothness_bound(loss, *sets)
    if smooth is None:
        # nonsmooth loss: pragmatic curvature proxy for the slackness formula
        smooth = loss.L**2
    # feasible start for the warm stage: most negative constant score available
    theta0 = None
    if cfg.intercept:
        theta0 = np.zeros(train.target0.dim)
        theta0[-1] = -cfg.B
    return TransferConfig(
        alpha=cfg.alpha,
        budgets=budgets,
        loss=loss,
        B=cfg.B,
        r_warm=cfg.r_value,
        r_alpha=cfg.r_value,
        r_sub_t=cfg.r_value,
        r_sub_s=cfg.r_value,
        r_final=cfg.r_value,
        grad_bound=grad_bound,
        grad_smoothness=smooth,
        seed=int(np.random.SeedSequence(seed_entropy(trial_seed)).generate_state(1)[0]),
        c_eta=cfg.c_eta,
        n_iters=cfg.n_iters,
        theta0=theta0,
    )


def _baseline(samples0, samples1, tcfg: TransferConfig, eps_0: float, eps_1: float, seed):
    """Plain one-domain program: min class-1 risk s.t. class-0 risk <= alpha + eps."""
    constraint = type1_constraint(samples0, tcfg.loss, tcfg.alpha, eps_0)
    objective = risk_objective(samples1, tcfg.loss)
    rho_sq = tcfg.B**2 + (tcfg.grad_bound / tcfg.r_warm) ** 2
    c_eta = tcfg.c_eta if tcfg.c_eta is not None else default_step_constant(
        math.sqrt(rho_sq), tcfg.dual_range, tcfg.budgets.delta
    )
    n = tcfg.n_iters if tcfg.n_iters is not None else 200_000
    problem = CPProblem(
        theta0=np.asarray(tcfg.theta0, dtype=float) if tcfg.theta0 is not None else None,
        objective=objective,
        constraint=constraint,
        B=tcfg.B,
        xi=0.0,
        eps=eps_1,
        delta=tcfg.budgets.delta,
        c_eta=c_eta,
        n_iters=n,
        grad_bound=tcfg.grad_bound,
        seed=int(np.random.SeedSequence(seed_entropy(seed)).generate_state(1)[0]),
        r=tcfg.r_warm,
    )
    return cp_solve(problem)


def baseline_only_target(data: TransferData, tcfg: TransferConfig):
    b = tcfg.budgets
    return _baseline(data.target0, data.target1, tcfg, b.eps_0t, b.eps_1t, (tcfg.seed, "ot"))


def baseline_only_source(data: TransferData, tcfg: TransferConfig):
    b = tcfg.budgets
    return _baseline(data.source0, data.source1, tcfg, b.eps_0s, b.eps_1s, (tcfg.seed, "os"))


def test_set_hash(test0: ClassSamples, test1: ClassSamples) -> str:
    h = hashlib.sha256()
    h.update(test0.features.tobytes())
    h.update(test1.features.tobytes())
    return h.hexdigest()[:16]


def evaluate(theta, bundle: DatasetBundle, loss: LossSpec) -> dict:
    """Indicator and surrogate errors of one hypothesis on the held-out sets."""
    th = np.asarray(getattr(theta, "theta", theta), dtype=float)
    scores0 = bundle.test0.features @ th
    scores1 = bundle.test1.features @ th
    return {
        "type1_test": float(np.mean(scores0 >= 0.0)),
        "type2_test": float(np.mean(scores1 < 0.0)),
        "type1_surrogate": empirical_risk(th, bundle.test0, loss),
        "type2_surrogate": empirical_risk(th, bundle.test1, loss),
    }


def run_trial(cfg: ExperimentConfig, n_source: int, trial_seed) -> list[TrialMetrics]:
    """One data draw, three methods, one shared evaluation."""
    bundle = make_bundle(cfg, n_source, trial_seed)
    tcfg = make_transfer_config(cfg, bundle, trial_seed)
    train = bundle.training()
    thash = test_set_hash(bundle.test0, bundle.test1)

    def run_method(name):
        if name == "TLA":
            result = run_transfer(train, tcfg)
            return result.theta_hat, result.branch
        if name == "only-target":
            return baseline_only_target(train, tcfg).theta_hat, None
        return baseline_only_source(train, tcfg).theta_hat, None

    metrics = []
    for name in METHODS:
        try:
            theta, branch = run_method(name)
            scores = evaluate(theta, bundle, tcfg.loss)
            metrics.append(
                TrialMetrics(method=name, seed=trial_seed, test_hash=thash,
                             branch=branch, **scores)
            )
        except Exception as exc:  # record, keep the other methods running
            metrics.append(
                TrialMetrics(
                    method=name,
                    type1_test=float("nan"),
                    type2_test=float("nan"),
                    type1_surrogate=float("nan"),
                    type2_surrogate=float("nan"),
                    seed=trial_seed,
                    test_hash=thash,
                    branch=None,
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
    return metrics


METRIC_NAMES = ("type1_test", "type2_test", "type1_surrogate", "type2_surrogate")


def aggregate_rows(records):
    """Mean / median / standard error per (n_source, method, metric)."""
    keys = sorted({(r["n_source"], r["method"]) for r in records})
    rows = []
    for n_source, method in keys:
        vals = [r for r in records if r["n_source"] == n_source and r["method"] == method]
        for metric in METRIC_NAMES:
            xs = np.asarray([v[metric] for v in vals if not math.isnan(v[metric])])
            if xs.size == 0:
                continue
            rows.append(
                {
                    "n_source": n_source,
                    "method": method,
                    "metric": metric,
                    "mean": float(xs.mean()),
                    "median": float(np.median(xs)),
                    "stderr": float(xs.std(ddof=1) / math.sqrt(xs.size)) if xs.size > 1 else 0.0,
                }
            )
    return rows


def run_sweep(cfg: ExperimentConfig):
    """Full grid of source sizes x trials; returns (records, aggregate rows).

    Persists per-trial records, the aggregate CSV and a manifest under
    cfg.output_dir.  Partial failures are recorded per method; the sweep only
    counts as failed when every single trial failed.
    """
    os.makedirs(cfg.output_dir, exist_ok=True)
    trial_dir = os.path.join(cfg.output_dir, "trials")
    os.makedirs(trial_dir, exist_ok=True)

    records = []
    for n_source in cfg.source_sizes:
        for trial in range(cfg.trials):
            trial_seed = (cfg.seed, int(n_source), trial)
            for tm in run_trial(cfg, n_source, trial_seed):
                rec = {"n_source": int(n_source), "trial": trial, **tm.as_dict()}
                records.append(rec)
                persist_run(
                    rec,
                    os.path.join(trial_dir, f"trial_{n_source}_{trial}_{tm.method}.txt"),
                )

    rows = aggregate_rows(records)
    agg_path = os.path.join(cfg.output_dir, "aggregate.csv")
    with open(agg_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["n_source", "method", "metric", "mean", "median", "stderr"]
        )
        writer.writeheader()
        writer.writerows(rows)

    persist_run(
        {
            "scenario": cfg.scenario,
            "alpha": cfg.alpha,
            "trials": cfg.trials,
            "n_target": cfg.n_target,
            "n_test": cfg.n_test,
            "source_sizes": list(cfg.source_sizes),
            "seed": cfg.seed,
            "loss_kind": cfg.loss_kind,
            "rng": "philox",
        },
        os.path.join(cfg.output_dir, "manifest.txt"),
    )
    return records, rows

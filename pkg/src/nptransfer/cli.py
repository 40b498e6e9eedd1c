"""Command-line harness.

Subcommands:
  sweep         run the full source-size x trial grid and write plot data
  trial         run one trial at one source size and print its metrics
  oracle-check  self-check of the finite-class selection procedure

Exit codes: 0 success, 1 total failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .core import ConfigurationError, logistic_loss, make_error_budgets
from .data import make_gaussian_bundle
from .experiment import ExperimentConfig, run_sweep, run_trial
from .oracle import oracle_procedure, tabulate_risks, threshold_grid


def _load_config(args) -> ExperimentConfig:
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values.update(json.load(fh))
    if args.scenario is not None:
        values["scenario"] = args.scenario
    if args.alpha is not None:
        values["alpha"] = args.alpha
    if args.seed is not None:
        values["seed"] = args.seed
    if args.out is not None:
        values["output_dir"] = args.out
    if "source_sizes" in values:
        values["source_sizes"] = tuple(values["source_sizes"])
    return ExperimentConfig(**values)


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    records, rows = run_sweep(cfg)
    failures = sum(1 for r in records if r["error"])
    print(f"wrote {len(records)} trial records and {len(rows)} aggregate rows to {cfg.output_dir}")
    if failures:
        print(f"{failures} method runs failed (recorded per trial)")
    return 1 if failures == len(records) else 0


def _cmd_trial(args) -> int:
    cfg = _load_config(args)
    n_source = args.n_source if args.n_source is not None else cfg.source_sizes[0]
    metrics = run_trial(cfg, n_source, (cfg.seed, int(n_source), 0))
    for tm in metrics:
        if tm.error:
            print(f"{tm.method}: FAILED {tm.error}")
        else:
            extra = f" branch={tm.branch}" if tm.branch else ""
            print(
                f"{tm.method}: type1={tm.type1_test:.4f} type2={tm.type2_test:.4f}"
                f" surrogate1={tm.type1_surrogate:.4f} surrogate2={tm.type2_surrogate:.4f}{extra}"
            )
    return 1 if all(tm.error for tm in metrics) else 0


def _cmd_oracle_check(args) -> int:
    cfg = _load_config(args)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    grid = threshold_grid(-4.0, 6.0, 201)
    bad = 0
    runs = args.runs
    for k in range(runs):
        bundle = make_gaussian_bundle(
            0.0, 2.0, float(rng.uniform(-0.5, 0.5)), float(rng.uniform(1.0, 3.0)),
            n_target=40, n_source=200, n_test=2, seed=(cfg.seed, "oracle", k),
        )
        loss = logistic_loss(cfg.B * math.sqrt(36.0 + 1.0))
        budgets = make_error_budgets(200, 40, 200, 40, cfg.b_h, cfg.stat_l, cfg.stat_c, cfg.delta)
        table = tabulate_risks(grid, bundle.training(), loss)
        try:
            out = oracle_procedure(table, cfg.alpha, budgets)
        except Exception as exc:
            print(f"run {k}: {type(exc).__name__}: {exc}")
            bad += 1
            continue
        ok_t = table.r0t[out.chosen_index] <= cfg.alpha + budgets.eps_0t + 1e-12
        ok_s = table.r0s[out.chosen_index] <= out.alpha_hat_s + budgets.eps_0s + 1e-12
        chain = set(out.h1s_indices) <= set(out.h_prime_indices) <= set(out.h_star_indices)
        if not (ok_t and ok_s and chain):
            print(f"run {k}: constraint or chain violation")
            bad += 1
    print(f"oracle-check: {runs - bad}/{runs} runs clean")
    return 0 if bad == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nptransfer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of ExperimentConfig fields")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--scenario", choices=["informative-source", "uninformative-source", "shared-mu0", "csv"])
        p.add_argument("--alpha", type=float)

    p_sweep = sub.add_parser("sweep", help="run the full sweep grid")
    common(p_sweep)

    p_trial = sub.add_parser("trial", help="run a single trial")
    common(p_trial)
    p_trial.add_argument("--n-source", type=int, dest="n_source")

    p_oracle = sub.add_parser("oracle-check", help="finite-class procedure self-check")
    common(p_oracle)
    p_oracle.add_argument("--runs", type=int, default=10)

    args = parser.parse_args(argv)
    try:
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "trial":
            return _cmd_trial(args)
        return _cmd_oracle_check(args)
    except (ConfigurationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

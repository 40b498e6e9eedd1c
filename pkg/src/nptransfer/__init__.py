"""Adaptive transfer learning for Neyman-Pearson classification under shift
in both class-conditional distributions."""

from .core import (
    ClassSamples,
    ConfigurationError,
    ErrorBudgets,
    LossSpec,
    ParamVector,
    empirical_risk,
    hinge_loss,
    logistic_loss,
    make_error_budgets,
    predict,
    risk_gradient,
    surrogate_eval,
)
from .constraints import (
    AffineConstraint,
    EmpiricalConstraint,
    MaxConstraint,
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
    NumericalDivergence,
    cp_solve,
    default_iteration_count,
    default_step_constant,
    dual_update,
    project_ball,
    project_constraint,
)
from .transfer import (
    BudgetSizingError,
    ToleranceSet,
    TransferConfig,
    TransferData,
    TransferResult,
    compute_alpha_hat,
    final_solve_and_select,
    run_transfer,
    slackness,
    solve_subproblems,
    tolerance_cascade,
    warm_start_target,
)
from .oracle import (
    FiniteClass,
    OracleOutcome,
    RiskTable,
    np_lemma_threshold,
    oracle_procedure,
    tabulate_risks,
    threshold_grid,
    transfer_moduli,
)
from .data import (
    DatasetBundle,
    GaussianSpec,
    gen_gaussian,
    load_csv,
    make_gaussian_bundle,
    persist_run,
    load_run,
    subsample,
)
from .experiment import (
    ExperimentConfig,
    TrialMetrics,
    baseline_only_source,
    baseline_only_target,
    run_sweep,
    run_trial,
)

__version__ = "0.1.0"

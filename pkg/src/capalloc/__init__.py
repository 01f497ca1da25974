"""Optimal capital allocation by minimising multivariate ruin-severity indicators."""

from .coherence import PropertyCase, PropertyReport, default_suite, run_suite
from .indicators import (
    ABSOLUTE,
    Allocation,
    IndicatorEstimate,
    PenaltyFn,
    estimate_indicator,
    estimate_subgradient,
    indicator_sum_identity,
    optimality_residual,
)
from .optimizer import (
    AllocationResult,
    OptimizerConfig,
    grid_search_oracle,
    mirror_descent_kw,
    projected_sgd,
    proportional_baseline,
    simplex_project,
    solve_bivariate,
)
from .risk_model import (
    DependenceSpec,
    MarginalSpec,
    RiskModel,
    SampleBatch,
    marginal_quantile,
    merge_lines,
    sample,
)
from .scenario import Scenario, load_scenario, parse_scenario

__version__ = "0.1.0"

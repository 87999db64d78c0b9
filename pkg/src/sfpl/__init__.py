"""Sparse fused Plackett-Luce: grouped partial rankings with object covariates.

Fits group-specific coefficient vectors linking object covariates to ranking
worths, with an L1 sparsity penalty on the coefficients and an L1 fusion
penalty on between-group differences. Includes model selection over a penalty
grid, rank prediction for unseen objects and a simulation benchmark harness.
"""

__version__ = "0.1.0"

from .data_model import (
    ConvergenceWarning,
    CovariateMatrix,
    CoverageWarning,
    IdentifiabilityError,
    ObjectCatalog,
    PartialRanking,
    RankingDataset,
    RankReport,
    ValidationError,
    check_identifiability,
    load_covariates,
    load_rankings,
    save_rankings,
    standardize_covariates,
)
from .likelihood import (
    CoefficientSet,
    gradient,
    hessian,
    hessian_blocks,
    neg_log_likelihood,
    ranking_probability,
)
from .optimizer import FitResult, fit, initial_estimate, mm_step
from .penalty import (
    PenaltyConfig,
    build_vf,
    build_vs,
    penalized_objective,
    penalty_value,
    smoothed_objective,
    smoothed_penalty_value,
    surrogate_objective,
    surrogate_value,
)
from .prediction import (
    RankTable,
    aggregate_ranking,
    object_worths,
    predict_new,
    worth_ranks,
    write_rank_table,
)
from .selection import (
    PenaltyGrid,
    SelectionResult,
    aic,
    bic,
    build_grid,
    effective_df,
    select,
)
from .simulation import (
    MetricsReport,
    SimulationConfig,
    SimulatedReplicate,
    StudyResult,
    enumerate_ranking_distribution,
    f1,
    generate_coefficients,
    generate_dataset,
    rcr,
    rmse,
    run_study,
    sample_partial_ranking,
    scenario_preset,
)

__all__ = [name for name in dir() if not name.startswith("_")]

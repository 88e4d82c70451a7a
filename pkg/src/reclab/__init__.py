"""Recommendation-policy laboratory.

Engagement-prediction models, slate policies, a synthetic world with
known ground truth, randomized-experiment analysis, and doubly robust
off-policy evaluation.
"""

from .errors import RecLabError
from .interactions import (
    RECOMMENDED_SECTION,
    OutcomeKind,
    ENGAGEMENT_VALUE,
    score_outcome,
    UserProfile,
    StoryMeta,
    InteractionRecord,
    UserCovariates,
    LogDataset,
    ingest_log,
    emit_log,
    trim_outliers,
    trim_top_daily_percentile,
    compute_covariates,
)
from .models import (
    MeanModel,
    TwoWayFixedEffects,
    MatrixFactorization,
    TrainConfig,
    SplitSpec,
    train,
    eligibility,
    save_model,
    load_model,
)
from .policies import (
    SLATE_SIZE,
    Slate,
    PolicySpec,
    SlateState,
    DayActivity,
    rank_stories,
    top_k,
    weekly_refresh,
    daily_update,
    exposure_distribution,
)
from .simulator import (
    WorldConfig,
    World,
    GroundTruth,
    ExperimentPlan,
    make_world,
    simulate_period,
    run_experiment,
    true_policy_value,
)
from .analysis import (
    OutcomeVector,
    EstimateReport,
    build_outcomes,
    diff_in_means,
    regression_adjusted_ate,
    aipw_ate,
    wilcoxon_one_sided,
    subgroup_ates,
    mde,
)
from .offpolicy import (
    DrEstimate,
    estimate_position_effects,
    editorial_propensity,
    topk_propensity,
    fit_outcome_regressor,
    dr_value,
    bootstrap_se,
    compare_policies,
    onpolicy_vs_offpolicy_check,
)

__version__ = "0.1.0"

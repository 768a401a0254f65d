"""Inference engine: mixed model, Wald tests, marginal means, contrasts, distributions."""
from .distributions import (
    betainc,
    f_cdf,
    f_sf,
    studentized_range_cdf,
    studentized_range_ppf,
    studentized_range_sf,
    t_cdf,
    t_sf,
    t_two_sided_p,
)
from .inference import (
    ContrastResult,
    CorrelationResult,
    DegenerateInput,
    EmmResult,
    FTestResult,
    InestimableCombination,
    OverlappingGroups,
    SingularHypothesis,
    anova_table,
    correlation_from_r,
    effect_matrix,
    emmeans,
    grouped_contrast,
    pairwise_contrasts,
    pearson,
    satterthwaite_df,
    term_test,
    wald_f,
)
from .lmm import (
    EmptyCell,
    LmmFit,
    ModelFrame,
    NonConvergence,
    RankDeficientDesign,
    StatsError,
    build_frame,
    fit_lmm,
    reml_criterion,
)

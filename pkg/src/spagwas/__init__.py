"""Exact and saddlepoint score tests for logistic-regression GWAS with imbalanced binary traits."""

from .cgf import EfficientCgf, JointCgf, MarginalCgf
from .evaluate import (
    ErrorProfile,
    RejectionRegion,
    SimulationConfig,
    conditional_rejection_region,
    error_profile,
    simulate_conditional_t1e,
    solve_intercept_for_prevalence,
)
from .exact import (
    GenotypeCounts,
    LatticePmf,
    conditional_support,
    exact_binary_covariate_pmf,
    exact_intercept_pmf,
)
from .fast import CarrierPartition, fast_dspa_cc_survival, fast_spa_survival
from .model import (
    ConvergenceError,
    Dataset,
    FitError,
    NullFit,
    SeparationError,
    UntestableVariantError,
    conditional_variance,
    efficient_genotype,
    fit_null,
    score_statistic,
)
from .pvalue import METHODS, PvalueReport, normal_pvalue, reflect, two_sided_pvalue
from .saddlepoint import SaddlepointError, TailResult, dspa_cc_survival, espa_survival, left_tail

__all__ = [
    "CarrierPartition",
    "ConvergenceError",
    "Dataset",
    "EfficientCgf",
    "ErrorProfile",
    "FitError",
    "GenotypeCounts",
    "JointCgf",
    "LatticePmf",
    "METHODS",
    "MarginalCgf",
    "NullFit",
    "PvalueReport",
    "RejectionRegion",
    "SaddlepointError",
    "SeparationError",
    "SimulationConfig",
    "TailResult",
    "UntestableVariantError",
    "conditional_rejection_region",
    "conditional_support",
    "conditional_variance",
    "dspa_cc_survival",
    "efficient_genotype",
    "error_profile",
    "espa_survival",
    "exact_binary_covariate_pmf",
    "exact_intercept_pmf",
    "fast_dspa_cc_survival",
    "fast_spa_survival",
    "fit_null",
    "left_tail",
    "normal_pvalue",
    "reflect",
    "score_statistic",
    "simulate_conditional_t1e",
    "solve_intercept_for_prevalence",
    "two_sided_pvalue",
]

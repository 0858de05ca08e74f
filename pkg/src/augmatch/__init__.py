"""Propensity-score 1:M matching with an optimally augmented propensity model."""

from .analytic import AnalyticDesign, analytic_quantities, e_pi_one_minus_pi, relative_efficiency
from .data import Dataset, SplitIndex, load_csv, split_sample, write_csv
from .logit import DesignSpec, PropensityFit, discretize, fisher_info, fit_mle, score
from .matching import MatchResult, ate_from_scores, ate_matching, match_1m
from .nuisance import (
    AugmentationFn,
    NuisanceFit,
    RegressorSpec,
    build_h,
    fit_nuisance,
    fit_outcome_regression,
    fit_reduced_regression,
)
from .pipeline import EstimateResult, EstimatorConfig, estimate_augmented, estimate_unaugmented
from .simulate import McSummary, Scenario, gen_scenario, run_mc, true_ate
from .variance import (
    VarianceReport,
    estimate_c_vector,
    estimate_sigma2_M,
    gain,
    gain_h_direct,
    np_bound,
    wald_ci,
)

__version__ = "0.1.0"

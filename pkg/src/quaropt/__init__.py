"""Individualized quarantine durations via constrained density-ratio thresholding.

Given historical quarantine records, the package estimates the infected and
uninfected feature densities, fits a Weibull incubation model with
covariate-dependent scale by interval-censored maximum likelihood, and solves
for the duration rule that minimizes the average quarantine duration of
uninfected people subject to an escape-probability bound.
"""

from quaropt.distributions import (
    DEFAULT_Y_MAX,
    LognormalParams,
    MixtureParams,
    TruncNormalParams,
    WeibullParams,
)
from quaropt.density_estimation import (
    DensityEstimate,
    FeaturePoint,
    FeatureSpace,
    density_ratio_features,
    fit_kernel_density,
    tabulated_density,
)
from quaropt.incubation_model import (
    ConditionalIncubationModel,
    FitOptions,
    FitReport,
    ceiled_loglik,
    conditional_cdf,
    conditional_pdf,
    conditional_quantile,
    fit_mle,
)
from quaropt.rule_solver import (
    QuarantineRule,
    RatioCurve,
    RatioCurveSet,
    ThresholdSolution,
    c_star,
    escape_probability,
    optimal_rule,
    ratio_curve,
    solve_threshold,
    superlevel_duration,
)
from quaropt.baselines import (
    EvaluationReport,
    average_quarantine_duration,
    conditional_quantile_rule,
    effective_reproductive_number,
    empirical_escape,
    unconditional_quantile_rule,
)
from quaropt.simulation import (
    ScenarioSpec,
    generate_dataset,
    run_pipeline,
    run_replications,
    scenario,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_Y_MAX",
    "WeibullParams",
    "LognormalParams",
    "TruncNormalParams",
    "MixtureParams",
    "FeaturePoint",
    "FeatureSpace",
    "DensityEstimate",
    "fit_kernel_density",
    "tabulated_density",
    "density_ratio_features",
    "ConditionalIncubationModel",
    "FitOptions",
    "FitReport",
    "ceiled_loglik",
    "fit_mle",
    "conditional_pdf",
    "conditional_cdf",
    "conditional_quantile",
    "RatioCurve",
    "RatioCurveSet",
    "QuarantineRule",
    "ThresholdSolution",
    "ratio_curve",
    "superlevel_duration",
    "c_star",
    "escape_probability",
    "solve_threshold",
    "optimal_rule",
    "EvaluationReport",
    "unconditional_quantile_rule",
    "conditional_quantile_rule",
    "average_quarantine_duration",
    "empirical_escape",
    "effective_reproductive_number",
    "ScenarioSpec",
    "scenario",
    "generate_dataset",
    "run_pipeline",
    "run_replications",
    "__version__",
]

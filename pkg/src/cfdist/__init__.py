"""Counterfactual distribution estimation, inference, and decomposition."""

__version__ = "0.1.0"

from .counterfactual import (
    CounterfactualSpec,
    FunctionalCurve,
    StepDistribution,
    distribution_effect,
    effect_distribution,
    gini,
    lorenz,
    lorenz_curve,
    marginal_cdf,
    mean,
    quantile,
    quantile_curve,
    quantile_effect,
    quantile_grid,
    variance,
)
from .data import (
    EvaluationGrids,
    GroupedDataset,
    GroupSample,
    default_u_grid,
    default_y_grid,
    load_csv,
)
from .decomposition import (
    DecompositionConfig,
    DecompositionReport,
    MinWagePolicy,
    decompose,
    fit_union_logit,
    minwage_counterfactual_cdf,
    order_sensitivity,
    smooth_curve,
    union_reweighted_cdf,
    variance_channels,
)
from .estimators import (
    ConditionalDistributionModel,
    ConditionalQuantileModel,
    EstimatorConfig,
    as_distribution_model,
    fit_distribution_regression,
    fit_duration_dr,
    fit_estimator,
    fit_location_model,
    fit_quantile_regression,
    model_from_dict,
    qf_to_cdf,
    rearrange,
)
from .exceptions import (
    CfdistError,
    ConfigError,
    DataError,
    DegenerateDistributionError,
    DomainError,
    NumericalError,
    ParseError,
    SchemaError,
    SingularDesignError,
    SolverError,
    ValidationError,
)
from .inference import (
    BootstrapPlan,
    KSTestReport,
    UniformBand,
    bootstrap_curves,
    gen_weights,
    ks_tests,
    uniform_band,
)

__all__ = [
    "__version__",
    "BootstrapPlan",
    "CfdistError",
    "ConditionalDistributionModel",
    "ConditionalQuantileModel",
    "ConfigError",
    "CounterfactualSpec",
    "DataError",
    "DecompositionConfig",
    "DecompositionReport",
    "DegenerateDistributionError",
    "DomainError",
    "EstimatorConfig",
    "EvaluationGrids",
    "FunctionalCurve",
    "GroupSample",
    "GroupedDataset",
    "KSTestReport",
    "MinWagePolicy",
    "NumericalError",
    "ParseError",
    "SchemaError",
    "SingularDesignError",
    "SolverError",
    "StepDistribution",
    "UniformBand",
    "ValidationError",
    "as_distribution_model",
    "bootstrap_curves",
    "decompose",
    "default_u_grid",
    "default_y_grid",
    "distribution_effect",
    "effect_distribution",
    "fit_distribution_regression",
    "fit_duration_dr",
    "fit_estimator",
    "fit_location_model",
    "fit_quantile_regression",
    "fit_union_logit",
    "gen_weights",
    "gini",
    "ks_tests",
    "load_csv",
    "lorenz",
    "lorenz_curve",
    "marginal_cdf",
    "mean",
    "minwage_counterfactual_cdf",
    "model_from_dict",
    "order_sensitivity",
    "qf_to_cdf",
    "quantile",
    "quantile_curve",
    "quantile_effect",
    "quantile_grid",
    "rearrange",
    "smooth_curve",
    "union_reweighted_cdf",
    "uniform_band",
    "variance",
    "variance_channels",
]

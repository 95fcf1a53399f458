"""Sieve regression and restriction tests for designed response panels.

Fits a nonparametric response surface from an n x T panel of subjects
sharing T designed stimuli, by least squares on tensor polynomial bases,
and tests linear and nonlinear restrictions on the fitted function with
quadratic-form statistics referenced to chi-square or normal laws.
"""

from .basis import (
    BasisSpec,
    DerivOperator,
    basis_row,
    derivative_operator,
    design_matrix,
    eval_legendre,
    kronecker_sum,
    legendre_diff_matrix,
    power_diff_matrix,
    power_to_legendre,
    zeta_s,
)
from .covariance import (
    CovarianceEstimate,
    diagonal_sigma_summary,
    eigen_summary,
    known_covariance,
    sample_avg_covariance,
    variance_function_fit,
)
from .design import (
    DesignSet,
    assumption2_report,
    gram_deviation,
    gram_matrix,
    grid_design,
    halton_design,
    optimal_basis_size,
    target_gram_uniform_legendre,
    zielke_check,
)
from .estimator import (
    ExperimentData,
    FittedSieve,
    SieveRegressor,
    average_responses,
    fit,
    fit_varying_coefficients,
    loo_cv_score,
    predict,
    predict_derivative,
    select_order,
    sup_error,
)
from .exceptions import (
    ConditioningError,
    DimensionError,
    DomainError,
    IdentificationError,
    InconsistentConstraintError,
    LeverageError,
    RankDeficiencyError,
    SelectionError,
)
from .inference import (
    ConstraintSpec,
    WaldReport,
    bias_bound,
    chi2_sf,
    derivative_sum_constraint,
    functional_variance,
    inv_sqrt_psd,
    linear_constraint,
    nonlinear_functional,
    normal_sf,
    pointwise_constraint,
    rank_reduce,
    stevens_constraint,
    wald,
)
from .simulate import (
    DgpSpec,
    StudyResult,
    convergence_study,
    distribution_distance,
    gen_panel,
    replication_rng,
    size_power_study,
)

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "DerivOperator",
    "basis_row",
    "derivative_operator",
    "design_matrix",
    "eval_legendre",
    "kronecker_sum",
    "legendre_diff_matrix",
    "power_diff_matrix",
    "power_to_legendre",
    "zeta_s",
    "CovarianceEstimate",
    "diagonal_sigma_summary",
    "eigen_summary",
    "known_covariance",
    "sample_avg_covariance",
    "variance_function_fit",
    "DesignSet",
    "assumption2_report",
    "gram_deviation",
    "gram_matrix",
    "grid_design",
    "halton_design",
    "optimal_basis_size",
    "target_gram_uniform_legendre",
    "zielke_check",
    "ExperimentData",
    "FittedSieve",
    "SieveRegressor",
    "average_responses",
    "fit",
    "fit_varying_coefficients",
    "loo_cv_score",
    "predict",
    "predict_derivative",
    "select_order",
    "sup_error",
    "ConditioningError",
    "DimensionError",
    "DomainError",
    "IdentificationError",
    "InconsistentConstraintError",
    "LeverageError",
    "RankDeficiencyError",
    "SelectionError",
    "ConstraintSpec",
    "WaldReport",
    "bias_bound",
    "chi2_sf",
    "derivative_sum_constraint",
    "functional_variance",
    "inv_sqrt_psd",
    "linear_constraint",
    "nonlinear_functional",
    "normal_sf",
    "pointwise_constraint",
    "rank_reduce",
    "stevens_constraint",
    "wald",
    "DgpSpec",
    "StudyResult",
    "convergence_study",
    "distribution_distance",
    "gen_panel",
    "replication_rng",
    "size_power_study",
    "__version__",
]

"""Graphical SLOPE precision-matrix estimation and asymptotics toolkit."""

__version__ = "0.1.0"

from .asymptotics import (
    MonteCarloSummary,
    finite_n_rmse,
    finite_sample_mc,
    monte_carlo,
    sample_limit_noise,
    solve_limit,
)
from .datagen import (
    HiddenFactorConfig,
    RadialLaw,
    sample_elliptical,
    sample_gaussian,
    sample_hidden_factor,
    sample_student_t,
)
from .estimator import EstimateResult, EstimatorConfig, estimate, estimate_path
from .losses import (
    AsymptoticCoefficients,
    LossModel,
    RadialMoments,
    coeffs_elliptical_gaussian_loss,
    coeffs_gaussian,
    coeffs_gaussian_loss_general,
    coeffs_t_data_gaussian_loss,
    coeffs_t_loss,
    loss_gradient,
    loss_value,
    radial_moments,
)
from .slope import (
    DirectionalPenalty,
    LambdaSequence,
    PatternProjector,
    SlopePattern,
    bh_sequence_gaussian,
    bh_sequence_hf,
    bh_sequence_t,
    constant_sequence,
    directional_derivative,
    pattern,
    slope_norm,
    slope_prox,
)
from .symcore import (
    NotPositiveDefiniteError,
    StructuredOperator,
    sym_from_lower,
    sym_from_vech,
    vec_plus,
    vech,
)

__all__ = [
    "AsymptoticCoefficients",
    "DirectionalPenalty",
    "EstimateResult",
    "EstimatorConfig",
    "HiddenFactorConfig",
    "LambdaSequence",
    "LossModel",
    "MonteCarloSummary",
    "NotPositiveDefiniteError",
    "PatternProjector",
    "RadialLaw",
    "RadialMoments",
    "SlopePattern",
    "StructuredOperator",
    "bh_sequence_gaussian",
    "bh_sequence_hf",
    "bh_sequence_t",
    "coeffs_elliptical_gaussian_loss",
    "coeffs_gaussian",
    "coeffs_gaussian_loss_general",
    "coeffs_t_data_gaussian_loss",
    "coeffs_t_loss",
    "constant_sequence",
    "directional_derivative",
    "estimate",
    "estimate_path",
    "finite_n_rmse",
    "finite_sample_mc",
    "loss_gradient",
    "loss_value",
    "monte_carlo",
    "pattern",
    "radial_moments",
    "sample_elliptical",
    "sample_gaussian",
    "sample_hidden_factor",
    "sample_limit_noise",
    "sample_student_t",
    "slope_norm",
    "slope_prox",
    "solve_limit",
    "sym_from_lower",
    "sym_from_vech",
    "vec_plus",
    "vech",
]

"""Multicalibration metrics, hard instances, learners and rate experiments on finite domains."""

from .core import (
    ConditionalLabelLaw,
    FiniteInstance,
    GroupFamily,
    PredictionGrid,
    RandomizedPredictor,
    Transcript,
    ValidationError,
    deterministic_predictor,
    mean_prediction_function,
    quantize_predictor,
    regression_function,
)
from .metrics import BiasTable, ece, empirical_bias_table, mc, mc_lp, population_bias_table, prediction_error, smc_lp
from .properties import PropertySpec, expectile_property, mean_property, parse_property, quantile_property

__version__ = "0.1.0"

__all__ = [
    "BiasTable",
    "ConditionalLabelLaw",
    "FiniteInstance",
    "GroupFamily",
    "PredictionGrid",
    "PropertySpec",
    "RandomizedPredictor",
    "Transcript",
    "ValidationError",
    "deterministic_predictor",
    "ece",
    "empirical_bias_table",
    "expectile_property",
    "mc",
    "mc_lp",
    "mean_prediction_function",
    "mean_property",
    "parse_property",
    "population_bias_table",
    "prediction_error",
    "quantile_property",
    "quantize_predictor",
    "regression_function",
    "smc_lp",
]

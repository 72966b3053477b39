"""Consideration-set choice models for vehicle portfolio design, studied on synthetic markets."""

from .choice_models import CtcParams, MnlParams, NmlParams, RclParams, log_likelihood, predict_proba
from .design import DesignOutcome, GAOptions, Portfolio, ideal_design, inner_optimize, outer_optimize, price_on_offering, true_profit
from .engineering import EngineeringConfig, default_engineering, feasible_fuel_economy, unit_cost
from .estimation import (
    ConsiderThenChoose,
    EstimationOptions,
    MultinomialLogit,
    NestedLogit,
    RandomCoefficientsLogit,
    estimate,
)
from .experiment import ExperimentConfig, emit_figure_data, run_experiment
from .market import Market, generate_market, simulate_shares, true_choice_probability
from .metrics import design_error, kld, profit_recovery
from .population import PopulationSpec, ScreeningRule, calibrated_population, default_population

__version__ = "0.1.0"

__all__ = [
    "ConsiderThenChoose",
    "CtcParams",
    "DesignOutcome",
    "EngineeringConfig",
    "EstimationOptions",
    "ExperimentConfig",
    "GAOptions",
    "Market",
    "MnlParams",
    "MultinomialLogit",
    "NestedLogit",
    "NmlParams",
    "PopulationSpec",
    "Portfolio",
    "RandomCoefficientsLogit",
    "RclParams",
    "ScreeningRule",
    "calibrated_population",
    "default_engineering",
    "default_population",
    "design_error",
    "emit_figure_data",
    "estimate",
    "feasible_fuel_economy",
    "generate_market",
    "ideal_design",
    "inner_optimize",
    "kld",
    "log_likelihood",
    "outer_optimize",
    "predict_proba",
    "price_on_offering",
    "profit_recovery",
    "run_experiment",
    "simulate_shares",
    "true_choice_probability",
    "true_profit",
    "unit_cost",
]

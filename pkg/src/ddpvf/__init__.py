"""Defective Dagum survival models with PVF-family frailty and cure fractions."""

from ._backend import BACKEND
from .distributions import (
    DagumParams,
    DDPVFModel,
    DomainError,
    FrailtySpec,
    InversionError,
    Variant,
    cure_fraction_from_theta,
    dd_hazard,
    dd_log_density,
    dd_log_survival,
    ddpvf_hazard,
    ddpvf_log_density,
    ddpvf_log_survival,
    frailty_log_laplace,
    susceptible_quantile,
    theta_from_cure_fraction,
)
from .estimation import (
    FitConfig,
    FitResult,
    NonConvergence,
    SingularInformation,
    compare_models,
    cure_fraction_at,
    delta_method_transform,
    fit_mle,
    information_criteria,
    log_likelihood,
    profile_fit_gamma,
    theta_at,
)
from .nonparametric import StepFunction, kaplan_meier, kernel_hazard
from .regression import ModelParameters, SurvivalData, SurvivalRecord, subject_model
from .simulation import (
    InfeasibleCensoring,
    ScenarioConfig,
    calibrate_tau,
    coverage_probability,
    generate_dataset,
    run_monte_carlo,
    scenario_one,
    scenario_two,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DagumParams", "DDPVFModel", "DomainError", "FrailtySpec", "InversionError",
    "Variant", "cure_fraction_from_theta", "dd_hazard", "dd_log_density", "dd_log_survival",
    "ddpvf_hazard", "ddpvf_log_density", "ddpvf_log_survival", "frailty_log_laplace",
    "susceptible_quantile", "theta_from_cure_fraction", "FitConfig", "FitResult",
    "NonConvergence", "SingularInformation", "compare_models", "cure_fraction_at",
    "delta_method_transform", "fit_mle", "information_criteria", "log_likelihood",
    "profile_fit_gamma", "theta_at", "StepFunction", "kaplan_meier", "kernel_hazard",
    "ModelParameters", "SurvivalData", "SurvivalRecord", "subject_model",
    "InfeasibleCensoring", "ScenarioConfig", "calibrate_tau", "coverage_probability",
    "generate_dataset", "run_monte_carlo", "scenario_one", "scenario_two",
]

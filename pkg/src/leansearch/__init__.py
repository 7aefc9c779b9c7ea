"""Complexity-aware hyperparameter and architecture search.

Searches network configurations (architecture plus training hyperparameters)
with a three-stage greedy pipeline driven by Gaussian-process Bayesian
optimization, minimizing

    f = (1 - best validation accuracy) + w_c * (complexity / c0)

so that sweeping ``w_c`` yields a family of models trading accuracy against
training cost (seconds per epoch, or parameter count).
"""
from .bayesopt import BOSettings, bo_minimize, expected_improvement, gp_posterior, sobol_sample
from .configs import CnnArch, Config, MlpArch, SearchSpace, TrainingHP, decode_config, encode_config, validate
from .kernel import KernelSpec, RampParams, config_similarity, covariance_matrix, kernel_spec_for, kernel_value, ramp_distance
from .objective import EvalResult, ObjectiveSpec, preset_lambda, score
from .pipeline import PresetPolicy, StagePlan, default_plan, ensemble_select, run_full, search_transfer

__version__ = "0.1.0"

__all__ = [
    "BOSettings",
    "CnnArch",
    "Config",
    "EvalResult",
    "KernelSpec",
    "MlpArch",
    "ObjectiveSpec",
    "PresetPolicy",
    "RampParams",
    "SearchSpace",
    "StagePlan",
    "TrainingHP",
    "bo_minimize",
    "config_similarity",
    "covariance_matrix",
    "decode_config",
    "default_plan",
    "encode_config",
    "ensemble_select",
    "expected_improvement",
    "gp_posterior",
    "kernel_spec_for",
    "kernel_value",
    "preset_lambda",
    "ramp_distance",
    "run_full",
    "score",
    "search_transfer",
    "sobol_sample",
    "validate",
]

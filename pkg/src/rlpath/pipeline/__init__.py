"""Closed-loop training and evaluation of the sampling/denoising variants."""

from .config import EVAL_BUDGETS, MODES, ConfigError, SubSampleBudgetError, VariantConfig, check_budget, lr_schedule
from .loop import (
    DivergenceError,
    Models,
    build_models,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    step_frame,
    train,
)

__all__ = [
    "EVAL_BUDGETS",
    "MODES",
    "ConfigError",
    "DivergenceError",
    "Models",
    "SubSampleBudgetError",
    "VariantConfig",
    "build_models",
    "check_budget",
    "evaluate",
    "load_checkpoint",
    "lr_schedule",
    "save_checkpoint",
    "step_frame",
    "train",
]

"""Representation-token adaptation on a frozen dual encoder.

A shared learnable token space is projected into the upper layers of frozen
image and text transformer stacks, trained with a decoupled
classification-plus-consistency objective, and evaluated under the
base/novel split protocol. Includes a reverse-mode tensor engine with a
finite-difference oracle, a parameter accountant, and an experiment
harness.
"""

from .accounting import count_trainable_parameters
from .config import RunConfig, parse_config, parse_config_text
from .evaluation import MetricsReport, SeedMetrics, evaluate_split, harmonic_mean
from .experiment import run_experiment
from .objective import LossBreakdown, LossWeights
from .synthetic import SyntheticTaskSpec, generate_synthetic_task, split_classes
from .trainer import (ModelConfig, ModelState, TrainConfig, build_model,
                      gradient_check, train_step)

__all__ = [
    "count_trainable_parameters",
    "RunConfig", "parse_config", "parse_config_text",
    "MetricsReport", "SeedMetrics", "evaluate_split", "harmonic_mean",
    "run_experiment",
    "LossBreakdown", "LossWeights",
    "SyntheticTaskSpec", "generate_synthetic_task", "split_classes",
    "ModelConfig", "ModelState", "TrainConfig", "build_model",
    "gradient_check", "train_step",
]

__version__ = "0.1.0"

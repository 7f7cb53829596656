"""
Deep spatial surrogates for computer experiments.

A two-branch network approximates a simulator whose output is a spatial
field: one branch turns simulation inputs into basis functions, the other
turns locations into coefficients, and a dense head adds fine-scale
covariates. Monte Carlo dropout turns the trained network into a sampler of
predictive intervals.

Key Components:
    - Dataset: Responses of many simulations at shared sites
    - ModelConfig / build: Network architecture and initialization
    - Trainer / train: Penalized mini-batch Adam training with hooks
    - predict_with_uncertainty: Posterior draws and predictive summaries
    - generate: Synthetic scenarios with known truth
    - fit_fosr: Linear function-on-scalar baseline
    - evaluate: RMSPE, coverage, interval length and misclassification

Example usage:
    >>> from deepsurrogate import ModelConfig, TrainConfig, generate, predict_with_uncertainty, scenario, train
    >>> truth = generate(scenario("gp-desk"))
    >>> result = train(truth.dataset, ModelConfig.simulation_default(), TrainConfig(epochs=5))
    >>> frame = predict_with_uncertainty(result.params, truth.dataset, truth.test_dataset)
"""

from deepsurrogate.errors import (
    ConfigurationError,
    DecompositionError,
    DeepSurrogateError,
    FormatError,
    NumericError,
    ShapeError,
    TrainingDivergedError,
    UsageError,
)
from deepsurrogate.models.baseline import FosrModel, fit_fosr, fosr_predictions, predict_fosr
from deepsurrogate.models.datagen import GeneratedTruth, ScenarioSpec, generate, scenario, write_generated
from deepsurrogate.models.dataset import Dataset, read_dataset
from deepsurrogate.models.inference import (
    InferenceConfig,
    PredictiveSummary,
    holdout_noise_variance,
    predict_with_uncertainty,
)
from deepsurrogate.models.surrogate import ModelConfig, SurrogateParams, load_params, predict_mean, save_params
from deepsurrogate.models.tensor import Rng
from deepsurrogate.models.training import TrainConfig, Trainer, TrainResult, train
from deepsurrogate.utils.metrics import EvalReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "DeepSurrogateError",
    "ConfigurationError",
    "UsageError",
    "ShapeError",
    "NumericError",
    "DecompositionError",
    "TrainingDivergedError",
    "FormatError",
    "FosrModel",
    "fit_fosr",
    "fosr_predictions",
    "predict_fosr",
    "GeneratedTruth",
    "ScenarioSpec",
    "generate",
    "scenario",
    "write_generated",
    "Dataset",
    "read_dataset",
    "InferenceConfig",
    "PredictiveSummary",
    "holdout_noise_variance",
    "predict_with_uncertainty",
    "ModelConfig",
    "SurrogateParams",
    "load_params",
    "predict_mean",
    "save_params",
    "Rng",
    "TrainConfig",
    "Trainer",
    "TrainResult",
    "train",
    "EvalReport",
    "evaluate",
]

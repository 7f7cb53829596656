from deepsurrogate.models.dataset import Dataset, read_dataset, write_dataset_files
from deepsurrogate.models.inference import InferenceConfig, PredictiveSummary, predict_with_uncertainty
from deepsurrogate.models.surrogate import ModelConfig, SurrogateParams, build, predict_mean
from deepsurrogate.models.tensor import Rng
from deepsurrogate.models.training import TrainConfig, Trainer, train

__all__ = [
    "Dataset",
    "read_dataset",
    "write_dataset_files",
    "InferenceConfig",
    "PredictiveSummary",
    "predict_with_uncertainty",
    "ModelConfig",
    "SurrogateParams",
    "build",
    "predict_mean",
    "Rng",
    "TrainConfig",
    "Trainer",
    "train",
]

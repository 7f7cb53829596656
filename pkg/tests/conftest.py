import numpy as np
import pytest

from deepsurrogate.models.dataset import Dataset
from deepsurrogate.models.nn import ActivationKind
from deepsurrogate.models.surrogate import BranchConfig, HeadConfig, ModelConfig, SurrogateParams, build
from deepsurrogate.models.tensor import Rng

RELU, LINEAR, SOFTPLUS = ActivationKind.RELU, ActivationKind.LINEAR, ActivationKind.SOFTPLUS


@pytest.fixture
def rng() -> Rng:
    """Fixture providing a fixed-seed random stream."""
    return Rng(1234)


@pytest.fixture
def tiny_dataset() -> Dataset:
    """Fixture providing 4 simulations at 12 sites with p=3 inputs and q=2 covariates."""
    gen = np.random.default_rng(7)
    sites = gen.uniform(0.0, 10.0, (12, 2))
    covs = gen.standard_normal((12, 2))
    inputs = gen.standard_normal((4, 3))
    signal = np.sin(sites[:, 0])[None, :] * inputs[:, :1] + 0.5 * inputs[:, 1:2]
    responses = 1.0 + covs @ np.array([0.7, -0.4]) + signal + 0.1 * gen.standard_normal((4, 12))
    return Dataset(sites, covs, inputs, responses)


@pytest.fixture
def small_model_cfg() -> ModelConfig:
    """Fixture providing a small two-branch architecture with dropout."""
    return ModelConfig(
        basis=BranchConfig(widths=[8, 4], activations=[RELU, LINEAR], dropout=0.2),
        coef=BranchConfig(widths=[8, 6, 4], activations=[RELU, RELU, LINEAR], dropout=0.2),
        head=HeadConfig(activation=LINEAR),
    )


@pytest.fixture
def smooth_model_cfg() -> ModelConfig:
    """Fixture providing a softplus architecture for finite-difference checks."""
    return ModelConfig(
        basis=BranchConfig(widths=[5, 3], activations=[SOFTPLUS, LINEAR], dropout=0.0),
        coef=BranchConfig(widths=[6, 3], activations=[SOFTPLUS, LINEAR], dropout=0.0),
        head=HeadConfig(activation=SOFTPLUS),
    )


@pytest.fixture
def small_params(small_model_cfg, tiny_dataset) -> SurrogateParams:
    """Fixture providing freshly initialized parameters for the tiny dataset."""
    return build(small_model_cfg, tiny_dataset.p, tiny_dataset.q, Rng(0))

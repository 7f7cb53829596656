from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

from deepsurrogate.errors import ConfigurationError, FormatError, ShapeError
from deepsurrogate.models.nn import (
    ActivationKind,
    DenseLayer,
    DropoutMask,
    ForwardCache,
    activate,
    backward,
    forward,
    init_layers,
    layer_shapes,
    sample_mask,
)
from deepsurrogate.models.tensor import Rng, Tensor
from deepsurrogate.utils.io import atomic_write_text

logger = logging.getLogger(__name__)

MODEL_MAGIC = "DSUR1"
SITE_DIM = 2


class BranchConfig(BaseModel):
    """Layer widths, activations and dropout rate of one branch.

    The dropout rate applies after every hidden layer, so it masks the
    parameters of layers 2..L; the first layer is never masked.
    """

    model_config = ConfigDict(frozen=True)

    widths: list[PositiveInt]
    activations: list[ActivationKind]
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_lengths(self) -> BranchConfig:
        if not self.widths:
            raise ValueError("a branch needs at least one layer")
        if len(self.widths) != len(self.activations):
            raise ValueError(
                f"{len(self.widths)} widths but {len(self.activations)} activations"
            )
        return self

    @property
    def output_width(self) -> int:
        return self.widths[-1]

    def layer_dropout_rates(self) -> list[float]:
        """Per-layer dropout rate: 0 for the input layer, ``dropout`` afterwards."""
        return [0.0] + [self.dropout] * (len(self.widths) - 1)


class HeadConfig(BaseModel):
    """The output head over ``[η(s)ᵀB(z), x(s)]``."""

    model_config = ConfigDict(frozen=True)

    activation: ActivationKind = ActivationKind.LINEAR
    pin_multiply_weight: bool = False

    @field_validator("activation")
    @classmethod
    def _check_activation(cls, v: ActivationKind) -> ActivationKind:
        if v is ActivationKind.RELU:
            raise ValueError("the head activation must be linear or softplus")
        return v


_RELU, _LINEAR, _SOFTPLUS = ActivationKind.RELU, ActivationKind.LINEAR, ActivationKind.SOFTPLUS


class ModelConfig(BaseModel):
    """Architecture of both branches and the head."""

    model_config = ConfigDict(frozen=True)

    basis: BranchConfig
    coef: BranchConfig
    head: HeadConfig = HeadConfig()

    @classmethod
    def simulation_default(cls) -> ModelConfig:
        """Basis 32-16-8 and coefficients 64-32-16-8 with a linear head."""
        return cls(
            basis=BranchConfig(widths=[32, 16, 8], activations=[_RELU, _RELU, _LINEAR]),
            coef=BranchConfig(
                widths=[64, 32, 16, 8], activations=[_RELU, _RELU, _RELU, _LINEAR]
            ),
            head=HeadConfig(activation=_LINEAR),
        )

    @classmethod
    def real_data_default(cls) -> ModelConfig:
        """Five-layer branches ending in 8 with a softplus head."""
        acts = [_RELU, _RELU, _RELU, _RELU, _LINEAR]
        return cls(
            basis=BranchConfig(widths=[128, 64, 32, 16, 8], activations=acts),
            coef=BranchConfig(widths=[128, 64, 32, 16, 8], activations=acts),
            head=HeadConfig(activation=_SOFTPLUS),
        )

    @classmethod
    def preset(cls, name: str) -> ModelConfig:
        presets = {"simulation": cls.simulation_default, "real": cls.real_data_default}
        if name not in presets:
            raise ConfigurationError(
                f"unknown model preset '{name}', expected one of {sorted(presets)}"
            )
        return presets[name]()

    @property
    def K(self) -> int:
        return self.basis.output_width

    def validate_compatible(self) -> None:
        """Raise :class:`ConfigurationError` unless both branches end in ``K`` units."""
        if self.basis.output_width != self.coef.output_width:
            raise ConfigurationError(
                f"branch output widths differ: basis {self.basis.output_width}, "
                f"coefficients {self.coef.output_width}"
            )


@dataclass
class Standardizer:
    """Per-dimension affine map to zero mean and unit variance."""

    mean: Tensor
    scale: Tensor

    @classmethod
    def identity(cls, dim: int) -> Standardizer:
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, values: Tensor) -> Standardizer:
        values = np.asarray(values, dtype=np.float64)
        scale = values.std(axis=0)
        return cls(values.mean(axis=0), np.maximum(scale, 1e-12))

    def apply(self, values: Tensor) -> Tensor:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.scale


@dataclass
class SurrogateParams:
    """Every weight and bias of both branches and the head.

    Attributes:
        config: The architecture the parameters were built for.
        basis_branch: Layers of ``B(z)``; input width ``p``.
        coef_branch: Layers of ``η(s)``; input width 2.
        head: One-unit layer over ``1 + q`` inputs.
        input_scaler: Standardization applied to ``z`` before the basis branch.
        site_scaler: Standardization applied to ``s`` before the coefficient branch.
    """

    config: ModelConfig
    basis_branch: list[DenseLayer]
    coef_branch: list[DenseLayer]
    head: DenseLayer
    input_scaler: Standardizer
    site_scaler: Standardizer

    def __post_init__(self) -> None:
        if self.coef_branch[0].in_features != SITE_DIM:
            raise ShapeError("the coefficient branch must take 2-d sites")
        if self.basis_branch[-1].out_features != self.coef_branch[-1].out_features:
            raise ShapeError("branch output widths differ")
        if self.head.out_features != 1 or self.head.in_features < 1:
            raise ShapeError(f"head must map 1+q inputs to 1 output, got {self.head.weights.shape}")
        if self.input_scaler.mean.shape != (self.p,) or self.site_scaler.mean.shape != (SITE_DIM,):
            raise ShapeError("standardization constants do not match input widths")

    @property
    def p(self) -> int:
        return self.basis_branch[0].in_features

    @property
    def q(self) -> int:
        return self.head.in_features - 1

    @property
    def K(self) -> int:
        return self.basis_branch[-1].out_features

    def named_params(self) -> dict[str, Tensor]:
        """Flat ``name -> array`` view used by the optimizer and model files."""
        out: dict[str, Tensor] = {}
        for prefix, layers in (("basis", self.basis_branch), ("coef", self.coef_branch)):
            for i, lyr in enumerate(layers):
                out[f"{prefix}.{i}.weights"] = lyr.weights
                out[f"{prefix}.{i}.bias"] = lyr.bias
        out["head.weights"] = self.head.weights
        out["head.bias"] = self.head.bias
        return out

    def with_params(self, named: Mapping[str, Tensor]) -> SurrogateParams:
        """A copy with every tensor replaced from ``named``."""

        def rebuild(prefix: str, layers: list[DenseLayer]) -> list[DenseLayer]:
            return [
                DenseLayer(named[f"{prefix}.{i}.weights"], named[f"{prefix}.{i}.bias"], lyr.activation)
                for i, lyr in enumerate(layers)
            ]

        return SurrogateParams(
            config=self.config,
            basis_branch=rebuild("basis", self.basis_branch),
            coef_branch=rebuild("coef", self.coef_branch),
            head=DenseLayer(named["head.weights"], named["head.bias"], self.head.activation),
            input_scaler=self.input_scaler,
            site_scaler=self.site_scaler,
        )

    def copy(self) -> SurrogateParams:
        return self.with_params({k: v.copy() for k, v in self.named_params().items()})


@dataclass
class SurrogateMask:
    """Dropout masks for both branches; the head is never masked."""

    basis: DropoutMask
    coef: DropoutMask


def build(
    cfg: ModelConfig,
    p: int,
    q: int,
    rng: Rng,
    input_scaler: Standardizer | None = None,
    site_scaler: Standardizer | None = None,
) -> SurrogateParams:
    """Initialize a surrogate with Glorot-uniform weights and zero biases.

    Raises:
        ConfigurationError: If the branch output widths differ or ``p < 1``.
    """
    cfg.validate_compatible()
    if p < 1 or q < 0:
        raise ConfigurationError(f"need p >= 1 and q >= 0, got p={p}, q={q}")
    basis = init_layers(p, cfg.basis.widths, cfg.basis.activations, rng.spawn(0))
    coef = init_layers(SITE_DIM, cfg.coef.widths, cfg.coef.activations, rng.spawn(1))
    (head,) = init_layers(1 + q, [1], [cfg.head.activation], rng.spawn(2))
    if cfg.head.pin_multiply_weight:
        head.weights[0, 0] = 1.0
    return SurrogateParams(
        config=cfg,
        basis_branch=basis,
        coef_branch=coef,
        head=head,
        input_scaler=input_scaler or Standardizer.identity(p),
        site_scaler=site_scaler or Standardizer.identity(SITE_DIM),
    )


def sample_surrogate_mask(params: SurrogateParams, rng: Rng) -> SurrogateMask:
    """Draw one entry-wise dropout mask for both branches."""
    return SurrogateMask(
        basis=sample_mask(
            params.config.basis.layer_dropout_rates(), layer_shapes(params.basis_branch), rng
        ),
        coef=sample_mask(
            params.config.coef.layer_dropout_rates(), layer_shapes(params.coef_branch), rng
        ),
    )


def apply_mask(params: SurrogateParams, mask: SurrogateMask) -> SurrogateParams:
    """A copy of ``params`` with the masked branch entries set to zero."""
    return SurrogateParams(
        config=params.config,
        basis_branch=mask.basis.apply(params.basis_branch),
        coef_branch=mask.coef.apply(params.coef_branch),
        head=params.head.copy(),
        input_scaler=params.input_scaler,
        site_scaler=params.site_scaler,
    )


def basis_forward(params: SurrogateParams, z: Tensor, mask: SurrogateMask | None = None) -> Tensor:
    """``B(z)`` for one input of length ``p`` or a ``(rows, p)`` batch."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != params.p:
        raise ShapeError(f"input has {z.shape[-1]} dimensions, model expects {params.p}")
    out, _ = forward(params.basis_branch, params.input_scaler.apply(z), mask.basis if mask else None)
    return out


def coef_forward(params: SurrogateParams, s: Tensor, mask: SurrogateMask | None = None) -> Tensor:
    """``η(s)`` for one site or a ``(rows, 2)`` batch."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != SITE_DIM:
        raise ShapeError(f"sites must be 2-d, got trailing dimension {s.shape[-1]}")
    out, _ = forward(params.coef_branch, params.site_scaler.apply(s), mask.coef if mask else None)
    return out


def multiply(eta: Tensor, basis: Tensor) -> Tensor:
    """The multiply layer ``η(s)ᵀB(z)`` along the last axis."""
    return np.sum(np.asarray(eta) * np.asarray(basis), axis=-1)


def predict_mean(
    params: SurrogateParams,
    s: Tensor,
    x: Tensor,
    z: Tensor,
    mask: SurrogateMask | None = None,
) -> float | Tensor:
    """Network mean ``head([η(s)ᵀB(z), x])`` for one point or aligned batches.

    Returns:
        A float for a single point, otherwise one value per row.
    """
    s = np.asarray(s, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.q:
        raise ShapeError(f"covariates have {x.shape[-1]} columns, model expects {params.q}")
    f = multiply(coef_forward(params, s, mask), basis_forward(params, z, mask))
    u = np.concatenate([np.atleast_1d(f)[..., None], np.atleast_2d(x)], axis=-1)
    out, _ = forward([params.head], u)
    values = out[:, 0]
    if s.ndim == 1:
        return float(values[0])
    return values


def predict_surface(
    params: SurrogateParams,
    sites: Tensor,
    covariates: Tensor,
    inputs: Tensor,
    mask: SurrogateMask | None = None,
) -> Tensor:
    """Means for every (simulation, site) pair as an ``(H, n)`` grid.

    Each branch is evaluated once per distinct site or input.
    """
    covariates = np.asarray(covariates, dtype=np.float64)
    if covariates.ndim != 2 or covariates.shape[1] != params.q:
        raise ShapeError(f"covariates must be (n, {params.q}), got {covariates.shape}")
    eta = np.atleast_2d(coef_forward(params, sites, mask))
    basis = np.atleast_2d(basis_forward(params, inputs, mask))
    w = params.head.weights[0]
    pre = w[0] * (basis @ eta.T) + (covariates @ w[1:])[None, :] + params.head.bias[0]
    return activate(params.head.activation, pre)


@dataclass
class PairCache:
    """Intermediates of :func:`forward_pairs` needed by :func:`backward_pairs`."""

    basis_cache: ForwardCache
    coef_cache: ForwardCache
    head_cache: ForwardCache
    basis: Tensor
    eta: Tensor


def forward_pairs(
    params: SurrogateParams,
    sites: Tensor,
    covariates: Tensor,
    inputs: Tensor,
    mask: SurrogateMask | None = None,
) -> tuple[Tensor, PairCache]:
    """Predictions for aligned rows of (site, covariates, input) with a cache."""
    basis, basis_cache = forward(
        params.basis_branch, params.input_scaler.apply(inputs), mask.basis if mask else None
    )
    eta, coef_cache = forward(
        params.coef_branch, params.site_scaler.apply(sites), mask.coef if mask else None
    )
    f = multiply(eta, basis)
    u = np.concatenate([f[:, None], np.asarray(covariates, dtype=np.float64)], axis=1)
    out, head_cache = forward([params.head], u)
    return out[:, 0], PairCache(basis_cache, coef_cache, head_cache, basis, eta)


def backward_pairs(
    params: SurrogateParams, cache: PairCache, d_output: Tensor
) -> dict[str, Tensor]:
    """Gradients of a scalar objective for every named parameter.

    Args:
        params: The parameters used in the forward pass.
        cache: The cache from :func:`forward_pairs`.
        d_output: d(objective)/d(prediction) per row.
    """
    (head_grad,), d_u = backward(cache.head_cache, np.asarray(d_output)[:, None])
    d_f = d_u[:, 0]
    basis_grads, _ = backward(cache.basis_cache, d_f[:, None] * cache.eta)
    coef_grads, _ = backward(cache.coef_cache, d_f[:, None] * cache.basis)

    grads: dict[str, Tensor] = {}
    for prefix, layer_grads in (("basis", basis_grads), ("coef", coef_grads)):
        for i, g in enumerate(layer_grads):
            grads[f"{prefix}.{i}.weights"] = g.weights
            grads[f"{prefix}.{i}.bias"] = g.bias
    head_w = head_grad.weights.copy()
    if params.config.head.pin_multiply_weight:
        head_w[0, 0] = 0.0
    grads["head.weights"] = head_w
    grads["head.bias"] = head_grad.bias
    return grads


def params_to_dict(params: SurrogateParams) -> dict[str, Any]:
    """JSON-ready description of config, standardization and tensors."""
    return {
        "config": params.config.model_dump(mode="json"),
        "input_scaler": {
            "mean": params.input_scaler.mean.tolist(),
            "scale": params.input_scaler.scale.tolist(),
        },
        "site_scaler": {
            "mean": params.site_scaler.mean.tolist(),
            "scale": params.site_scaler.scale.tolist(),
        },
        "tensors": {k: v.tolist() for k, v in params.named_params().items()},
    }


def params_from_dict(data: Mapping[str, Any]) -> SurrogateParams:
    """Inverse of :func:`params_to_dict`."""
    try:
        cfg = ModelConfig.model_validate(data["config"])
        tensors = {k: np.asarray(v, dtype=np.float64) for k, v in data["tensors"].items()}

        def layers(prefix: str, branch: BranchConfig) -> list[DenseLayer]:
            return [
                DenseLayer(tensors[f"{prefix}.{i}.weights"], tensors[f"{prefix}.{i}.bias"], act)
                for i, act in enumerate(branch.activations)
            ]

        return SurrogateParams(
            config=cfg,
            basis_branch=layers("basis", cfg.basis),
            coef_branch=layers("coef", cfg.coef),
            head=DenseLayer(tensors["head.weights"], tensors["head.bias"], cfg.head.activation),
            input_scaler=Standardizer(
                np.asarray(data["input_scaler"]["mean"], dtype=np.float64),
                np.asarray(data["input_scaler"]["scale"], dtype=np.float64),
            ),
            site_scaler=Standardizer(
                np.asarray(data["site_scaler"]["mean"], dtype=np.float64),
                np.asarray(data["site_scaler"]["scale"], dtype=np.float64),
            ),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed model description: {e}") from e


def dumps_params(params: SurrogateParams) -> str:
    """Serialize to the versioned text format (``DSUR1`` header line + JSON)."""
    body = json.dumps(params_to_dict(params), sort_keys=True, separators=(",", ":"))
    return f"{MODEL_MAGIC}\n{body}\n"


def loads_params(text: str) -> SurrogateParams:
    """Parse text written by :func:`dumps_params`.

    Raises:
        FormatError: If the header is missing or names another version.
    """
    header, _, body = text.partition("\n")
    if header.strip() != MODEL_MAGIC:
        raise FormatError(
            f"unsupported model file header {header.strip()[:16]!r}, expected {MODEL_MAGIC!r}"
        )
    try:
        data = json.loads(body)
    except json.JSONDecodeError as e:
        raise FormatError(f"model file body is not valid JSON: {e}") from e
    return params_from_dict(data)


def save_params(params: SurrogateParams, path: str | Path) -> Path:
    """Write a model file atomically."""
    return atomic_write_text(path, dumps_params(params))


def load_params(path: str | Path) -> SurrogateParams:
    """Read a model file written by :func:`save_params`."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"model file {path} does not exist")
    return loads_params(Path(path).read_text(encoding="utf-8"))

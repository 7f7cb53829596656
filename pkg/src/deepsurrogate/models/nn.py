from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum

import numpy as np
from scipy.special import expit

from deepsurrogate.errors import ConfigurationError, NumericError, ShapeError, UsageError
from deepsurrogate.models.tensor import Rng, Tensor

logger = logging.getLogger(__name__)


class ActivationKind(StrEnum):
    """Elementwise activation applied after a dense layer's affine map."""

    RELU = "relu"
    LINEAR = "linear"
    SOFTPLUS = "softplus"


def activate(kind: ActivationKind, x: Tensor) -> Tensor:
    """Apply ReLU ``max(0, x)``, the identity, or softplus ``ln(1 + e^x)``."""
    kind = ActivationKind(kind)
    if kind is ActivationKind.RELU:
        return np.maximum(x, 0.0)
    if kind is ActivationKind.SOFTPLUS:
        return np.logaddexp(0.0, x)
    return np.asarray(x, dtype=np.float64)


def activation_derivative(kind: ActivationKind, pre: Tensor) -> Tensor:
    """Derivative of :func:`activate` at the pre-activation ``pre``.

    The ReLU derivative at exactly 0 is taken to be 0.
    """
    kind = ActivationKind(kind)
    if kind is ActivationKind.RELU:
        return (pre > 0.0).astype(np.float64)
    if kind is ActivationKind.SOFTPLUS:
        return expit(pre)
    return np.ones_like(pre, dtype=np.float64)


@dataclass
class DenseLayer:
    """One affine map ``W x + b`` followed by an activation.

    Attributes:
        weights: ``(out, in)`` weight matrix.
        bias: ``(out,)`` bias vector.
        activation: Activation applied to the affine output.
    """

    weights: Tensor
    bias: Tensor
    activation: ActivationKind = ActivationKind.LINEAR

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.activation = ActivationKind(self.activation)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-d, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )

    @property
    def in_features(self) -> int:
        return int(self.weights.shape[1])

    @property
    def out_features(self) -> int:
        return int(self.weights.shape[0])

    def copy(self) -> DenseLayer:
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class LayerGrad:
    """Gradient of a scalar objective with respect to one layer's parameters."""

    weights: Tensor
    bias: Tensor


def init_layers(
    in_features: int,
    widths: Sequence[int],
    activations: Sequence[ActivationKind],
    rng: Rng,
) -> list[DenseLayer]:
    """Build a stack with Glorot-uniform weights and zero biases."""
    if len(widths) != len(activations):
        raise ConfigurationError("widths and activations must have equal length")
    layers = []
    fan_in = in_features
    for width, kind in zip(widths, activations, strict=True):
        limit = math.sqrt(6.0 / (fan_in + width))
        weights = rng.uniform(-limit, limit, (width, fan_in))
        layers.append(DenseLayer(weights, np.zeros(width), ActivationKind(kind)))
        fan_in = width
    return layers


def layer_shapes(
    layers: Sequence[DenseLayer],
) -> list[tuple[tuple[int, int], tuple[int]]]:
    """Weight and bias shapes of every layer, in order."""
    return [((lyr.out_features, lyr.in_features), (lyr.out_features,)) for lyr in layers]


@dataclass
class DropoutMask:
    """Parameter-shaped binary masks for a stack of layers.

    A zero entry removes the corresponding weight or bias element; kept
    entries are used as-is (no ``1/(1-p)`` rescaling).

    Attributes:
        weights: One 0/1 matrix per layer, shaped like that layer's weights.
        biases: One 0/1 vector per layer, shaped like that layer's bias.
        keep_probs: Retention probability each layer's masks were drawn with.
    """

    weights: list[Tensor]
    biases: list[Tensor]
    keep_probs: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ShapeError("weight and bias mask counts differ")
        if not self.keep_probs:
            self.keep_probs = [1.0] * len(self.weights)
        for m in (*self.weights, *self.biases):
            if not np.all((m == 0.0) | (m == 1.0)):
                raise UsageError("dropout masks must contain only 0 and 1")

    @classmethod
    def full(cls, layers: Sequence[DenseLayer]) -> DropoutMask:
        """The all-ones mask, equivalent to no dropout."""
        return cls(
            weights=[np.ones_like(lyr.weights) for lyr in layers],
            biases=[np.ones_like(lyr.bias) for lyr in layers],
            keep_probs=[1.0] * len(layers),
        )

    def check(self, layers: Sequence[DenseLayer]) -> None:
        """Raise :class:`ShapeError` unless the masks mirror ``layers`` exactly."""
        if len(self.weights) != len(layers):
            raise ShapeError(
                f"mask covers {len(self.weights)} layers, network has {len(layers)}"
            )
        for i, lyr in enumerate(layers):
            if self.weights[i].shape != lyr.weights.shape or self.biases[i].shape != lyr.bias.shape:
                raise ShapeError(f"mask shape mismatch at layer {i}")

    def apply(self, layers: Sequence[DenseLayer]) -> list[DenseLayer]:
        """Return copies of ``layers`` with masked entries zeroed."""
        self.check(layers)
        return [
            DenseLayer(lyr.weights * mw, lyr.bias * mb, lyr.activation)
            for lyr, mw, mb in zip(layers, self.weights, self.biases, strict=True)
        ]


def sample_mask(
    layer_dropout_rates: Sequence[float],
    shapes: Sequence[tuple[tuple[int, int], tuple[int]]],
    rng: Rng,
) -> DropoutMask:
    """Draw independent Bernoulli(1 - p) entries for every weight and bias.

    Args:
        layer_dropout_rates: Dropout probability ``p`` per layer, each in [0, 1).
        shapes: ``(weight_shape, bias_shape)`` per layer, see :func:`layer_shapes`.
        rng: Random stream.

    Raises:
        ConfigurationError: If a rate lies outside [0, 1) or counts differ.
    """
    if len(layer_dropout_rates) != len(shapes):
        raise ConfigurationError("one dropout rate is required per layer")
    weights, biases, keeps = [], [], []
    for rate, (w_shape, b_shape) in zip(layer_dropout_rates, shapes, strict=True):
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
        keep = 1.0 - rate
        weights.append(rng.bernoulli(keep, w_shape))
        biases.append(rng.bernoulli(keep, b_shape))
        keeps.append(keep)
    return DropoutMask(weights=weights, biases=biases, keep_probs=keeps)


@dataclass
class ForwardCache:
    """Intermediates recorded by :func:`forward` for :func:`backward`."""

    layers: list[DenseLayer]
    inputs: list[Tensor]
    pre_activations: list[Tensor]
    mask: DropoutMask | None
    squeeze: bool


def forward(
    layers: Sequence[DenseLayer],
    x: Tensor,
    mask: DropoutMask | None = None,
) -> tuple[Tensor, ForwardCache]:
    """Evaluate ``σ_L(W_L ... σ_1(W_1 x + b_1) ... + b_L)``.

    Args:
        layers: The layer stack.
        x: A single input vector or a ``(batch, in)`` matrix.
        mask: Optional dropout mask; masked entries are zeroed before use.

    Returns:
        The output (same leading shape as ``x``) and the cache for
        :func:`backward`.
    """
    if not layers:
        raise ShapeError("cannot run a forward pass through zero layers")
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != layers[0].in_features:
        raise ShapeError(
            f"input shape {x.shape} does not match first layer width {layers[0].in_features}"
        )
    effective = mask.apply(layers) if mask is not None else list(layers)

    inputs, pres = [], []
    for lyr in effective:
        if h.shape[1] != lyr.in_features:
            raise ShapeError(f"layer expects {lyr.in_features} inputs, got {h.shape[1]}")
        inputs.append(h)
        z = h @ lyr.weights.T + lyr.bias
        pres.append(z)
        h = activate(lyr.activation, z)

    cache = ForwardCache(effective, inputs, pres, mask, squeeze)
    return (h[0] if squeeze else h), cache


def backward(
    cache: ForwardCache | None, upstream_gradient: Tensor
) -> tuple[list[LayerGrad], Tensor]:
    """Reverse-mode gradients for every weight and bias of a cached forward pass.

    Args:
        cache: The cache returned by :func:`forward`.
        upstream_gradient: d(objective)/d(output), shaped like the output.

    Returns:
        Per-layer gradients (masked entries receive zero gradient) and the
        gradient with respect to the forward input.

    Raises:
        UsageError: If no cache is given.
    """
    if cache is None or not cache.inputs:
        raise UsageError("backward requires the cache of a forward pass")
    grad = np.asarray(upstream_gradient, dtype=np.float64)
    if cache.squeeze:
        grad = grad[None, :]
    expected = cache.pre_activations[-1].shape
    if grad.shape != expected:
        raise ShapeError(f"upstream gradient shape {grad.shape}, expected {expected}")

    grads: list[LayerGrad] = []
    for idx in range(len(cache.layers) - 1, -1, -1):
        lyr = cache.layers[idx]
        dz = grad * activation_derivative(lyr.activation, cache.pre_activations[idx])
        d_w = dz.T @ cache.inputs[idx]
        d_b = dz.sum(axis=0)
        if cache.mask is not None:
            d_w = d_w * cache.mask.weights[idx]
            d_b = d_b * cache.mask.biases[idx]
        grads.append(LayerGrad(d_w, d_b))
        grad = dz @ lyr.weights
    grads.reverse()
    return grads, (grad[0] if cache.squeeze else grad)


@dataclass
class AdamState:
    """Moment accumulators and schedule of the Adam optimizer.

    Attributes:
        m: First-moment accumulator per named parameter.
        v: Second-moment accumulator per named parameter.
        step: Number of updates applied so far.
        base_lr: Learning rate at step 0.
        decay_steps: Steps over which the rate decays by ``decay_rate``.
        decay_rate: Multiplicative decay in (0, 1].
        staircase: Use an integer exponent instead of a continuous one.
    """

    m: dict[str, Tensor]
    v: dict[str, Tensor]
    step: int = 0
    base_lr: float = 1e-2
    decay_steps: int = 10_000
    decay_rate: float = 0.97
    staircase: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ConfigurationError(f"base_lr must be positive, got {self.base_lr}")
        if self.decay_steps <= 0:
            raise ConfigurationError(f"decay_steps must be positive, got {self.decay_steps}")
        if not 0.0 < self.decay_rate <= 1.0:
            raise ConfigurationError(f"decay_rate must be in (0, 1], got {self.decay_rate}")
        if self.step < 0:
            raise ConfigurationError("step counter must be non-negative")

    @classmethod
    def fresh(
        cls,
        params: Mapping[str, Tensor],
        base_lr: float = 1e-2,
        decay_steps: int = 10_000,
        decay_rate: float = 0.97,
        staircase: bool = False,
    ) -> AdamState:
        """Zero accumulators shaped like ``params``."""
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            base_lr=base_lr,
            decay_steps=decay_steps,
            decay_rate=decay_rate,
            staircase=staircase,
        )


def lr_at(state: AdamState, step: int) -> float:
    """Learning rate ``base_lr * decay_rate ** (step / decay_steps)``."""
    if step < 0:
        raise UsageError(f"step must be non-negative, got {step}")
    exponent = step / state.decay_steps
    if state.staircase:
        exponent = math.floor(exponent)
    return state.base_lr * state.decay_rate**exponent


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Tensor],
    state: AdamState,
) -> tuple[dict[str, Tensor], AdamState]:
    """Apply one bias-corrected Adam update.

    Returns:
        New parameter arrays and the advanced state; inputs are not mutated.

    Raises:
        ShapeError: If names or shapes of params, grads and state disagree.
        NumericError: If a gradient contains NaN or infinity.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeError("params, grads and optimizer state name different tensors")
    for name, g in grads.items():
        if g.shape != params[name].shape or state.m[name].shape != g.shape:
            raise ShapeError(f"gradient shape mismatch for parameter '{name}'")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")

    lr = lr_at(state, state.step)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t

    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(state, m=new_m, v=new_v, step=t)


def clip_by_global_norm(
    grads: Mapping[str, Tensor], max_norm: float
) -> tuple[dict[str, Tensor], float]:
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm

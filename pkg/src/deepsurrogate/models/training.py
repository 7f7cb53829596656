from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat, PositiveInt

from deepsurrogate.errors import ConfigurationError, NumericError, TrainingDivergedError, UsageError
from deepsurrogate.models.dataset import Dataset
from deepsurrogate.models.nn import AdamState, adam_step, clip_by_global_norm, lr_at
from deepsurrogate.models.surrogate import (
    ModelConfig,
    Standardizer,
    SurrogateMask,
    SurrogateParams,
    backward_pairs,
    build,
    forward_pairs,
    predict_surface,
    sample_surrogate_mask,
)
from deepsurrogate.models.tensor import Rng, Tensor
from deepsurrogate.utils.io import write_csv

logger = logging.getLogger(__name__)

HookFn = Callable[..., Any]


class Penalties(BaseModel):
    """L2 penalty weights per layer class; ``None`` selects ``p_l / (2nH)``.

    ``p_l`` is the dropout rate of layer ``l``, so unmasked layers get no
    default penalty.
    """

    model_config = ConfigDict(frozen=True)

    basis_weights: NonNegativeFloat | None = None
    basis_biases: NonNegativeFloat | None = None
    coef_weights: NonNegativeFloat | None = None
    coef_biases: NonNegativeFloat | None = None


class TrainConfig(BaseModel):
    """Optimizer, schedule, batching and penalty settings."""

    model_config = ConfigDict(frozen=True)

    batch_size: PositiveInt = 128
    epochs: PositiveInt = 500
    base_lr: PositiveFloat = 1e-2
    decay_steps: PositiveInt = 10_000
    decay_rate: float = Field(default=0.97, gt=0.0, le=1.0)
    staircase: bool = False
    penalties: Penalties = Penalties()
    seed: int = Field(default=0, ge=0)
    validation_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)
    validation_sims: list[int] | None = None
    train_dropout: bool = True
    clip_norm: PositiveFloat | None = None

    @classmethod
    def simulation_default(cls, **overrides: Any) -> TrainConfig:
        return cls(**{"decay_steps": 10_000, "decay_rate": 0.97, **overrides})

    @classmethod
    def real_data_default(cls, **overrides: Any) -> TrainConfig:
        return cls(**{"decay_steps": 5_000, "decay_rate": 0.96, **overrides})


@dataclass
class LogRow:
    epoch: int
    step: int
    lr: float
    train_loss: float
    val_loss: float | None = None


@dataclass
class TrainingLog:
    """Per-epoch record; epoch 0 holds the loss before any update."""

    rows: list[LogRow] = field(default_factory=list)

    def append(self, row: LogRow) -> None:
        self.rows.append(row)

    def losses(self) -> list[float]:
        return [r.train_loss for r in self.rows]

    def to_frame(self) -> pd.DataFrame:
        columns = ["epoch", "step", "lr", "train_loss", "val_loss"]
        return pd.DataFrame([asdict(r) for r in self.rows], columns=columns)

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(path, self.to_frame())


@dataclass
class TrainResult:
    params: SurrogateParams
    log: TrainingLog


def penalty_weights(params: SurrogateParams, penalties: Penalties, n: int, H: int) -> dict[str, float]:
    """λ for every branch tensor, keyed like :meth:`SurrogateParams.named_params`."""
    out: dict[str, float] = {}
    branches = (
        ("basis", params.basis_branch, params.config.basis, penalties.basis_weights, penalties.basis_biases),
        ("coef", params.coef_branch, params.config.coef, penalties.coef_weights, penalties.coef_biases),
    )
    for prefix, layers, branch_cfg, lam_w, lam_b in branches:
        rates = branch_cfg.layer_dropout_rates()
        for i in range(len(layers)):
            default = rates[i] / (2.0 * n * H)
            out[f"{prefix}.{i}.weights"] = default if lam_w is None else lam_w
            out[f"{prefix}.{i}.bias"] = default if lam_b is None else lam_b
    return out


def penalty_term(named: dict[str, Tensor], lambdas: dict[str, float]) -> float:
    """``Σ λ ||θ||²`` over the penalized tensors."""
    return float(sum(lam * float(np.sum(named[k] ** 2)) for k, lam in lambdas.items() if lam))


def _flat_batch(batch: Sequence[tuple[int, int]] | NDArray[np.int64], n: int) -> NDArray[np.int64]:
    arr = np.asarray(batch, dtype=np.int64)
    if arr.ndim == 2 and arr.shape[1] == 2:
        return arr[:, 1] * n + arr[:, 0]
    return arr.reshape(-1)


def loss(
    params: SurrogateParams,
    data: Dataset,
    batch: Sequence[tuple[int, int]] | NDArray[np.int64],
    cfg: TrainConfig,
    mask: SurrogateMask | None = None,
) -> float:
    """Penalized objective on a batch.

    ``(1 / 2|batch|) Σ (y - ŷ)²`` plus ``λ``-weighted squared norms of every
    weight matrix and bias vector in both branches; the noise variance is
    held at 1.

    Args:
        params: Network parameters.
        data: Dataset the batch indexes into.
        batch: ``(i, h)`` site/simulation pairs, or flat indices ``h * n + i``.
        cfg: Supplies the penalty weights.
        mask: Optional dropout mask for the forward pass.

    Raises:
        UsageError: If the batch is empty.
        NumericError: If a prediction is not finite.
    """
    index = _flat_batch(batch, data.n)
    if index.size == 0:
        raise UsageError("loss needs a non-empty batch")
    sites, covs, inputs, y = data.pairs(index)
    y_hat, _ = forward_pairs(params, sites, covs, inputs, mask)
    if not np.all(np.isfinite(y_hat)):
        raise NumericError("non-finite prediction in loss")
    lambdas = penalty_weights(params, cfg.penalties, data.n, data.H)
    return 0.5 * float(np.mean((y - y_hat) ** 2)) + penalty_term(params.named_params(), lambdas)


def loss_and_gradients(
    params: SurrogateParams,
    data: Dataset,
    index: NDArray[np.int64],
    lambdas: dict[str, float],
    mask: SurrogateMask | None = None,
) -> tuple[float, dict[str, Tensor]]:
    """Batch objective and its gradient for every named parameter."""
    sites, covs, inputs, y = data.pairs(index)
    y_hat, cache = forward_pairs(params, sites, covs, inputs, mask)
    residual = y_hat - y
    named = params.named_params()
    value = 0.5 * float(np.mean(residual**2)) + penalty_term(named, lambdas)
    if not math.isfinite(value):
        return value, {}
    grads = backward_pairs(params, cache, residual / index.size)
    for name, lam in lambdas.items():
        if lam:
            grads[name] = grads[name] + 2.0 * lam * named[name]
    return value, grads


def full_objective(params: SurrogateParams, data: Dataset, lambdas: dict[str, float]) -> float:
    """The penalized objective over every pair of ``data``, without dropout."""
    pred = predict_surface(params, data.sites, data.fine_covariates, data.inputs)
    return 0.5 * float(np.mean((data.responses - pred) ** 2)) + penalty_term(params.named_params(), lambdas)


class Trainer:
    """Mini-batch Adam minimization of the penalized objective.

    Hooks can be registered for ``on_step``, ``on_epoch_end``,
    ``on_diverged`` and ``on_train_complete``; a failing callback is logged
    and does not stop training.

    Attributes:
        model_cfg: Architecture to build.
        cfg: Optimizer and batching settings.
        verbose: Echo epoch summaries to stdout as well as the logger.
    """

    EVENTS = ("on_step", "on_epoch_end", "on_diverged", "on_train_complete")

    def __init__(
        self,
        model_cfg: ModelConfig,
        cfg: TrainConfig,
        verbose: bool = False,
        logger: logging.Logger | None = None,
    ) -> None:
        self.model_cfg = model_cfg
        self.cfg = cfg
        self.verbose = verbose
        self._logger = logger if logger is not None else logging.getLogger(__name__)
        self.hooks: dict[str, list[HookFn]] = {event: [] for event in self.EVENTS}

    def register_hook(self, event: str, callback: HookFn) -> None:
        """Register ``callback`` for one of :attr:`EVENTS`."""
        if event not in self.hooks:
            raise ValueError(f"Unknown event hook: {event}")
        self.hooks[event].append(callback)

    def _trigger_hook(self, event: str, **kwargs: Any) -> None:
        for callback in self.hooks.get(event, []):
            try:
                callback(**kwargs)
            except Exception as e:
                self._logger.error("Error in hook %s: %s", event, e)

    def _log(self, level: int, msg: str, *args: Any) -> None:
        self._logger.log(level, msg, *args)
        if self.verbose:
            print(msg % args if args else msg)

    def split_validation(self, data: Dataset, rng: Rng) -> tuple[Dataset, Dataset | None]:
        """Hold out simulations by id or by fraction; validation is only logged."""
        if self.cfg.validation_sims:
            wanted = set(self.cfg.validation_sims)
            unknown = wanted - set(data.sim_ids.tolist())
            if unknown:
                raise ConfigurationError(f"validation sims not in dataset: {sorted(unknown)}")
            is_val = np.isin(data.sim_ids, list(wanted))
        elif self.cfg.validation_fraction > 0:
            n_val = max(1, round(self.cfg.validation_fraction * data.H))
            is_val = np.zeros(data.H, dtype=bool)
            is_val[rng.permutation(data.H)[:n_val]] = True
        else:
            return data, None
        if is_val.all():
            raise ConfigurationError("validation split leaves no simulations for training")
        return data.select_sims(np.flatnonzero(~is_val)), data.select_sims(np.flatnonzero(is_val))

    def fit(self, data: Dataset, rng: Rng | None = None) -> TrainResult:
        """Train on ``data`` and return the final-epoch parameters with the log.

        Raises:
            ConfigurationError: If the batch is larger than the number of pairs.
            TrainingDivergedError: If the loss stops being finite.
        """
        cfg = self.cfg
        rng = rng or Rng(cfg.seed)
        train_data, val_data = self.split_validation(data, rng.spawn(3))
        n_pairs = train_data.n_pairs
        if cfg.batch_size > n_pairs:
            raise ConfigurationError(
                f"batch_size {cfg.batch_size} exceeds the {n_pairs} training pairs"
            )

        params = build(
            self.model_cfg,
            train_data.p,
            train_data.q,
            rng.spawn(0),
            input_scaler=Standardizer.fit(train_data.inputs),
            site_scaler=Standardizer.fit(train_data.sites),
        )
        lambdas = penalty_weights(params, cfg.penalties, train_data.n, train_data.H)
        state = AdamState.fresh(
            params.named_params(), cfg.base_lr, cfg.decay_steps, cfg.decay_rate, cfg.staircase
        )
        shuffle_rng, mask_rng = rng.spawn(1), rng.spawn(2)

        log = TrainingLog()
        log.append(self._epoch_row(0, state, params, train_data, val_data, lambdas))
        self._log(logging.INFO, "Training on %d pairs (%d sims x %d sites)", n_pairs, train_data.H, train_data.n)

        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(n_pairs)
            for start in range(0, n_pairs, cfg.batch_size):
                index = order[start : start + cfg.batch_size]
                mask = sample_surrogate_mask(params, mask_rng) if cfg.train_dropout else None
                params, state, batch_loss = self._step(params, state, train_data, index, lambdas, mask, epoch)
                if self.hooks["on_step"]:
                    self._trigger_hook(
                        "on_step", epoch=epoch, step=state.step, loss=batch_loss, batch=index
                    )

            row = self._epoch_row(epoch, state, params, train_data, val_data, lambdas)
            if not math.isfinite(row.train_loss):
                self._diverged(epoch, state.step, row.train_loss)
            log.append(row)
            self._logger.debug("epoch %d: train_loss=%.6f val_loss=%s", epoch, row.train_loss, row.val_loss)
            self._trigger_hook("on_epoch_end", epoch=epoch, row=row, params=params)

        final = log.rows[-1]
        self._log(logging.INFO, "Training complete: %d epochs, %d steps, final loss %.6f", cfg.epochs, state.step, final.train_loss)
        self._trigger_hook("on_train_complete", params=params, log=log)
        return TrainResult(params=params, log=log)

    def _step(
        self,
        params: SurrogateParams,
        state: AdamState,
        data: Dataset,
        index: NDArray[np.int64],
        lambdas: dict[str, float],
        mask: SurrogateMask | None,
        epoch: int,
    ) -> tuple[SurrogateParams, AdamState, float]:
        batch_loss, grads = loss_and_gradients(params, data, index, lambdas, mask)
        if not math.isfinite(batch_loss):
            self._diverged(epoch, state.step + 1, batch_loss)
        if self.cfg.clip_norm is not None:
            grads, _ = clip_by_global_norm(grads, self.cfg.clip_norm)
        new_named, state = adam_step(params.named_params(), grads, state)
        return params.with_params(new_named), state, batch_loss

    def _epoch_row(
        self,
        epoch: int,
        state: AdamState,
        params: SurrogateParams,
        train_data: Dataset,
        val_data: Dataset | None,
        lambdas: dict[str, float],
    ) -> LogRow:
        val = full_objective(params, val_data, lambdas) if val_data is not None else None
        return LogRow(
            epoch=epoch,
            step=state.step,
            lr=lr_at(state, state.step),
            train_loss=full_objective(params, train_data, lambdas),
            val_loss=val,
        )

    def _diverged(self, epoch: int, step: int, value: float) -> None:
        self._logger.error("Loss became non-finite at epoch %d, step %d", epoch, step)
        self._trigger_hook("on_diverged", epoch=epoch, step=step, loss=value)
        raise TrainingDivergedError(epoch, step, value)


def train(
    data: Dataset,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    rng: Rng | None = None,
    verbose: bool = False,
) -> TrainResult:
    """Fit a surrogate; see :class:`Trainer` for hooks and details."""
    return Trainer(model_cfg, cfg, verbose=verbose).fit(data, rng)

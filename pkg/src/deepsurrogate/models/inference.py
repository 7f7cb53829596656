from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

from deepsurrogate.errors import ConfigurationError, UsageError
from deepsurrogate.models.dataset import Dataset
from deepsurrogate.models.surrogate import (
    ModelConfig,
    SurrogateMask,
    SurrogateParams,
    apply_mask,
    predict_mean,
    predict_surface,
    sample_surrogate_mask,
)
from deepsurrogate.models.tensor import Rng, Tensor
from deepsurrogate.models.training import TrainConfig, train

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ["sim_id", "site_id", "mean", "sd", "lower", "upper"]


class InferenceConfig(BaseModel):
    """Settings for posterior draws and predictive summaries.

    Attributes:
        draws: Number of dropout masks ``F``.
        noise_normalizer: ``half`` divides the residual sum of squares by
            ``2nH``; ``full`` divides by ``nH``.
        noise_floor: Lower bound on every draw's noise variance.
        noise_var: Fixed noise variance for every draw, replacing the
            training-residual estimate; see :func:`holdout_noise_variance`.
        calibration_folds: When set, runs estimate ``noise_var`` from this
            many simulation folds before predicting.
        samples_per_draw: Noise samples drawn per mask.
        level: Nominal coverage of the predictive interval.
        max_chunk: Upper bound on samples held in memory at once.
    """

    model_config = ConfigDict(frozen=True)

    draws: PositiveInt = 500
    noise_normalizer: Literal["half", "full"] = "half"
    noise_floor: PositiveFloat = 1e-8
    noise_var: PositiveFloat | None = None
    calibration_folds: int | None = Field(default=None, ge=2)
    samples_per_draw: PositiveInt = 1
    level: float = Field(default=0.95, gt=0.0, lt=1.0)
    max_chunk: PositiveInt = 20_000_000


class PredictiveSummary(BaseModel):
    """Point prediction and interval for one query point."""

    mean: float
    sd: float = Field(ge=0.0)
    lower: float
    upper: float
    level: float = Field(default=0.95, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_order(self) -> PredictiveSummary:
        if self.lower > self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")
        return self


@dataclass
class PosteriorDraw:
    """One approximate posterior sample: masked parameters and noise variance."""

    masked_params: SurrogateParams
    noise_var: float

    def __post_init__(self) -> None:
        if not self.noise_var > 0:
            raise UsageError(f"noise variance must be positive, got {self.noise_var}")


def noise_variance(
    params: SurrogateParams,
    data: Dataset,
    mask: SurrogateMask | None = None,
    normalizer: Literal["half", "full"] = "half",
    floor: float = 1e-8,
) -> float:
    """Residual variance of a (masked) network over every pair of ``data``."""
    pred = predict_surface(params, data.sites, data.fine_covariates, data.inputs, mask)
    ss = float(np.sum((data.responses - pred) ** 2))
    denom = (2.0 if normalizer == "half" else 1.0) * data.n * data.H
    return max(ss / denom, floor)


def draw_posterior(
    fitted: SurrogateParams,
    data: Dataset,
    F: int,
    rng: Rng,
    normalizer: Literal["half", "full"] = "half",
    floor: float = 1e-8,
    noise_var: float | None = None,
) -> list[PosteriorDraw]:
    """Draw ``F`` dropout masks and the matching noise variances.

    Draw ``f`` uses the child stream ``rng.spawn(f)``, so draws can be
    produced independently of each other. A given ``noise_var`` is shared by
    every draw instead of each masked network's residual variance on ``data``.

    Raises:
        ConfigurationError: If ``F < 1``.
    """
    if F < 1:
        raise ConfigurationError(f"need at least one posterior draw, got F={F}")
    draws = []
    for f in range(F):
        mask = sample_surrogate_mask(fitted, rng.spawn(f))
        masked = apply_mask(fitted, mask)
        if noise_var is None:
            variance = noise_variance(masked, data, None, normalizer, floor)
        else:
            variance = max(noise_var, floor)
        draws.append(PosteriorDraw(masked, variance))
    variances = np.array([d.noise_var for d in draws])
    logger.debug(
        "Drew %d posterior samples: noise variance median %.4g (min %.4g, max %.4g)",
        F, float(np.median(variances)), float(variances.min()), float(variances.max()),
    )
    return draws


def holdout_noise_variance(
    data: Dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    folds: int = 3,
    rng: Rng | None = None,
    floor: float = 1e-8,
) -> float:
    """Residual variance of refits on simulations they never saw.

    Simulations are split into ``folds`` groups. Each group is predicted by a
    network trained on the remaining groups, and the squared residuals of all
    groups are averaged over the ``nH`` pairs.

    Raises:
        ConfigurationError: If ``folds`` is below 2 or above the simulation count.
    """
    if not 2 <= folds <= data.H:
        raise ConfigurationError(f"need 2 <= folds <= {data.H} simulations, got {folds}")
    rng = rng or Rng(0)
    groups = np.array_split(rng.spawn(0).permutation(data.H), folds)
    ss = 0.0
    for k, held in enumerate(groups):
        rest = np.setdiff1d(np.arange(data.H), held)
        fitted = train(data.select_sims(rest), model_cfg, train_cfg, rng.spawn(k + 1)).params
        held_out = data.select_sims(np.sort(held))
        pred = predict_surface(fitted, held_out.sites, held_out.fine_covariates, held_out.inputs)
        fold_ss = float(np.sum((held_out.responses - pred) ** 2))
        logger.info("Calibration fold %d/%d: held-out RMSE %.4f", k + 1, folds, (fold_ss / pred.size) ** 0.5)
        ss += fold_ss
    return max(ss / (data.n * data.H), floor)


def predictive_samples(
    draws: list[PosteriorDraw],
    s: Tensor,
    x: Tensor,
    z: Tensor,
    rng: Rng,
    samples_per_draw: int = 1,
) -> Tensor:
    """Composition samples at one query point, ``samples_per_draw`` per draw."""
    if not draws:
        raise UsageError("predictive sampling needs at least one posterior draw")
    out = np.empty(len(draws) * samples_per_draw)
    for f, draw in enumerate(draws):
        m = predict_mean(draw.masked_params, s, x, z)
        noise = rng.normal(samples_per_draw) * np.sqrt(draw.noise_var)
        out[f * samples_per_draw : (f + 1) * samples_per_draw] = m + noise
    return out


def summarize(samples: Tensor, level: float = 0.95) -> PredictiveSummary:
    """Sample mean, sample sd and linear-interpolation quantile interval.

    Raises:
        UsageError: If fewer than two samples are given.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size < 2:
        raise UsageError("summarize needs at least two samples")
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(samples, [tail, 1.0 - tail], method="linear")
    return PredictiveSummary(
        mean=float(samples.mean()),
        sd=float(samples.std(ddof=1)),
        lower=float(lower),
        upper=float(upper),
        level=level,
    )


def summarize_matrix(samples: Tensor, level: float = 0.95) -> dict[str, Tensor]:
    """Column-wise :func:`summarize` for a ``(samples, points)`` matrix."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise UsageError("summarize_matrix needs a (samples >= 2, points) matrix")
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(samples, [tail, 1.0 - tail], axis=0, method="linear")
    return {
        "mean": samples.mean(axis=0),
        "sd": samples.std(axis=0, ddof=1),
        "lower": lower,
        "upper": upper,
    }


def predict_dataset(
    draws: list[PosteriorDraw],
    query: Dataset,
    rng: Rng,
    cfg: InferenceConfig | None = None,
) -> pd.DataFrame:
    """Predictive summaries for every (simulation, site) pair of ``query``.

    Every draw's mask is shared by all query points. Query simulations are
    processed in chunks so that at most ``cfg.max_chunk`` samples are held
    at once; chunk ``j`` draws its noise from ``rng.spawn(j)``.

    Returns:
        A frame with columns ``sim_id, site_id, mean, sd, lower, upper``.
    """
    cfg = cfg or InferenceConfig()
    if not draws:
        raise UsageError("prediction needs at least one posterior draw")
    k = cfg.samples_per_draw
    n_samples = len(draws) * k
    if n_samples < 2:
        raise UsageError("need at least two predictive samples per point; raise draws or samples_per_draw")
    per_sim = n_samples * query.n
    chunk = max(1, min(query.H, cfg.max_chunk // max(per_sim, 1)))

    parts = []
    for j, start in enumerate(range(0, query.H, chunk)):
        rows = np.arange(start, min(start + chunk, query.H))
        chunk_rng = rng.spawn(j)
        samples = np.empty((n_samples, rows.size, query.n))
        for f, draw in enumerate(draws):
            means = predict_surface(
                draw.masked_params, query.sites, query.fine_covariates, query.inputs[rows]
            )
            noise = chunk_rng.normal((k, rows.size, query.n)) * np.sqrt(draw.noise_var)
            samples[f * k : (f + 1) * k] = means[None] + noise
        stats = summarize_matrix(samples.reshape(n_samples, -1), cfg.level)
        parts.append(
            pd.DataFrame(
                {
                    "sim_id": np.repeat(query.sim_ids[rows], query.n),
                    "site_id": np.tile(query.site_ids, rows.size),
                    **stats,
                }
            )
        )
    return pd.concat(parts, ignore_index=True)[PREDICTION_COLUMNS]


def predict_with_uncertainty(
    fitted: SurrogateParams,
    fitted_on: Dataset,
    query: Dataset,
    cfg: InferenceConfig | None = None,
    rng: Rng | None = None,
) -> pd.DataFrame:
    """Draw the posterior against ``fitted_on`` and summarize predictions on ``query``."""
    cfg = cfg or InferenceConfig()
    rng = rng or Rng(0)
    draws = draw_posterior(
        fitted, fitted_on, cfg.draws, rng.spawn(0), cfg.noise_normalizer, cfg.noise_floor, cfg.noise_var
    )
    return predict_dataset(draws, query, rng.spawn(1), cfg)

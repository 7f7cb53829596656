from __future__ import annotations

import json
from collections.abc import Sequence

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveInt

from deepsurrogate.errors import FormatError, UsageError

DEFAULT_THRESHOLD = 4.0

REPORT_COLUMNS = ["rmspe", "coverage", "mean_length", "misclass_rate", "n_eval", "threshold"]


def _vectors(*arrays: ArrayLike) -> list[np.ndarray]:
    out = [np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays]
    sizes = {a.size for a in out}
    if len(sizes) != 1:
        raise UsageError(f"length mismatch: {[a.size for a in out]}")
    if 0 in sizes:
        raise UsageError("metrics need at least one value")
    return out


def rmspe(y_true: ArrayLike, y_pred: ArrayLike) -> float:
    """Root mean squared prediction error."""
    y, yhat = _vectors(y_true, y_pred)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def coverage(y_true: ArrayLike, lower: ArrayLike, upper: ArrayLike) -> float:
    """Fraction of values inside their closed interval.

    Raises:
        UsageError: If any lower bound exceeds its upper bound.
    """
    y, lo, hi = _vectors(y_true, lower, upper)
    if np.any(lo > hi):
        raise UsageError(f"{int(np.sum(lo > hi))} interval(s) have lower > upper")
    return float(np.mean((lo <= y) & (y <= hi)))


def mean_interval_length(lower: ArrayLike, upper: ArrayLike) -> float:
    lo, hi = _vectors(lower, upper)
    if np.any(lo > hi):
        raise UsageError("interval lower bound exceeds upper bound")
    return float(np.mean(hi - lo))


def misclassification_rate(y_true: ArrayLike, y_pred: ArrayLike, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Fraction of points on different sides of ``threshold`` (``>`` means exceeding)."""
    y, yhat = _vectors(y_true, y_pred)
    return float(np.mean((y > threshold) != (yhat > threshold)))


class EvalReport(BaseModel):
    """Pooled evaluation of one set of predictions."""

    model_config = ConfigDict(frozen=True)

    rmspe: NonNegativeFloat
    coverage: float = Field(ge=0.0, le=1.0)
    mean_length: NonNegativeFloat
    misclass_rate: float = Field(ge=0.0, le=1.0)
    n_eval: PositiveInt
    threshold: float = DEFAULT_THRESHOLD

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), indent=2, sort_keys=True) + "\n"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.model_dump()], columns=REPORT_COLUMNS)

    def to_csv_row(self) -> str:
        """Header plus a single data row."""
        return self.to_frame().to_csv(index=False, lineterminator="\n")


def evaluate(
    y_true: ArrayLike,
    mean: ArrayLike,
    lower: ArrayLike,
    upper: ArrayLike,
    threshold: float = DEFAULT_THRESHOLD,
) -> EvalReport:
    y, m, lo, hi = _vectors(y_true, mean, lower, upper)
    return EvalReport(
        rmspe=rmspe(y, m),
        coverage=coverage(y, lo, hi),
        mean_length=mean_interval_length(lo, hi),
        misclass_rate=misclassification_rate(y, m, threshold),
        n_eval=y.size,
        threshold=threshold,
    )


def truth_frame(sim_ids: Sequence[int], site_ids: Sequence[int], responses: ArrayLike) -> pd.DataFrame:
    """Long ``sim_id, site_id, y`` frame of an ``(H, n)`` response grid."""
    responses = np.asarray(responses, dtype=np.float64)
    return pd.DataFrame(
        {
            "sim_id": np.repeat(np.asarray(sim_ids), responses.shape[1]),
            "site_id": np.tile(np.asarray(site_ids), responses.shape[0]),
            "y": responses.reshape(-1),
        }
    )


def _join(predictions: pd.DataFrame, truth: pd.DataFrame) -> pd.DataFrame:
    needed = {"sim_id", "site_id", "mean", "lower", "upper"}
    missing = needed - set(predictions.columns)
    if missing:
        raise FormatError(f"predictions lack columns {sorted(missing)}")
    joined = predictions.merge(truth, on=["sim_id", "site_id"], how="left", validate="one_to_one")
    if joined["y"].isna().any():
        raise FormatError(f"{int(joined['y'].isna().sum())} prediction(s) have no matching truth")
    return joined


def evaluate_frame(
    predictions: pd.DataFrame, truth: pd.DataFrame, threshold: float = DEFAULT_THRESHOLD
) -> EvalReport:
    """Join predictions with truth on ``(sim_id, site_id)`` and evaluate.

    Raises:
        FormatError: If columns are missing or a prediction has no truth row.
    """
    joined = _join(predictions, truth)
    return evaluate(joined["y"], joined["mean"], joined["lower"], joined["upper"], threshold)


def per_simulation(
    predictions: pd.DataFrame, truth: pd.DataFrame, threshold: float = DEFAULT_THRESHOLD
) -> pd.DataFrame:
    """One report row per simulation id, sorted by id."""
    joined = _join(predictions, truth)
    rows = []
    for sim_id, group in joined.groupby("sim_id", sort=True):
        report = evaluate(group["y"], group["mean"], group["lower"], group["upper"], threshold)
        rows.append({"sim_id": int(sim_id), **report.model_dump()})
    return pd.DataFrame(rows, columns=["sim_id", *REPORT_COLUMNS])

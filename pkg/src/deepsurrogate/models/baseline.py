from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.linalg import cho_solve

from deepsurrogate.errors import ConfigurationError, DecompositionError, NumericError, ShapeError
from deepsurrogate.models.datagen import Range, bspline_basis_1d
from deepsurrogate.models.dataset import Dataset
from deepsurrogate.models.inference import PREDICTION_COLUMNS
from deepsurrogate.models.tensor import Tensor, cholesky

logger = logging.getLogger(__name__)

SPLINE_ORDER = 4
INTERVAL_Z = 1.96


@dataclass
class FosrModel:
    """Fitted baseline.

    Attributes:
        coefficients: ``(1 + p + q, m_s²)`` map from regressors to spatial weights.
        m_s: Spatial basis functions per dimension.
        domain: Spatial extent of the basis in both coordinates.
        residual_sd: Root mean squared training residual.
        lam: Ridge penalty used in the fit.
    """

    coefficients: Tensor
    m_s: int
    p: int
    q: int
    domain: Range = (0.0, 10.0)
    residual_sd: float = 0.0
    lam: float = 1e-6

    def __post_init__(self) -> None:
        expected = (1 + self.p + self.q, self.m_s**2)
        if self.coefficients.shape != expected:
            raise ShapeError(f"coefficients must be {expected}, got {self.coefficients.shape}")

    def spatial_basis(self, sites: Tensor) -> Tensor:
        """``(n, m_s²)`` tensor-product basis at ``sites``; outside points are clamped."""
        sites = np.atleast_2d(np.asarray(sites, dtype=np.float64))
        lo, hi = self.domain
        outside = int(np.sum((sites < lo) | (sites > hi)))
        if outside:
            logger.warning("Clamping %d site coordinate(s) outside [%g, %g] to the basis span", outside, lo, hi)
        return _spatial_basis(sites, self.m_s, self.domain)


def _spatial_basis(sites: Tensor, m_s: int, domain: Range) -> Tensor:
    n_knots = m_s - SPLINE_ORDER
    b1 = bspline_basis_1d(sites[:, 0], SPLINE_ORDER, n_knots, domain)
    b2 = bspline_basis_1d(sites[:, 1], SPLINE_ORDER, n_knots, domain)
    return (b1[:, :, None] * b2[:, None, :]).reshape(sites.shape[0], m_s * m_s)


def _regressors(z: Tensor, covariates: Tensor) -> Tensor:
    """``(n, 1 + p + q)`` rows ``[1, z, x(s_i)]`` for one simulation."""
    n = covariates.shape[0]
    return np.hstack([np.ones((n, 1)), np.broadcast_to(z, (n, z.shape[0])), covariates])


def fit_fosr(data: Dataset, m_s: int = 8, lam: float = 1e-6) -> FosrModel:
    """Ridge least-squares fit through the normal equations.

    The design row of pair ``(h, i)`` is ``kron([1, z_h, x_i], φ(s_i))``;
    the normal matrix is accumulated one simulation at a time.

    Raises:
        ConfigurationError: If ``lam < 0`` or ``m_s`` is below the spline order.
        NumericError: If the normal matrix is singular.
    """
    if lam < 0:
        raise ConfigurationError(f"ridge penalty must be non-negative, got {lam}")
    if m_s < SPLINE_ORDER:
        raise ConfigurationError(f"m_s must be at least {SPLINE_ORDER}, got {m_s}")

    phi = _spatial_basis(np.clip(data.sites, 0.0, 10.0), m_s, (0.0, 10.0))
    r_dim = 1 + data.p + data.q
    d = r_dim * m_s * m_s
    gram = np.zeros((d, d))
    rhs = np.zeros(d)
    for h in range(data.H):
        r = _regressors(data.inputs[h], data.fine_covariates)
        design = (r[:, :, None] * phi[:, None, :]).reshape(data.n, d)
        gram += design.T @ design
        rhs += design.T @ data.responses[h]
    gram = 0.5 * (gram + gram.T)
    gram[np.diag_indices(d)] += lam

    try:
        chol = cholesky(gram)
    except DecompositionError as e:
        raise NumericError(f"normal matrix is singular ({e}); use a positive ridge penalty") from e
    theta = cho_solve((chol, True), rhs)

    model = FosrModel(coefficients=theta.reshape(r_dim, m_s * m_s), m_s=m_s, p=data.p, q=data.q, lam=lam)
    residuals = data.responses - predict_fosr_surface(model, data.sites, data.fine_covariates, data.inputs)
    model.residual_sd = float(np.sqrt(np.mean(residuals**2)))
    logger.info("Fitted FOSR baseline: m_s=%d, lambda=%g, residual sd %.4f", m_s, lam, model.residual_sd)
    return model


def predict_fosr_surface(model: FosrModel, sites: Tensor, covariates: Tensor, inputs: Tensor) -> Tensor:
    """``(H, n)`` point predictions for every input row at every site."""
    phi = model.spatial_basis(sites)
    covariates = np.asarray(covariates, dtype=np.float64).reshape(phi.shape[0], model.q)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    weights = phi @ model.coefficients.T  # (n, 1 + p + q)
    intercept, z_part, x_part = np.split(weights, [1, 1 + model.p], axis=1)
    site_term = intercept[:, 0] + np.sum(x_part * covariates, axis=1)
    return site_term[None, :] + inputs @ z_part.T


def predict_fosr(
    model: FosrModel, s: Tensor, x: Tensor, z: Tensor, interval: bool = False
) -> float | tuple[float, float, float]:
    """Prediction at one point, optionally with a ``±1.96·residual_sd`` interval."""
    mean = float(predict_fosr_surface(model, np.asarray(s)[None, :], np.atleast_2d(x), z)[0, 0])
    if not interval:
        return mean
    half = INTERVAL_Z * model.residual_sd
    return mean, mean - half, mean + half


def fosr_predictions(model: FosrModel, query: Dataset) -> pd.DataFrame:
    """Prediction frame in the same layout as Monte Carlo dropout predictions."""
    mean = predict_fosr_surface(model, query.sites, query.fine_covariates, query.inputs).reshape(-1)
    half = INTERVAL_Z * model.residual_sd
    frame = pd.DataFrame(
        {
            "sim_id": np.repeat(query.sim_ids, query.n),
            "site_id": np.tile(query.site_ids, query.H),
            "mean": mean,
            "sd": np.full(mean.shape, model.residual_sd),
            "lower": mean - half,
            "upper": mean + half,
        }
    )
    return frame[PREDICTION_COLUMNS]

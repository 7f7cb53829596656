import logging

import numpy as np
import pytest

from deepsurrogate.errors import ConfigurationError, NumericError, ShapeError
from deepsurrogate.models.baseline import (
    INTERVAL_Z,
    FosrModel,
    fit_fosr,
    fosr_predictions,
    predict_fosr,
    predict_fosr_surface,
)
from deepsurrogate.models.dataset import Dataset
from deepsurrogate.models.inference import PREDICTION_COLUMNS


@pytest.fixture
def linear_dataset() -> Dataset:
    """Responses exactly linear in [1, z, x] with no spatial variation."""
    gen = np.random.default_rng(3)
    sites = gen.uniform(0.0, 10.0, (40, 2))
    covs = gen.standard_normal((40, 1))
    inputs = gen.standard_normal((6, 2))
    responses = 1.0 + inputs @ np.array([2.0, -1.0])[:, None] + 0.5 * covs[:, 0][None, :]
    return Dataset(sites, covs, inputs, responses)


class TestFit:
    def test_exact_linear_fit(self, linear_dataset):
        """Test a response in the model span is reproduced."""
        model = fit_fosr(linear_dataset, m_s=4, lam=1e-8)
        assert model.coefficients.shape == (4, 16)
        assert model.residual_sd < 1e-3
        z = np.array([0.3, -0.7])
        pred = predict_fosr(model, np.array([5.0, 5.0]), np.array([1.2]), z)
        assert pred == pytest.approx(1.0 + 0.6 + 0.7 + 0.6, abs=1e-3)

    def test_invalid_settings(self, linear_dataset):
        """Test negative penalties and too few basis functions."""
        with pytest.raises(ConfigurationError):
            fit_fosr(linear_dataset, lam=-1.0)
        with pytest.raises(ConfigurationError):
            fit_fosr(linear_dataset, m_s=3)

    def test_singular_without_penalty(self):
        """Test collinear regressors with lam=0 raise NumericError."""
        gen = np.random.default_rng(0)
        data = Dataset(gen.uniform(0, 10, (30, 2)), np.zeros((30, 0)), np.ones((1, 1)), gen.standard_normal((1, 30)))
        with pytest.raises(NumericError):
            fit_fosr(data, m_s=4, lam=0.0)

    def test_ridge_makes_singular_problem_solvable(self):
        """Test a positive penalty regularizes collinear regressors."""
        gen = np.random.default_rng(0)
        data = Dataset(gen.uniform(0, 10, (30, 2)), np.zeros((30, 0)), np.ones((1, 1)), gen.standard_normal((1, 30)))
        model = fit_fosr(data, m_s=4, lam=1e-3)
        assert np.all(np.isfinite(model.coefficients))


class TestPredict:
    def test_interval(self, linear_dataset):
        """Test the interval is mean ± 1.96 residual sd."""
        model = fit_fosr(linear_dataset, m_s=4, lam=1e-8)
        model.residual_sd = 0.5
        mean, lower, upper = predict_fosr(model, np.array([2.0, 3.0]), np.array([0.0]), np.zeros(2), interval=True)
        assert upper - mean == pytest.approx(INTERVAL_Z * 0.5)
        assert mean - lower == pytest.approx(INTERVAL_Z * 0.5)

    def test_out_of_domain_sites_warn(self, linear_dataset, caplog):
        """Test sites outside the basis span are clamped with a warning."""
        model = fit_fosr(linear_dataset, m_s=4, lam=1e-8)
        with caplog.at_level(logging.WARNING):
            outside = predict_fosr(model, np.array([12.0, 5.0]), np.array([0.0]), np.zeros(2))
        assert "Clamping" in caplog.text
        assert outside == pytest.approx(predict_fosr(model, np.array([10.0, 5.0]), np.array([0.0]), np.zeros(2)))

    def test_surface_shape(self, linear_dataset):
        """Test surface predictions are (H, n)."""
        model = fit_fosr(linear_dataset, m_s=5)
        grid = predict_fosr_surface(model, linear_dataset.sites, linear_dataset.fine_covariates, linear_dataset.inputs)
        assert grid.shape == (6, 40)

    def test_frame(self, linear_dataset):
        """Test the frame shares the dropout prediction layout."""
        model = fit_fosr(linear_dataset, m_s=4)
        frame = fosr_predictions(model, linear_dataset.select_sims([0, 5]))
        assert list(frame.columns) == PREDICTION_COLUMNS
        assert len(frame) == 80
        assert (frame["upper"] - frame["lower"]).round(12).nunique() == 1

    def test_coefficient_shape_checked(self):
        """Test a wrongly shaped coefficient matrix raises ShapeError."""
        with pytest.raises(ShapeError):
            FosrModel(coefficients=np.zeros((3, 16)), m_s=4, p=2, q=1)

import math

import numpy as np
import pytest

from deepsurrogate.errors import ConfigurationError, NumericError, ShapeError, UsageError
from deepsurrogate.models.nn import (
    ActivationKind,
    AdamState,
    DenseLayer,
    DropoutMask,
    activate,
    activation_derivative,
    adam_step,
    backward,
    clip_by_global_norm,
    forward,
    init_layers,
    layer_shapes,
    lr_at,
    sample_mask,
)
from deepsurrogate.models.tensor import Rng

RELU, LINEAR, SOFTPLUS = ActivationKind.RELU, ActivationKind.LINEAR, ActivationKind.SOFTPLUS


def _objective(layers, x, weights_out):
    out, _ = forward(layers, x)
    return float(np.sum(out * weights_out))


def _fd_check(layers, x, rel_tol=1e-4, eps=1e-6):
    """Compare analytic layer gradients with central differences."""
    out, cache = forward(layers, x)
    c = np.linspace(-1.0, 1.0, out.size).reshape(out.shape)
    grads, _ = backward(cache, c)
    for lyr, g in zip(layers, grads, strict=True):
        for param, analytic in ((lyr.weights, g.weights), (lyr.bias, g.bias)):
            numeric = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                orig = param[idx]
                param[idx] = orig + eps
                up = _objective(layers, x, c)
                param[idx] = orig - eps
                down = _objective(layers, x, c)
                param[idx] = orig
                numeric[idx] = (up - down) / (2 * eps)
            err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-6)
            assert err < rel_tol or np.linalg.norm(analytic - numeric) < 1e-8


class TestActivations:
    def test_values(self):
        """Test ReLU, identity and softplus values."""
        x = np.array([-2.0, 0.0, 3.0])
        assert np.array_equal(activate(RELU, x), [0.0, 0.0, 3.0])
        assert np.array_equal(activate(LINEAR, x), x)
        assert activate(SOFTPLUS, np.array([0.0]))[0] == pytest.approx(math.log(2.0))

    def test_softplus_is_stable(self):
        """Test softplus does not overflow for large inputs."""
        assert activate(SOFTPLUS, np.array([1000.0]))[0] == pytest.approx(1000.0)
        assert activate(SOFTPLUS, np.array([-1000.0]))[0] == pytest.approx(0.0)

    def test_derivatives(self):
        """Test the ReLU derivative at 0 is 0 and softplus' is the sigmoid."""
        assert activation_derivative(RELU, np.array([0.0]))[0] == 0.0
        assert activation_derivative(RELU, np.array([0.1]))[0] == 1.0
        assert activation_derivative(SOFTPLUS, np.array([0.0]))[0] == pytest.approx(0.5)

    def test_accepts_string_kind(self):
        """Test activations accept their string values."""
        assert np.array_equal(activate("relu", np.array([-1.0])), [0.0])


class TestDenseLayer:
    def test_bias_shape_checked(self):
        """Test mismatched bias raises ShapeError."""
        with pytest.raises(ShapeError):
            DenseLayer(np.ones((3, 2)), np.ones(2))

    def test_init_layers_shapes(self):
        """Test Glorot initialization shapes, bounds and zero biases."""
        layers = init_layers(4, [8, 2], [RELU, LINEAR], Rng(0))
        assert layer_shapes(layers) == [((8, 4), (8,)), ((2, 8), (2,))]
        assert np.all(np.abs(layers[0].weights) <= math.sqrt(6.0 / 12.0))
        assert all(np.all(lyr.bias == 0.0) for lyr in layers)

    def test_init_layers_length_mismatch(self):
        """Test one activation per width is required."""
        with pytest.raises(ConfigurationError):
            init_layers(2, [3, 3], [RELU], Rng(0))


class TestForwardBackward:
    def test_single_row_matches_batch(self):
        """Test a 1-d input gives the squeezed batch result."""
        layers = init_layers(3, [5, 2], [SOFTPLUS, LINEAR], Rng(1))
        x = np.array([[0.1, -0.3, 2.0], [1.0, 0.0, -1.0]])
        batch, _ = forward(layers, x)
        single, _ = forward(layers, x[1])
        assert single.shape == (2,)
        assert np.allclose(single, batch[1])

    def test_wrong_input_width(self):
        """Test input width mismatch raises ShapeError."""
        layers = init_layers(3, [2], [LINEAR], Rng(0))
        with pytest.raises(ShapeError):
            forward(layers, np.ones(4))

    def test_backward_requires_cache(self):
        """Test backward without a forward cache raises UsageError."""
        with pytest.raises(UsageError):
            backward(None, np.ones(1))

    def test_relu_layer_gradient_by_hand(self):
        """Test a one-unit ReLU layer on both sides of the kink."""
        layers = [DenseLayer(np.array([[1.0, -1.0]]), np.array([0.0]), RELU)]
        _, cache = forward(layers, np.array([2.0, 1.0]))
        grads, d_x = backward(cache, np.array([3.0]))
        assert np.array_equal(grads[0].weights, [[6.0, 3.0]])
        assert np.array_equal(grads[0].bias, [3.0])
        assert np.array_equal(d_x, [3.0, -3.0])

        _, cache = forward(layers, np.array([1.0, 2.0]))
        grads, _ = backward(cache, np.array([3.0]))
        assert np.all(grads[0].weights == 0.0)

    @pytest.mark.parametrize("acts", [[SOFTPLUS, LINEAR], [SOFTPLUS, SOFTPLUS, LINEAR], [LINEAR, SOFTPLUS]])
    def test_finite_differences(self, acts):
        """Test analytic gradients against central differences on smooth stacks."""
        widths = [6, 4, 3][: len(acts)]
        layers = init_layers(3, widths, acts, Rng(len(acts)))
        for lyr in layers:
            lyr.bias[:] = Rng(9).normal(lyr.bias.shape) * 0.1
        x = Rng(2).normal((5, 3))
        _fd_check(layers, x)

    def test_masked_entries_get_zero_gradient(self):
        """Test gradients vanish exactly where the mask is zero."""
        layers = init_layers(3, [6, 2], [SOFTPLUS, LINEAR], Rng(3))
        mask = sample_mask([0.5, 0.5], layer_shapes(layers), Rng(4))
        out, cache = forward(layers, Rng(5).normal((4, 3)), mask)
        grads, _ = backward(cache, np.ones_like(out))
        for g, mw, mb in zip(grads, mask.weights, mask.biases, strict=True):
            assert np.all(g.weights[mw == 0.0] == 0.0)
            assert np.all(g.bias[mb == 0.0] == 0.0)


class TestDropoutMask:
    def test_zero_rate_keeps_everything(self):
        """Test rate 0 gives the all-ones mask."""
        layers = init_layers(2, [3, 1], [RELU, LINEAR], Rng(0))
        mask = sample_mask([0.0, 0.0], layer_shapes(layers), Rng(1))
        full = DropoutMask.full(layers)
        assert all(np.array_equal(a, b) for a, b in zip(mask.weights, full.weights, strict=True))

    def test_keep_frequency(self):
        """Test about 90% of 10⁵ weight entries survive rate 0.1."""
        mask = sample_mask([0.1], [((100, 1000), (100,))], Rng(6))
        assert mask.weights[0].size == 100_000
        assert abs(mask.weights[0].mean() - 0.9) < 0.01

    def test_invalid_rate(self):
        """Test rates of 1 or more are rejected."""
        layers = init_layers(2, [3], [RELU], Rng(0))
        with pytest.raises(ConfigurationError):
            sample_mask([1.0], layer_shapes(layers), Rng(0))

    def test_entries_must_be_binary(self):
        """Test non-binary masks raise UsageError."""
        with pytest.raises(UsageError):
            DropoutMask(weights=[np.full((1, 1), 0.5)], biases=[np.ones(1)])

    def test_apply_zeroes_entries_without_rescaling(self):
        """Test kept entries are unchanged and dropped entries are zero."""
        layers = init_layers(2, [4], [LINEAR], Rng(0))
        mask = sample_mask([0.5], layer_shapes(layers), Rng(2))
        (masked,) = mask.apply(layers)
        assert np.array_equal(masked.weights, layers[0].weights * mask.weights[0])

    def test_apply_checks_shapes(self):
        """Test a mask for another network is rejected."""
        mask = DropoutMask.full(init_layers(2, [4], [LINEAR], Rng(0)))
        with pytest.raises(ShapeError):
            mask.apply(init_layers(2, [5], [LINEAR], Rng(0)))


class TestAdam:
    def test_learning_rate_schedule(self):
        """Test continuous and staircase exponential decay."""
        state = AdamState.fresh({}, base_lr=0.01, decay_steps=10_000, decay_rate=0.97)
        assert lr_at(state, 0) == pytest.approx(0.01)
        assert lr_at(state, 10_000) == pytest.approx(0.0097)
        assert lr_at(state, 5_000) == pytest.approx(0.01 * 0.97**0.5)
        stair = AdamState.fresh({}, base_lr=0.01, decay_steps=10_000, decay_rate=0.97, staircase=True)
        assert lr_at(stair, 5_000) == pytest.approx(0.01)

    def test_reference_trajectory(self):
        """Test a constant gradient moves a scalar by about lr per step."""
        params = {"w": np.array([1.0])}
        state = AdamState.fresh(params, base_lr=0.1, decay_rate=1.0)
        for _ in range(3):
            params, state = adam_step(params, {"w": np.array([0.5])}, state)
        assert state.step == 3
        assert params["w"][0] == pytest.approx(0.7, abs=1e-6)

    def test_first_step_values(self):
        """Test first-step moments against hand-computed values."""
        params = {"w": np.array([1.0])}
        state = AdamState.fresh(params, base_lr=0.1, decay_rate=1.0)
        new, state = adam_step(params, {"w": np.array([0.5])}, state)
        assert state.m["w"][0] == pytest.approx(0.05)
        assert state.v["w"][0] == pytest.approx(0.00025)
        assert params["w"][0] == 1.0
        assert new["w"][0] == pytest.approx(0.9, abs=1e-7)

    def test_quadratic_matches_scalar_loop(self):
        """Test 200 decayed steps on a quadratic against a scalar Adam loop."""
        target = np.array([3.0, -2.0])
        scale = np.array([1.0, 10.0])
        params = {"w": np.zeros(2)}
        state = AdamState.fresh(params, base_lr=0.05, decay_steps=50, decay_rate=0.9)
        for _ in range(200):
            grad = 2.0 * scale * (params["w"] - target)
            params, state = adam_step(params, {"w": grad}, state)

        expected = []
        for j in range(2):
            w, m, v = 0.0, 0.0, 0.0
            for t in range(1, 201):
                g = 2.0 * scale[j] * (w - target[j])
                m = 0.9 * m + 0.1 * g
                v = 0.999 * v + 0.001 * g * g
                lr = 0.05 * 0.9 ** ((t - 1) / 50)
                w -= lr * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
            expected.append(w)
        np.testing.assert_allclose(params["w"], expected, rtol=0, atol=1e-10)

    def test_non_finite_gradient(self):
        """Test NaN gradients raise NumericError naming the tensor."""
        params = {"w": np.zeros(2)}
        with pytest.raises(NumericError, match="'w'"):
            adam_step(params, {"w": np.array([np.nan, 0.0])}, AdamState.fresh(params))

    def test_name_mismatch(self):
        """Test gradients must name the same tensors as the parameters."""
        params = {"w": np.zeros(2)}
        with pytest.raises(ShapeError):
            adam_step(params, {"v": np.zeros(2)}, AdamState.fresh(params))

    def test_invalid_schedule(self):
        """Test invalid schedule settings are rejected."""
        with pytest.raises(ConfigurationError):
            AdamState.fresh({}, decay_rate=1.5)

    def test_clip_by_global_norm(self):
        """Test joint rescaling to the target norm."""
        clipped, norm = clip_by_global_norm({"a": np.array([3.0]), "b": np.array([4.0])}, 1.0)
        assert norm == pytest.approx(5.0)
        assert clipped["a"][0] == pytest.approx(0.6)
        assert clipped["b"][0] == pytest.approx(0.8)

import math

import numpy as np
import pytest
import torch

from app.src.core.exceptions.model_exceptions import NonFiniteError, ShapeMismatchError
from app.src.domain.model import (
    LabelDistribution,
    OptimizerConfig,
    TrainState,
    build_reference_net,
    cross_entropy,
    forward,
    grad_input,
    grad_params,
    model_from_architecture,
    one_hot_matrix,
    parameter_checksum,
    predict,
    sgd_step,
)
from app.tests.framework.builders import DatasetBuilder, linear_model, overfit_reference_net
from app.tests.tests_config import EXPECTED_PARAMETER_COUNTS, OVERFIT, TOLERANCES


def _zero_head(model):
    with torch.no_grad():
        model.network.fc2.weight.zero_()
        model.network.fc2.bias.zero_()
    return model


class TestReferenceNet:
    """Test the DeskNet architecture and its initialisation."""

    @pytest.mark.parametrize("num_classes", sorted(EXPECTED_PARAMETER_COUNTS))
    def test_parameter_count(self, num_classes):
        model = build_reference_net(num_classes)

        assert model.parameter_count() == EXPECTED_PARAMETER_COUNTS[num_classes]

    def test_same_seed_same_parameters(self):
        a = build_reference_net(4, image_size=8, seed=3)
        b = build_reference_net(4, image_size=8, seed=3)
        c = build_reference_net(4, image_size=8, seed=4)

        assert parameter_checksum(a) == parameter_checksum(b)
        assert parameter_checksum(a) != parameter_checksum(c)

    def test_biases_start_at_zero(self, desk_net):
        for name, param in desk_net.named_parameters().items():
            if name.endswith("bias"):
                assert torch.count_nonzero(param) == 0

    def test_zero_head_gives_zero_logits(self, desk_net):
        _zero_head(desk_net)

        logits = forward(desk_net, np.zeros((2, 3, 8, 8), dtype=np.float32))

        assert torch.count_nonzero(logits) == 0

    def test_batch_shape(self, desk_net):
        logits = forward(desk_net, np.random.default_rng(0).random((5, 3, 8, 8)))

        assert tuple(logits.shape) == (5, 4)

    def test_untrained_accuracy_is_chance(self):
        """Test chance-level accuracy on labels independent of the images."""
        model = build_reference_net(10, image_size=8, seed=1)
        rng = np.random.default_rng(2)
        images = rng.random((2000, 3, 8, 8)).astype(np.float32)
        labels = np.tile(np.arange(10), 200)

        accuracy = (predict(model, images) == labels).mean()

        assert abs(accuracy - 0.1) <= 0.05

    def test_effective_weights_are_he_normal(self):
        """Test that the weights the layers apply have std sqrt(2 / fan_in)."""
        model = build_reference_net(10, seed=0)
        layer = model.network.fc1

        effective = layer.weight.detach() * layer.gain

        assert float(effective.std()) == pytest.approx((2.0 / layer.weight.shape[1]) ** 0.5, rel=0.02)

    def test_overfits_small_set_at_default_learning_rate(self):
        """Test full-batch SGD at lr 0.1 drives a tiny training set to near-zero loss."""
        samples = OVERFIT["samples"]
        dataset, _ = DatasetBuilder.synthetic(5, samples // 5, image_size=16, seed=0)

        _, losses = overfit_reference_net(dataset, steps=OVERFIT["steps"])

        assert OptimizerConfig().lr == 0.1
        assert len(dataset) == samples
        assert all(math.isfinite(loss) for loss in losses)
        assert losses[-1] < OVERFIT["max_loss"]

    def test_rebuilds_from_architecture(self, desk_net):
        rebuilt = model_from_architecture(desk_net.architecture)

        assert parameter_checksum(rebuilt) == parameter_checksum(desk_net)

    def test_needs_two_classes(self):
        with pytest.raises(ShapeMismatchError):
            build_reference_net(1)

    def test_wrong_input_shape(self, desk_net):
        with pytest.raises(ShapeMismatchError) as exc_info:
            forward(desk_net, np.zeros((1, 3, 16, 16), dtype=np.float32))

        assert exc_info.value.actual == (1, 3, 16, 16)

    def test_non_finite_input(self, desk_net):
        images = np.zeros((1, 3, 8, 8), dtype=np.float32)
        images[0, 0, 0, 0] = np.nan

        with pytest.raises(NonFiniteError):
            forward(desk_net, images)


class TestPredict:
    def test_constant_logits_pick_class_zero(self, desk_net):
        """Test the lowest-index tie-break."""
        _zero_head(desk_net)

        preds = predict(desk_net, np.random.default_rng(0).random((6, 3, 8, 8)))

        assert preds.tolist() == [0] * 6

    def test_empty_input(self, desk_net):
        assert predict(desk_net, np.zeros((0, 3, 8, 8), dtype=np.float32)).size == 0


class TestCrossEntropy:
    """Test soft-label cross-entropy."""

    def test_uniform_logits(self):
        logits = torch.zeros(3, 7, dtype=torch.float64)

        loss = cross_entropy(logits, one_hot_matrix([0, 3, 6], 7))

        assert float(loss) == pytest.approx(math.log(7), abs=1e-12)

    def test_linear_in_label(self):
        """Test that a 0.5/0.5 label costs the mean of the two one-hot losses."""
        logits = torch.tensor([[0.3, -1.2, 2.0, 0.7]], dtype=torch.float64)
        mixed = LabelDistribution(np.array([0.0, 0.5, 0.0, 0.5])).weights[None]

        loss = cross_entropy(logits, mixed)
        expected = 0.5 * (
            cross_entropy(logits, one_hot_matrix([1], 4))
            + cross_entropy(logits, one_hot_matrix([3], 4))
        )

        assert abs(float(loss) - float(expected)) <= TOLERANCES["label_linearity"]

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(4, 6))
        q = rng.dirichlet(np.ones(6), size=4)

        loss = cross_entropy(torch.tensor(logits), q, reduction="none")

        for row in range(4):
            top = max(logits[row])
            log_z = top + math.log(math.fsum(math.exp(v - top) for v in logits[row]))
            oracle = -math.fsum(q[row, i] * (logits[row, i] - log_z) for i in range(6))
            assert float(loss[row]) == pytest.approx(oracle, abs=1e-10)

    def test_softmax_shift_invariance(self):
        """Test that adding a constant to every logit of a row leaves the loss unchanged."""
        rng = np.random.default_rng(9)
        logits = torch.tensor(rng.normal(size=(5, 8)))
        q = rng.dirichlet(np.ones(8), size=5)
        shift = torch.tensor(rng.uniform(-50.0, 50.0, size=(5, 1)))

        base = cross_entropy(logits, q, reduction="none")
        shifted = cross_entropy(logits + shift, q, reduction="none")

        assert torch.max(torch.abs(base - shifted)).item() <= TOLERANCES["label_linearity"]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            cross_entropy(torch.zeros(2, 3), np.zeros((2, 4)))

    def test_invalid_label_distribution(self):
        with pytest.raises(ValueError):
            LabelDistribution(np.array([0.7, 0.7]))


class TestGradients:
    """Test input and parameter gradients against finite differences."""

    def test_input_gradient_matches_finite_differences(self):
        model = build_reference_net(3, image_size=4, seed=2).to_double()
        rng = np.random.default_rng(0)
        x = rng.random((1, 3, 4, 4))
        q = one_hot_matrix([1], 3)
        h = TOLERANCES["finite_difference_step"]

        _, grad = grad_input(model, x, q)

        for flat in rng.choice(x.size, size=8, replace=False):
            bump = np.zeros(x.size)
            bump[flat] = h
            bump = bump.reshape(x.shape)
            up = cross_entropy(forward(model, x + bump), q)
            down = cross_entropy(forward(model, x - bump), q)
            numeric = float(up - down) / (2 * h)
            assert grad.reshape(-1)[flat].item() == pytest.approx(
                numeric,
                rel=TOLERANCES["finite_difference_rtol"],
                abs=TOLERANCES["finite_difference_atol"],
            )

    def test_parameter_gradient_matches_finite_differences(self):
        model = linear_model(num_classes=3, image_size=4, seed=1).to_double()
        x = np.random.default_rng(1).random((2, 3, 4, 4))
        q = one_hot_matrix([0, 2], 3)
        h = TOLERANCES["finite_difference_step"]

        outcome = grad_params(model, x, q)
        bias = model.network.fc.bias

        for i in range(3):
            with torch.no_grad():
                bias[i] += h
                up = float(cross_entropy(forward(model, x), q))
                bias[i] -= 2 * h
                down = float(cross_entropy(forward(model, x), q))
                bias[i] += h
            assert outcome.grads["fc.bias"][i].item() == pytest.approx(
                (up - down) / (2 * h), rel=TOLERANCES["finite_difference_rtol"]
            )

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_desk_net_input_gradient_matches_finite_differences(self, seed):
        """Test grad_input on DeskNet, batch of four, eight classes."""
        model = build_reference_net(8, image_size=8, seed=seed).to_double()
        rng = np.random.default_rng(seed)
        x = rng.random((4, 3, 8, 8))
        q = one_hot_matrix(rng.integers(8, size=4), 8)
        h = TOLERANCES["finite_difference_step"]

        _, grad = grad_input(model, x, q)

        for flat in rng.choice(x.size, size=12, replace=False):
            bump = np.zeros(x.size)
            bump[flat] = h
            bump = bump.reshape(x.shape)
            up = float(cross_entropy(forward(model, x + bump), q))
            down = float(cross_entropy(forward(model, x - bump), q))
            assert grad.reshape(-1)[flat].item() == pytest.approx(
                (up - down) / (2 * h),
                rel=TOLERANCES["finite_difference_rtol"],
                abs=TOLERANCES["finite_difference_atol"],
            )

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_desk_net_parameter_gradient_matches_finite_differences(self, seed):
        """Test grad_params on every DeskNet parameter tensor at a few coordinates each."""
        model = build_reference_net(8, image_size=8, seed=seed).to_double()
        rng = np.random.default_rng(100 + seed)
        x = rng.random((4, 3, 8, 8))
        q = one_hot_matrix(rng.integers(8, size=4), 8)
        h = TOLERANCES["finite_difference_step"]

        outcome = grad_params(model, x, q)

        for name, param in model.named_parameters().items():
            flat_param = param.view(-1)
            for index in rng.choice(flat_param.numel(), size=3, replace=False):
                with torch.no_grad():
                    flat_param[index] += h
                    up = float(cross_entropy(forward(model, x), q))
                    flat_param[index] -= 2 * h
                    down = float(cross_entropy(forward(model, x), q))
                    flat_param[index] += h
                assert outcome.grads[name].reshape(-1)[index].item() == pytest.approx(
                    (up - down) / (2 * h),
                    rel=TOLERANCES["finite_difference_rtol"],
                    abs=TOLERANCES["finite_difference_atol"],
                ), name

    def test_stationary_point_has_zero_input_gradient(self):
        """Test a zero linear model against the uniform label, its loss minimum."""
        model = linear_model(num_classes=4, image_size=4).to_double()
        with torch.no_grad():
            for param in model.network.parameters():
                param.zero_()
        uniform = np.full((2, 4), 0.25)

        _, grad = grad_input(model, np.random.default_rng(0).random((2, 3, 4, 4)), uniform)

        assert torch.count_nonzero(grad) == 0

    def test_parameters_are_not_modified(self, desk_net):
        before = parameter_checksum(desk_net)

        grad_params(desk_net, np.zeros((2, 3, 8, 8)), one_hot_matrix([0, 1], 4))

        assert parameter_checksum(desk_net) == before


class TestSgdStep:
    """Test momentum SGD with weight decay."""

    def _state(self, **optimizer):
        return TrainState(
            model=linear_model(num_classes=2, image_size=4).to_double(),
            optimizer_config=OptimizerConfig(**optimizer),
        )

    def test_zero_gradient_without_decay(self):
        state = self._state(lr=0.1, momentum=0.9, weight_decay=0.0)
        before = parameter_checksum(state.model)
        zeros = {name: torch.zeros_like(p) for name, p in state.model.named_parameters().items()}

        sgd_step(state, zeros)

        assert parameter_checksum(state.model) == before

    def test_plain_gradient_descent(self):
        state = self._state(lr=0.1, momentum=0.0, weight_decay=0.0)
        bias = state.model.network.fc.bias
        start = bias.detach().clone()
        grad = torch.tensor([1.0, -2.0], dtype=torch.float64)

        sgd_step(state, {"fc.bias": grad})

        torch.testing.assert_close(bias.detach(), start - 0.1 * grad)

    def test_weight_decay_adds_to_gradient(self):
        state = self._state(lr=0.1, momentum=0.0, weight_decay=0.5)
        bias = state.model.network.fc.bias
        start = bias.detach().clone()

        sgd_step(state, {"fc.bias": torch.zeros(2, dtype=torch.float64)})

        torch.testing.assert_close(bias.detach(), start - 0.1 * 0.5 * start)

    def test_quadratic_bowl_converges(self):
        """Test 100 steps on 0.5 * |theta - c|^2 reach the minimum."""
        state = self._state(lr=0.5, momentum=0.0, weight_decay=0.0)
        bias = state.model.network.fc.bias
        centre = torch.tensor([3.0, -1.5], dtype=torch.float64)

        for _ in range(100):
            sgd_step(state, {"fc.bias": bias.detach() - centre})

        assert torch.max(torch.abs(bias.detach() - centre)) < 1e-6

    def test_momentum_accumulates(self):
        state = self._state(lr=1.0, momentum=0.5, weight_decay=0.0)
        bias = state.model.network.fc.bias
        start = bias.detach().clone()
        grad = torch.ones(2, dtype=torch.float64)

        sgd_step(state, {"fc.bias": grad})
        sgd_step(state, {"fc.bias": grad})

        # buf: 1, then 0.5 * 1 + 1
        torch.testing.assert_close(bias.detach(), start - 1.0 - 1.5)
        assert "fc.bias" in state.momentum_buffers()

    def test_non_finite_gradient(self):
        state = self._state()

        with pytest.raises(NonFiniteError):
            sgd_step(state, {"fc.bias": torch.tensor([np.inf, 0.0], dtype=torch.float64)})

"""Tests for models module -- architectures, forward pass and training."""

import math

import numpy as np
import pytest

from transfergrad import autodiff as ad
from transfergrad import datasets as ds
from transfergrad import models as md
from transfergrad.errors import ConfigError, NumericalError, ShapeError


class TestArchitectureSpec:
    def test_kind_coerced_from_string(self):
        spec = md.ArchitectureSpec("cnn", [4], [1, 8, 8], 3)
        assert spec.kind is md.ModelKind.CNN
        assert spec.hidden == (4,)
        assert spec.input_shape == (1, 8, 8)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="valid: mlp, cnn"):
            md.ArchitectureSpec("rnn", (4,), (1, 8, 8), 3)

    def test_needs_two_classes(self):
        with pytest.raises(ConfigError):
            md.ArchitectureSpec("mlp", (4,), (1, 8, 8), 1)

    def test_even_kernel(self):
        with pytest.raises(ConfigError, match="odd"):
            md.ArchitectureSpec("cnn", (4,), (1, 8, 8), 3, kernel_size=4)

    def test_pooling_divisibility(self):
        with pytest.raises(ConfigError, match="divisible by 4"):
            md.ArchitectureSpec("cnn", (4, 4), (1, 6, 6), 3)

    def test_mlp_param_shapes(self):
        spec = md.ArchitectureSpec("mlp", (16, 8), (1, 4, 4), 3)
        assert spec.param_shapes() == {
            "dense0.weight": (16, 16),
            "dense0.bias": (16,),
            "dense1.weight": (16, 8),
            "dense1.bias": (8,),
            "logits.weight": (8, 3),
            "logits.bias": (3,),
        }

    def test_cnn_param_shapes(self):
        spec = md.ArchitectureSpec("cnn", (4, 6), (2, 8, 8), 5, kernel_size=5, head_width=7)
        shapes = spec.param_shapes()
        assert shapes["conv0.weight"] == (4, 2, 5, 5)
        assert shapes["conv1.weight"] == (6, 4, 5, 5)
        assert shapes["dense0.weight"] == (6 * 2 * 2, 7)
        assert shapes["logits.weight"] == (7, 5)

    def test_dict_roundtrip(self):
        spec = md.ArchitectureSpec("cnn", (4,), (1, 8, 8), 3, kernel_size=5, head_width=2)
        assert md.ArchitectureSpec.from_dict(spec.to_dict()) == spec

    def test_default_roster_is_valid(self):
        roster = md.default_roster((1, 16, 16), 8)
        assert list(roster) == ["mlp_a", "mlp_b", "cnn_a", "cnn_b"]
        assert {s.kind for s in roster.values()} == {md.ModelKind.MLP, md.ModelKind.CNN}


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"epochs": -1}, {"batch_size": 0}, {"learning_rate": 0.0}, {"momentum": 1.0}],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ConfigError):
            md.TrainConfig(**kwargs)

    def test_zero_epochs_allowed(self):
        assert md.TrainConfig(epochs=0).epochs == 0


class TestBuild:
    def test_same_seed_same_params(self):
        spec = md.ArchitectureSpec("mlp", (8,), (1, 4, 4), 3)
        assert md.build(spec, 1).param_hash() == md.build(spec, 1).param_hash()
        assert md.build(spec, 1).param_hash() != md.build(spec, 2).param_hash()

    def test_init_ranges(self):
        spec = md.ArchitectureSpec("cnn", (4,), (1, 8, 8), 3)
        model = md.build(spec, 0)
        assert np.all(model.params["conv0.bias"] == 0)
        limit = math.sqrt(3.0 / 9)
        assert np.abs(model.params["conv0.weight"]).max() <= limit
        assert all(p.dtype == np.float32 for p in model.params.values())

    @pytest.mark.parametrize(
        "spec, name, fan_in",
        [
            (md.ArchitectureSpec("mlp", (128,), (1, 16, 16), 10), "dense0.weight", 256),
            (md.ArchitectureSpec("cnn", (64, 32), (1, 16, 16), 10), "conv1.weight", 576),
        ],
        ids=["dense", "conv"],
    )
    def test_init_variance_follows_fan_in(self, spec, name, fan_in):
        weights = md.build(spec, 3).params[name]
        assert weights.size >= 10_000
        assert float(weights.var()) == pytest.approx(1.0 / fan_in, rel=0.2)

    def test_params_read_only(self):
        model = md.build(md.ArchitectureSpec("mlp", (4,), (1, 2, 2), 2), 0)
        with pytest.raises(ValueError):
            model.params["logits.bias"][0] = 1.0


class TestForward:
    def test_logits_shapes(self, tiny_models, tiny_splits):
        model = tiny_models["cnn"]
        batch = tiny_splits.test.images[:5]
        assert md.predict_logits(model, batch).shape == (5, 4)
        assert md.predict_logits(model, batch[0]).shape == (4,)
        assert md.predict(model, batch).shape == (5,)

    def test_single_image_matches_batch(self, tiny_models, tiny_splits):
        model = tiny_models["mlp"]
        batch = tiny_splits.test.images[:3]
        np.testing.assert_allclose(
            md.predict_logits(model, batch[1]), md.predict_logits(model, batch)[1], rtol=1e-5
        )

    def test_wrong_input_shape(self, tiny_models):
        with pytest.raises(ShapeError):
            md.predict_logits(tiny_models["mlp"], np.zeros((2, 1, 5, 5), dtype=np.float32))


class TestInputGradient:
    @pytest.mark.parametrize("name", ["mlp", "cnn"])
    def test_matches_finite_differences(self, tiny_models, tiny_splits, name):
        model = tiny_models[name]
        x = tiny_splits.attack.images[0].astype(np.float64)
        y = int(tiny_splits.attack.labels[0])
        loss, grad = md.loss_and_input_grad(model, x, y)
        assert grad.shape == x.shape
        assert grad.dtype == np.float64
        numeric = ad.finite_diff_gradient(
            lambda a: md.loss_and_input_grad(model, a, y)[0], x, h=1e-6
        )
        assert ad.relative_error(grad, numeric) <= 1e-4
        assert loss > 0

    def test_gradient_and_prediction_leave_params_untouched(self, tiny_models, tiny_splits):
        model = tiny_models["cnn"]
        before = model.param_hash()
        x = tiny_splits.attack.images[0]
        first = md.loss_and_input_grad(model, x, 1)
        md.predict(model, tiny_splits.attack.images)
        second = md.loss_and_input_grad(model, x, 1)
        assert model.param_hash() == before
        assert first[0] == second[0]
        np.testing.assert_array_equal(first[1], second[1])

    def test_float32_input_gives_float32_gradient(self, tiny_models, tiny_splits):
        x = tiny_splits.attack.images[0]
        _, grad = md.loss_and_input_grad(tiny_models["mlp"], x, 0)
        assert grad.dtype == np.float32

    def test_bad_label(self, tiny_models, tiny_splits):
        with pytest.raises(ValueError):
            md.loss_and_input_grad(tiny_models["mlp"], tiny_splits.attack.images[0], 9)


class TestTrain:
    def test_tiny_models_learn(self, tiny_models, tiny_splits):
        for model in tiny_models.values():
            assert md.accuracy(model, tiny_splits.test.images, tiny_splits.test.labels) >= 0.5

    def test_separable_blobs(self):
        rng = np.random.default_rng(0)
        labels = np.repeat([0, 1], 300)
        centres = np.where(labels == 0, 0.25, 0.75)[:, None, None, None]
        noise = rng.normal(0.0, 0.05, size=(600, 1, 4, 4))
        images = np.clip(centres + noise, 0.0, 1.0).astype(np.float32)
        order = rng.permutation(600)
        data = ds.Dataset(images=images[order], labels=labels[order], num_classes=2)
        train, test = data.subset(np.arange(400)), data.subset(np.arange(400, 600))
        model = md.build(md.ArchitectureSpec("mlp", (16,), (1, 4, 4), 2), 0)
        cfg = md.TrainConfig(epochs=5, batch_size=16, seed=0)
        result = md.train(model, train, cfg, test)
        assert result.history[-1].test_accuracy >= 0.99

    @pytest.mark.slow
    def test_small_cnn_on_ten_shape_classes(self):
        data = ds.gen_synthetic(10, 120, 16, seed=2, contrast=1.0)
        splits = ds.split_dataset(data, 2, test_fraction=0.25, attack_size=10)
        spec = md.ArchitectureSpec("cnn", (8,), splits.image_shape, 10, head_width=32)
        cfg = md.TrainConfig(epochs=10, batch_size=32, seed=2)
        model = md.train(md.build(spec, 2), splits.train, cfg).model
        assert md.accuracy(model, splits.test.images, splits.test.labels) >= 0.90

    def test_history_and_metadata(self, tiny_splits, tiny_specs):
        model = md.build(tiny_specs["mlp"], 5)
        cfg = md.TrainConfig(epochs=3, batch_size=16, seed=5)
        result = md.train(model, tiny_splits.train, cfg, tiny_splits.test)
        assert [m.epoch for m in result.history] == [0, 1, 2]
        assert result.history[-1].loss < result.history[0].loss
        assert result.history[-1].test_accuracy is not None
        assert result.model.metadata["epochs"] == 3
        assert result.model.metadata["train_seed"] == 5

    def test_zero_epochs_keeps_params(self, tiny_splits, tiny_specs):
        model = md.build(tiny_specs["cnn"], 1)
        result = md.train(model, tiny_splits.train, md.TrainConfig(epochs=0))
        assert result.history == []
        assert result.model.param_hash() == model.param_hash()

    def test_deterministic(self, tiny_splits, tiny_specs):
        cfg = md.TrainConfig(epochs=2, batch_size=16, seed=7)
        a = md.train(md.build(tiny_specs["mlp"], 7), tiny_splits.train, cfg).model
        b = md.train(md.build(tiny_specs["mlp"], 7), tiny_splits.train, cfg).model
        assert a.param_hash() == b.param_hash()

    def test_divergence_reports_context(self, tiny_splits, tiny_specs):
        cfg = md.TrainConfig(epochs=2, batch_size=16, learning_rate=1e30, seed=0)
        with pytest.raises(NumericalError, match="learning_rate"):
            md.train(md.build(tiny_specs["mlp"], 0), tiny_splits.train, cfg)

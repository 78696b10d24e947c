"""Tests for the dense autoencoder."""

import warnings

import numpy as np
import pytest
import torch

from lcd_icd.autoencoder import (
    FEATURE_SIDE,
    HIDDEN_DIMS,
    MODEL_MAGIC,
    check_gradients,
    init_model,
    layer_dims_for,
    load_model,
    reconstruction_error_map,
    reconstruction_mse,
    save_model,
    torch_gradcheck,
    train_ae,
    upscale_nearest,
)
from lcd_icd.errors import DataError, DimensionMismatchError, DivergedTrainingError

from .helpers import checkerboards, smooth_gradients

SMALL_DIMS = (4, 2, 1, 2, 4)


def test_default_layer_dims():
    dims = layer_dims_for(FEATURE_SIDE)
    assert dims == (1024, *HIDDEN_DIMS, 1024)
    model = init_model(FEATURE_SIDE, 0)
    assert model.feature_dim == 16
    assert model.network.code_layer == 4


def test_code_layer_is_hidden_even_for_tiny_inputs():
    """With a 4x4 input the 16-pixel input layer must not be taken as the code."""
    model = init_model(4, 0)
    assert model.network.code_layer == 4
    assert model.encode(np.zeros(16)).shape == (16,)


def test_init_is_seeded():
    a, b, c = init_model(4, 3), init_model(4, 3), init_model(4, 4)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert not np.array_equal(a.weights[0], c.weights[0])
    assert all(not bias.any() for bias in a.biases)


def test_init_rejects_mismatched_dims():
    with pytest.raises(DataError):
        init_model(3, 0, SMALL_DIMS)


def test_zero_weights_encode_to_one_half():
    model = init_model(2, 0, SMALL_DIMS)
    with torch.no_grad():
        for layer in model.network.layers:
            layer.weight.zero_()
    assert np.array_equal(model.encode([0.3, 0.1, 0.9, 0.0]), [0.5])


def test_encode_checks_input_length():
    model = init_model(2, 0, SMALL_DIMS)
    with pytest.raises(DimensionMismatchError):
        model.encode(np.zeros(5))


def test_gradients_match_finite_differences():
    """Backprop agrees with central differences on a 4-2-1-2-4 net for 100 seeds."""
    for seed in range(100):
        model = init_model(2, seed, SMALL_DIMS)
        images = np.random.default_rng(seed).random((3, 4))
        assert check_gradients(model, images) <= 1e-4, f"seed {seed}"


class TestTrainAe:
    """Tests for train_ae."""

    def test_learns_constant_images(self):
        images = np.full((20, 64), 0.5)
        before = reconstruction_mse(init_model(8, 1), images)
        model = train_ae(images, epochs=300, learning_rate=0.1, rng_seed=1, batch_size=4)
        after = reconstruction_mse(model, images)
        assert after < before
        assert after < 1e-3

    def test_deterministic(self):
        images = np.random.default_rng(0).random((6, 4))
        a = train_ae(images, epochs=5, rng_seed=2, layer_dims=SMALL_DIMS, batch_size=2)
        b = train_ae(images, epochs=5, rng_seed=2, layer_dims=SMALL_DIMS, batch_size=2)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_infers_input_side(self):
        model = train_ae(np.zeros((2, 16)), epochs=1)
        assert model.input_side == 4

    def test_empty_training_set(self):
        with pytest.raises(DataError):
            train_ae([], epochs=1)

    def test_divergence_reports_epoch(self):
        with pytest.raises(DivergedTrainingError) as excinfo:
            train_ae(np.full((4, 4), np.inf), epochs=3, layer_dims=SMALL_DIMS)
        assert excinfo.value.epoch == 1
        assert excinfo.value.exit_code == 3


def test_upscale_nearest():
    raster = np.array([[1, 2], [3, 4]])
    assert np.array_equal(
        upscale_nearest(raster, 4, 3),
        [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4]],
    )


def test_reconstruction_error_map_shape():
    model = init_model(4, 0)
    error = reconstruction_error_map(model, np.random.default_rng(0).random(16), 10, 7)
    assert error.shape == (7, 10)
    assert (error >= 0).all()


class TestModelFile:
    """Tests for save_model / load_model."""

    def test_round_trip(self, tmp_path):
        model = init_model(2, 42, SMALL_DIMS)
        path = tmp_path / "model.bin"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.layer_dims == SMALL_DIMS
        assert loaded.rng_seed == 42
        x = [0.1, 0.2, 0.3, 0.4]
        assert np.array_equal(loaded.encode(x), model.encode(x))
        assert path.read_bytes().startswith(MODEL_MAGIC)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"NOTAMODEL")
        with pytest.raises(DataError, match="not an lcd-icd model"):
            load_model(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "model.bin"
        save_model(init_model(2, 0, SMALL_DIMS), path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(DataError, match="truncated"):
            load_model(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "model.bin"
        save_model(init_model(2, 0, SMALL_DIMS), path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(DataError, match="trailing"):
            load_model(path)


def test_gradcheck_cross_check():
    """torch.autograd.gradcheck and the finite-difference loop agree that backprop is right."""
    for seed in range(5):
        model = init_model(2, seed, (4, 8, 4, 2, 4, 8, 4))
        images = np.random.default_rng(seed).random((3, 4))
        assert torch_gradcheck(model, images)
        assert check_gradients(model, images) <= 1e-4


class TestReconstructionError:
    """Reconstruction error maps: arithmetic and out-of-distribution inputs."""

    @staticmethod
    def half_output_model():
        model = init_model(4, 0)
        with torch.no_grad():
            for layer in model.network.layers:
                layer.weight.zero_()
        return model

    def test_perfect_reconstruction_is_zero(self):
        error = reconstruction_error_map(self.half_output_model(), np.full(16, 0.5), 4, 4)
        assert np.array_equal(error, np.zeros((4, 4)))

    def test_squared_difference(self):
        error = reconstruction_error_map(self.half_output_model(), np.ones(16), 4, 4)
        assert np.array_equal(error, np.full((4, 4), 0.25))

    def test_checkerboards_reconstruct_worse_than_gradients(self):
        model = train_ae(smooth_gradients(40, 8, seed=0).reshape(40, -1), rng_seed=0)
        held_out = smooth_gradients(10, 8, seed=1)
        gradient_error = np.mean([reconstruction_error_map(model, g.reshape(-1), 8, 8) for g in held_out])
        checker_error = np.mean([reconstruction_error_map(model, c.reshape(-1), 8, 8) for c in checkerboards(8)])
        assert checker_error > gradient_error


def test_training_lowers_mse_on_random_images():
    """50 random 16x16 images, 200 epochs: the final MSE is below the initial one."""
    images = np.random.default_rng(0).random((50, 256))
    before = reconstruction_mse(init_model(16, 4), images)
    model = train_ae(images, epochs=200, rng_seed=4)
    assert reconstruction_mse(model, images) < before


def test_training_emits_no_tensor_conversion_warning():
    images = np.random.default_rng(0).random((8, 4))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        train_ae(images, epochs=2, layer_dims=SMALL_DIMS, batch_size=4)
    assert not [w for w in caught if "requires_grad" in str(w.message)]

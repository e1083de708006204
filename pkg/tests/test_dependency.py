"""
Test module for dependency detection

Covers dependency maps, detector features, the convolutional detector and
its training loop, the coherence fallback and synthetic training data.
"""

import numpy as np
import pytest
import torch

from src.common.errors import ConfigurationError, InsufficientDataError, ShapeError
from src.dependency.coherence import MIN_FRAMES, coherence_detector, lagged_coherence, quiet_bins
from src.dependency.dependency_map import DependencyMap
from src.dependency.detector_network import (
    DetectorNetwork,
    conv_output_width,
    detector_geometry,
    forward,
    load_detector,
    predict_map,
    save_detector,
)
from src.dependency.features import NUM_CHANNELS, RIDGE, build_features, lagged_regression
from src.dependency.synthetic import (
    SyntheticDataset,
    generate_synthetic_example,
    load_examples,
    save_examples,
    SyntheticExample,
)
from src.dependency.training import (
    TrainingConfig,
    f1_score,
    gradient_check,
    predict_probabilities,
    train,
)


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestDependencyMap:
    """Boolean activation sets"""

    def test_integer_matrix_is_converted(self):
        """0/1 integers become a boolean matrix"""
        dep = DependencyMap(np.array([[1, 0], [1, 1]]))
        assert dep.matrix.dtype == np.bool_
        assert dep.num_entries == 3

    def test_non_boolean_entries_rejected(self):
        """Entries other than 0 and 1 are a configuration error"""
        with pytest.raises(ConfigurationError):
            DependencyMap(np.array([[2, 0], [0, 1]]))

    def test_non_square_rejected(self):
        """A rectangular map is a shape error"""
        with pytest.raises(ShapeError):
            DependencyMap(np.ones((2, 3), dtype=bool))

    def test_empty_conjugate_collapses(self):
        """An all-false conjugate matrix is dropped"""
        dep = DependencyMap(np.eye(3, dtype=bool), conjugate=np.zeros((3, 3), dtype=bool))
        assert dep.conjugate is None
        assert dep == DependencyMap.diagonal(3)

    def test_conjugate_counts_towards_entries(self):
        """Direct and conjugate entries are both counted"""
        dep = DependencyMap(np.eye(2, dtype=bool), conjugate=np.array([[0, 1], [0, 0]], dtype=bool))
        assert dep.num_entries == 3
        assert dep != DependencyMap.diagonal(2)

    def test_empty_rows(self):
        """Rows without any direct or conjugate input are reported"""
        matrix = np.array([[1, 0, 0], [0, 0, 0], [0, 0, 0]], dtype=bool)
        conjugate = np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0]], dtype=bool)
        assert DependencyMap(matrix, conjugate).empty_rows() == [1]

    def test_csv_export(self, tmp_path):
        """CSV rows are output bins with integer entries"""
        path = tmp_path / "map.csv"
        DependencyMap(np.array([[1, 0], [1, 1]], dtype=bool)).to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "output_bin,in_0,in_1"
        assert lines[1:] == ["0,1,0", "1,1,1"]


class TestFeatures:
    """Detector input features"""

    @pytest.fixture
    def windows(self):
        rng = np.random.default_rng(0)
        return _complex(rng, (16, 4)), _complex(rng, (16, 4))

    def test_tensor_shape(self, windows):
        """Five channels over (N_s, L)"""
        x, y = windows
        features = build_features(x, y)
        assert features.data.shape == (NUM_CHANNELS, 4, 16)
        assert features.all_output_bins().shape == (4, NUM_CHANNELS, 4, 16)

    def test_measurement_channels_repeat_latest_frame(self, windows):
        """Channels 3 and 4 hold the latest measurement along time"""
        x, y = windows
        data = build_features(x, y).data
        assert np.allclose(data[2], y[-1].real[:, None])
        assert np.allclose(data[3], y[-1].imag[:, None])

    def test_orthogonal_inputs_at_lag_zero(self):
        """With orthogonal excitation bins, Y = X[:, 3] weighs bin 3 by 1/(1+ridge) and nothing else"""
        x = np.fft.fft(np.eye(16))[:, :8]
        values = lagged_regression(x, x[:, [3] * 8])
        lag_zero = values[0, :, 0]
        print(f"lag-0 weights: {np.round(lag_zero, 4)}")
        assert lag_zero[3] == pytest.approx(1.0 / (1.0 + RIDGE))
        assert np.allclose(np.delete(lag_zero, 3), 0.0, atol=1e-12)
        assert values.shape == (8, 8, 16)
        assert np.all((values >= 0) & (values <= 1))

    def test_regression_separates_overlapping_inputs(self):
        """Two mixed inputs stand out from the other excitation bins"""
        rng = np.random.default_rng(1)
        x = _complex(rng, (32, 8))
        y = np.zeros((32, 8), dtype=complex)
        y[:, 0] = 0.8 * x[:, 2] - 0.6j * x[:, 5]
        weights = lagged_regression(x, y)[0, :, 0]
        others = np.delete(weights, [2, 5])
        assert min(weights[2], weights[5]) > 2 * others.max(), f"weights {np.round(weights, 3)}"

    def test_zero_energy_bins_get_zero_weight(self):
        """Silent windows do not divide by zero"""
        x = np.zeros((8, 2), dtype=complex)
        assert np.all(lagged_regression(x, x) == 0)
        rng = np.random.default_rng(2)
        assert np.all(lagged_regression(_complex(rng, (8, 2)), x) == 0)

    def test_same_bin_channel_matches_regression(self, windows):
        """The unconditioned fifth channel is the same-bin slice of the regression weights"""
        x, y = windows
        features = build_features(x, y)
        for k in range(4):
            assert np.array_equal(features.data[4][k], features.regression[k, k])

    def test_single_measurement_frame(self, windows):
        """A (N_s,) measurement is treated as the latest frame"""
        x, y = windows
        features = build_features(x, y[-1])
        assert np.allclose(features.data[2], y[-1].real[:, None])

    def test_short_history_raises(self, windows):
        """Fewer frames than L is insufficient data"""
        x, y = windows
        with pytest.raises(InsufficientDataError):
            build_features(x[:4], y, history=8)

    def test_bin_count_mismatch(self, windows):
        """Excitation and measurement must share the bin count"""
        x, _ = windows
        with pytest.raises(ShapeError):
            build_features(x, np.zeros((16, 3)))

    def test_output_bin_features_are_standardized(self, windows):
        """Every channel of a conditioned input has zero mean"""
        x, y = windows
        conditioned = build_features(x, y).for_output_bin(2)
        means = conditioned.reshape(NUM_CHANNELS, -1).mean(axis=1)
        assert np.allclose(means, 0.0, atol=1e-12)
        with pytest.raises(ShapeError):
            build_features(x, y).for_output_bin(4)


class TestDetectorNetwork:
    """Network geometry, inference and checkpoints"""

    @pytest.fixture
    def net(self):
        torch.manual_seed(0)
        return DetectorNetwork(num_bins=4, history=16)

    @pytest.fixture
    def features(self):
        rng = np.random.default_rng(2)
        return build_features(_complex(rng, (16, 4)), _complex(rng, (16, 4)))

    def test_conv_width(self):
        """L=16 collapses to a single time step after four convolutions"""
        assert conv_output_width(16) == 1
        assert conv_output_width(64) == 3

    def test_forward_probabilities(self, net, features):
        """One probability per excitation bin, all within [0, 1]"""
        probabilities = forward(net, features, output_bin=1)
        assert probabilities.shape == (4,)
        assert np.all((probabilities >= 0) & (probabilities <= 1))

    def test_predict_map_shape(self, net, features):
        """Thresholding gives an N_s x N_s map; threshold 0 selects everything"""
        assert predict_map(net, features).num_bins == 4
        assert predict_map(net, features, threshold=0.0) == DependencyMap.full(4)

    def test_dropout_rate_and_inference_identity(self, net):
        """Each dropout layer zeroes about 10% of 1e5 activations in training and none at inference"""
        layers = [m for m in net.modules() if isinstance(m, torch.nn.Dropout)]
        assert len(layers) == 2
        torch.manual_seed(4)
        ones = torch.ones(100_000)
        for layer in layers:
            layer.train()
            dropped = layer(ones)
            rate = float((dropped == 0).float().mean())
            print(f"dropout rate {rate:.4f}")
            assert abs(rate - 0.1) <= 0.01, f"dropout rate {rate:.4f}"
            kept = dropped[dropped != 0]
            assert torch.allclose(kept, torch.full_like(kept, 1 / 0.9))
            layer.eval()
            assert torch.equal(layer(ones), ones)

    def test_zero_weights_give_one_half(self, net, features):
        """With every parameter zero the sigmoid output is exactly 0.5"""
        with torch.no_grad():
            for parameter in net.parameters():
                parameter.zero_()
        for k in range(4):
            assert np.all(forward(net, features, k) == 0.5)
        assert predict_map(net, features, threshold=0.5) == DependencyMap.full(4)

    def test_geometry_mismatch(self, net):
        """Features of another size are rejected"""
        rng = np.random.default_rng(3)
        other = build_features(_complex(rng, (16, 3)), _complex(rng, (16, 3)))
        with pytest.raises(ShapeError):
            forward(net, other, 0)

    def test_invalid_geometry(self):
        """Zero bins is a configuration error"""
        with pytest.raises(ConfigurationError):
            DetectorNetwork(num_bins=0, history=16)

    def test_checkpoint_round_trip(self, net, features, tmp_path):
        """A reloaded detector gives identical probabilities"""
        base = save_detector(net, tmp_path / "detector")
        restored = load_detector(base)
        assert detector_geometry(base) == (4, 16)
        assert restored.parameter_count == net.parameter_count
        for k in range(4):
            assert np.array_equal(forward(net, features, k), forward(restored, features, k))

    def test_checkpoint_body_is_float32(self, net, tmp_path):
        """The binary body holds every parameter as 4-byte floats"""
        base = save_detector(net, tmp_path / "detector")
        assert base.with_suffix(".bin").stat().st_size == 4 * net.parameter_count

    def test_gradient_check(self):
        """Autograd agrees with central differences to 1e-4"""
        torch.manual_seed(1)
        net = DetectorNetwork(num_bins=4, history=16)
        dataset = SyntheticDataset(2, num_bins=4, history=16, seed=5)
        inputs, targets = dataset.inputs[:6], dataset.targets[:6]
        gaps = gradient_check(net, inputs, targets)
        worst = max(gaps.values())
        print(f"\nWorst relative gradient gap: {worst:.2e}")
        assert worst <= 1e-4, f"gradient mismatch {worst:.2e}"


class TestSynthetic:
    """Synthetic training data"""

    def test_example_shapes(self):
        """X and Y are (L, N_s) and the label is N_s x N_s"""
        x, y, label = generate_synthetic_example(np.random.default_rng(0), num_bins=6, history=16)
        assert x.shape == (16, 6) and y.shape == (16, 6)
        assert label.num_bins == 6

    def test_sparsity_extremes(self):
        """Sparsity 0 gives an empty map and 1 a full one"""
        rng = np.random.default_rng(1)
        _, y, empty = generate_synthetic_example(rng, 4, 16, sparsity=0.0, noise_level=0.0)
        assert empty.num_entries == 0
        assert np.all(y == 0)
        _, _, full = generate_synthetic_example(rng, 4, 16, sparsity=1.0)
        assert full == DependencyMap.full(4)

    def test_invalid_sparsity(self):
        """Sparsity outside [0, 1] is rejected"""
        with pytest.raises(ConfigurationError):
            generate_synthetic_example(np.random.default_rng(0), 4, 16, sparsity=1.5)

    def test_dataset_is_deterministic(self):
        """Equal seeds give identical tensors; the validation seed differs"""
        first = SyntheticDataset(5, num_bins=4, history=16, seed=7)
        second = SyntheticDataset(5, num_bins=4, history=16, seed=7)
        assert len(first) == 20
        assert torch.equal(first.inputs, second.inputs)
        assert torch.equal(first.targets, second.targets)
        validation = first.independent_validation(0.4)
        assert validation.size == 2
        assert not torch.equal(validation.inputs, first.inputs[:8])

    def test_examples_round_trip_on_disk(self, tmp_path):
        """Saved examples load back with equal arrays and labels"""
        rng = np.random.default_rng(2)
        examples = [SyntheticExample(*generate_synthetic_example(rng, 3, 16)) for _ in range(3)]
        loaded = load_examples(save_examples(tmp_path / "data", examples))
        assert len(loaded) == 3
        for original, restored in zip(examples, loaded):
            assert np.array_equal(original.x, restored.x)
            assert np.array_equal(original.y, restored.y)
            assert original.label == restored.label


class TestTraining:
    """Adam on binary cross entropy"""

    def test_f1_score(self):
        """Hand-evaluated F1 values"""
        assert f1_score([1, 1, 0, 0], [1, 0, 1, 0]) == pytest.approx(0.5)
        assert f1_score([1, 0], [1, 0]) == 1.0
        assert f1_score([0, 0], [0, 0]) == 1.0

    def test_invalid_config(self):
        """Negative learning rates and empty batches are rejected"""
        with pytest.raises(ConfigurationError):
            TrainingConfig(learning_rate=-1.0)
        with pytest.raises(ConfigurationError):
            TrainingConfig(batch_size=0)

    def test_zero_epochs_leaves_network_untouched(self):
        """epochs=0 only records the initial validation loss"""
        torch.manual_seed(0)
        net = DetectorNetwork(num_bins=4, history=16)
        before = {name: value.clone() for name, value in net.state_dict().items()}
        dataset = SyntheticDataset(4, num_bins=4, history=16, seed=1)
        net, curve = train(net, dataset, TrainingConfig(epochs=0))
        assert curve.train == [] and curve.validation == []
        assert np.isfinite(curve.initial_validation)
        for name, value in net.state_dict().items():
            assert torch.equal(value, before[name]), f"{name} changed"

    def test_zero_learning_rate_keeps_initial_loss(self):
        """One epoch at learning rate 0 leaves the weights and the validation BCE unchanged"""
        torch.manual_seed(2)
        net = DetectorNetwork(num_bins=4, history=16)
        before = {name: value.clone() for name, value in net.state_dict().items()}
        dataset = SyntheticDataset(4, num_bins=4, history=16, seed=2)
        net, curve = train(net, dataset, TrainingConfig(learning_rate=0.0, epochs=1, batch_size=4), dataset)

        print(f"\nInitial BCE {curve.initial_validation:.6f}, after one epoch {curve.validation[0]:.6f}")
        assert curve.validation[0] == pytest.approx(curve.initial_validation, rel=1e-12)
        for name, value in net.state_dict().items():
            assert torch.equal(value, before[name]), f"{name} changed"

    def test_training_is_reproducible(self):
        """Same seeds give the same loss curve"""
        curves = []
        for _ in range(2):
            torch.manual_seed(3)
            net = DetectorNetwork(num_bins=4, history=16)
            dataset = SyntheticDataset(8, num_bins=4, history=16, seed=3)
            _, curve = train(net, dataset, TrainingConfig(learning_rate=1e-3, epochs=2, batch_size=8, seed=3))
            curves.append(curve)
        assert curves[0].train == pytest.approx(curves[1].train, rel=1e-6)
        assert curves[0].validation == pytest.approx(curves[1].validation, rel=1e-6)

    @pytest.mark.slow
    def test_validation_loss_decreases(self):
        """A short run lowers the validation BCE by at least 20%"""
        torch.manual_seed(0)
        net = DetectorNetwork(num_bins=4, history=16)
        dataset = SyntheticDataset(600, num_bins=4, history=16, seed=11)
        cfg = TrainingConfig(learning_rate=1e-3, epochs=10, batch_size=32, seed=11)
        _, curve = train(net, dataset, cfg)
        print(f"\nValidation BCE {curve.initial_validation:.4f} -> {curve.validation[-1]:.4f}")
        assert curve.validation[-1] <= 0.8 * curve.initial_validation

    @pytest.mark.slow
    def test_trained_detector_reaches_f1(self):
        """N_s=16, L=16, sparsity 0.3 on 5000 examples reaches held-out F1 >= 0.85"""
        torch.manual_seed(0)
        net = DetectorNetwork(num_bins=16, history=16)
        dataset = SyntheticDataset(5000, num_bins=16, history=16, sparsity=0.3, seed=0)
        validation = dataset.independent_validation(0.1)
        cfg = TrainingConfig(learning_rate=1e-3, epochs=15, batch_size=64)
        net, curve = train(net, dataset, cfg, validation)

        probabilities, targets = predict_probabilities(net, validation)
        f1 = f1_score(probabilities >= 0.5, targets)
        print(f"\nValidation BCE {curve.initial_validation:.4f} -> {curve.validation[-1]:.4f}, F1 {f1:.3f}")
        assert f1 >= 0.85, f"F1 {f1:.3f} below 0.85"


class TestCoherenceDetector:
    """Training-free fallback"""

    def test_recovers_permutation(self):
        """Y[k] = X[perm[k]] yields exactly the permutation map"""
        rng = np.random.default_rng(4)
        x = _complex(rng, (256, 4))
        permutation = [2, 0, 3, 1]
        y = x[:, permutation] + 1e-3 * _complex(rng, (256, 4))
        detected = coherence_detector(x, y, threshold=0.5, max_lag=2)
        expected = np.zeros((4, 4), dtype=bool)
        expected[np.arange(4), permutation] = True
        assert np.array_equal(detected.matrix, expected)
        assert detected.conjugate is None

    def test_delayed_dependency(self):
        """A one-frame delay is found through the lag search"""
        rng = np.random.default_rng(5)
        x = _complex(rng, (256, 3))
        y = np.zeros_like(x)
        y[1:, 0] = x[:-1, 2]
        y[:, 1:] = 1e-3 * _complex(rng, (256, 2))
        detected = coherence_detector(x, y, threshold=0.5, max_lag=2)
        assert detected.matrix[0, 2]
        assert not detected.matrix[0, 0]

    def test_conjugate_dependency(self):
        """Y = conj(X) shows up in the conjugate map only"""
        rng = np.random.default_rng(6)
        x = _complex(rng, (256, 3))
        detected = coherence_detector(x, np.conj(x), threshold=0.5, conjugate=True)
        assert not detected.matrix.any()
        assert np.array_equal(detected.conjugate, np.eye(3, dtype=bool))

    def test_quiet_excitation_bins_gated(self):
        """A bin 40 dB below the strongest is dropped from both maps when gated"""
        rng = np.random.default_rng(8)
        x = _complex(rng, (256, 3))
        x[:, 2] *= 1e-2
        y = x + 1e-4 * _complex(rng, (256, 3))

        ungated = coherence_detector(x, y, threshold=0.5, max_lag=2)
        assert np.array_equal(ungated.matrix, np.eye(3, dtype=bool))

        gated = coherence_detector(x, y, threshold=0.5, max_lag=2, conjugate=True, min_energy_db=-30.0)
        assert np.array_equal(quiet_bins(x, -30.0), [False, False, True])
        assert not gated.matrix[:, 2].any(), "quiet bin still reported as an input"
        assert np.array_equal(gated.matrix[:, :2], np.eye(3, dtype=bool)[:, :2])
        assert gated.conjugate is None or not gated.conjugate[:, 2].any()

    def test_false_positive_rate_on_independent_noise(self):
        """Independent noise crosses a 0.8 threshold in fewer than 5% of 1000 trials"""
        rng = np.random.default_rng(9)
        hits = 0
        trials = 1000
        for _ in range(trials):
            x = _complex(rng, (MIN_FRAMES, 2))
            y = _complex(rng, (MIN_FRAMES, 2))
            hits += int(coherence_detector(x, y, threshold=0.8, max_lag=4).matrix.any())
        rate = hits / trials
        print(f"false-positive rate {rate:.3f}")
        assert rate < 0.05, f"false-positive rate {rate:.3f}"

    def test_values_bounded(self):
        """Coherence and pseudo-coherence lie in [0, 1]"""
        rng = np.random.default_rng(7)
        coherence, pseudo = lagged_coherence(_complex(rng, (128, 3)), _complex(rng, (128, 3)))
        for values in (coherence, pseudo):
            assert np.all((values >= 0) & (values <= 1 + 1e-12))

    def test_short_history_raises(self):
        """Fewer than MIN_FRAMES frames is insufficient data"""
        with pytest.raises(InsufficientDataError):
            coherence_detector(np.ones((MIN_FRAMES - 1, 2)), np.ones((MIN_FRAMES - 1, 2)))

    def test_shape_mismatch(self):
        """Histories of different shapes are rejected"""
        with pytest.raises(ShapeError):
            lagged_coherence(np.ones((MIN_FRAMES, 2)), np.ones((MIN_FRAMES, 3)))

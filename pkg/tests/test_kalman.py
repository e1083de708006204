"""
Test module for the multichannel Kalman filter

Checks Algorithm-level hand evaluations, equivalence with regularized least
squares, covariance invariants, the batched bank and snapshot round trips.
"""

import time

import numpy as np
import pytest

from src.common.errors import ConfigurationError, ShapeError, StabilityError
from src.kalman.miso_bank import MisoBank, RowLayout
from src.kalman.miso_kalman import (
    init_state,
    kalman_update,
    predict,
    state_from_bytes,
    state_to_bytes,
)


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestInitState:
    """State initialization"""

    def test_identity_covariance(self):
        """dim=2, sigma0=1 gives identity inverse Hessian and zero taps"""
        state = init_state(2, sigma0=1.0)
        assert np.array_equal(state.inv_hessian, np.eye(2))
        assert np.all(state.h == 0)

    def test_zero_dimension_rejected(self):
        """An empty filter is a configuration error"""
        with pytest.raises(ConfigurationError):
            init_state(0)

    def test_growing_window_parameters(self):
        """a=1, gamma=0 maps onto identity transition and zero process noise"""
        state = init_state(3, a=1.0, gamma=0.0)
        assert np.array_equal(state.transition, np.eye(3))
        assert np.all(state.process_noise == 0)

    @pytest.mark.parametrize("kwargs", [{"sigma0": 0.0}, {"xi0": -1.0}, {"a": 1.5}, {"gamma": -1e-3}])
    def test_invalid_scalars_rejected(self, kwargs):
        """Out-of-range scalars are configuration errors"""
        with pytest.raises(ConfigurationError):
            init_state(2, **kwargs)


class TestKalmanUpdate:
    """Single measurement updates"""

    def test_hand_evaluated_scalar_step(self):
        """dim=1, x=1, d=1 from unit covariance gives eta2=2, k=1/2, h=0.5, cov=0.5"""
        state = init_state(1, sigma0=1.0, gamma=0.0, xi0=1.0, a=1.0)
        new_state, error = kalman_update(state, np.array([1.0]), 1.0)
        assert error == pytest.approx(1.0)
        assert new_state.h[0] == pytest.approx(0.5)
        assert new_state.inv_hessian[0, 0] == pytest.approx(0.5)

    def test_zero_regressor(self):
        """x = 0 leaves the error equal to d and only propagates the covariance"""
        state = init_state(3, sigma0=2.0, gamma=1e-3, a=0.9)
        state.h[:] = [1, 2j, -1]
        new_state, error = kalman_update(state, np.zeros(3), 0.5 + 0.5j)
        assert error == pytest.approx(0.5 + 0.5j)
        assert np.allclose(new_state.h, 0.9 * state.h)
        expected = 0.81 * 2.0 * np.eye(3) + 1e-3 * np.eye(3)
        assert np.allclose(new_state.inv_hessian, expected)

    def test_converges_on_scalar_system(self):
        """d = 0.7 x + small noise is identified within 1e-2 after 2000 updates"""
        rng = np.random.default_rng(0)
        state = init_state(1, xi0=1e-6, gamma=0.0, a=1.0)
        for _ in range(2000):
            x = _complex(rng, 1)
            d = np.conj(0.7) * x[0] + 1e-3 * _complex(rng, 1)[0]
            state, _ = kalman_update(state, x, d)
        assert abs(state.h[0] - 0.7) < 1e-2, f"estimated tap {state.h[0]:.4f}"

    def test_matches_regularized_least_squares(self):
        """With A=I and zero process noise the taps equal the ridge solution"""
        rng = np.random.default_rng(1)
        dim, steps, xi2, sigma0 = 6, 40, 0.3, 2.0
        state = init_state(dim, sigma0=sigma0, gamma=0.0, xi0=xi2, a=1.0)
        regressors = _complex(rng, (steps, dim))
        desired = _complex(rng, steps)

        start = time.perf_counter()
        for x, d in zip(regressors, desired):
            state, _ = kalman_update(state, x, d)
        elapsed = time.perf_counter() - start

        # Rows of the design matrix are x^H since d = h^H x.
        design = regressors.conj()
        normal = design.conj().T @ design + (xi2 / sigma0) * np.eye(dim)
        expected = np.linalg.solve(normal, design.conj().T @ desired.conj())
        relative = np.linalg.norm(state.h - expected) / np.linalg.norm(expected)
        assert relative < 1e-6, f"relative deviation from least squares {relative:.2e}"
        assert elapsed < 1.0

    def test_covariance_stays_hermitian(self):
        """Inverse Hessian is Hermitian and eta2 >= xi2 throughout"""
        rng = np.random.default_rng(2)
        state = init_state(5, xi0=0.1)
        for _ in range(200):
            x = _complex(rng, 5)
            eta2 = state.measurement_noise + np.real(np.vdot(x, state.inv_hessian @ x))
            assert eta2 >= state.measurement_noise
            state, _ = kalman_update(state, x, _complex(rng, 1)[0])
            gap = np.max(np.abs(state.inv_hessian - state.inv_hessian.conj().T))
            assert gap <= 1e-10, f"Hermitian gap {gap:.2e}"

    def test_error_does_not_grow_after_convergence(self):
        """Ensemble MSE of consecutive 100-update windows does not grow after convergence"""
        rng = np.random.default_rng(3)
        runs, updates, window = 200, 500, 100
        errors = np.zeros((runs, updates))
        for run in range(runs):
            truth = _complex(rng, 4)
            state = init_state(4, xi0=1e-2, gamma=0.0, a=1.0)
            for t in range(updates):
                x = _complex(rng, 4)
                d = np.vdot(truth, x) + 0.1 * _complex(rng, 1)[0]
                state, error = kalman_update(state, x, d)
                errors[run, t] = abs(error) ** 2

        windows = errors[:, 200:].reshape(runs, -1, window).mean(axis=(0, 2))
        print(f"window MSE: {np.round(windows, 5)}")
        for earlier, later in zip(windows[:-1], windows[1:]):
            assert later <= 1.05 * earlier, f"error grew from {earlier:.5f} to {later:.5f}"

    def test_shape_mismatch(self):
        """Regressor of the wrong length is rejected"""
        with pytest.raises(ShapeError):
            kalman_update(init_state(3), np.zeros(2), 0.0)

    def test_negative_innovation_raises(self):
        """A corrupted covariance that makes eta2 non-positive raises"""
        state = init_state(1, xi0=1.0)
        state.inv_hessian[0, 0] = -5.0
        with pytest.raises(StabilityError):
            kalman_update(state, np.array([1.0]), 0.0)

    def test_covariance_reset_on_drift(self):
        """A diagonal above 1e6 sigma0 resets the covariance and keeps the taps"""
        state = init_state(2, sigma0=1.0, gamma=0.0, a=1.0)
        state.inv_hessian[:] = np.diag([1e7, 1.0])
        state.h[:] = [0.5, -0.5]
        new_state, _ = kalman_update(state, np.zeros(2), 0.0)
        assert np.array_equal(new_state.inv_hessian, np.eye(2))
        assert np.allclose(new_state.h, [0.5, -0.5])


class TestPredict:
    """Filter output"""

    def test_zero_taps(self):
        """h = 0 predicts zero"""
        assert predict(init_state(3), np.ones(3)) == 0

    def test_unit_selector(self):
        """h = e1 returns the first regressor entry"""
        state = init_state(3)
        state.h[0] = 1.0
        assert predict(state, np.array([3 + 4j, 1, 1])) == pytest.approx(3 + 4j)

    def test_matches_naive_sum(self):
        """Random taps agree with an explicit conjugated sum"""
        rng = np.random.default_rng(4)
        state = init_state(7)
        state.h[:] = _complex(rng, 7)
        x = _complex(rng, 7)
        expected = sum(np.conj(state.h[i]) * x[i] for i in range(7))
        assert abs(predict(state, x) - expected) < 1e-12


class TestSnapshot:
    """Binary state snapshots"""

    def test_round_trip(self):
        """Bytes restore an identical state"""
        rng = np.random.default_rng(5)
        state = init_state(3, sigma0=0.5, xi0=0.25)
        for _ in range(5):
            state, _ = kalman_update(state, _complex(rng, 3), _complex(rng, 1)[0])
        restored = state_from_bytes(state_to_bytes(state))
        assert np.array_equal(restored.h, state.h)
        assert np.array_equal(restored.inv_hessian, state.inv_hessian)
        assert restored.measurement_noise == state.measurement_noise
        assert restored.sigma0 == state.sigma0

    def test_layout_is_little_endian(self):
        """Header starts with the dimension as little-endian int64"""
        payload = state_to_bytes(init_state(2))
        assert payload[:8] == (2).to_bytes(8, "little")
        assert len(payload) == 24 + 16 * (2 + 3 * 4)

    def test_truncated_payload_raises(self):
        """A short body is detected"""
        payload = state_to_bytes(init_state(2))
        with pytest.raises(ShapeError):
            state_from_bytes(payload[:-16])


class TestMisoBank:
    """Batched rows against the single-row recursion"""

    def test_rows_match_single_row_updates(self):
        """Each padded row of a bank follows kalman_update on its active set"""
        rng = np.random.default_rng(6)
        support = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 1]], dtype=bool)
        layout = RowLayout.from_support(support)
        bank = MisoBank(layout, batch=1, sigma0=1.0, gamma=1e-4, a=0.99)
        states = [init_state(int(row.sum()), sigma0=1.0, gamma=1e-4, xi0=0.2, a=0.99) for row in support]

        for _ in range(20):
            source = _complex(rng, 3)
            desired = _complex(rng, 3)
            bank.update(layout.gather(source)[None], desired[None], 0.2)
            for row, active in enumerate(support):
                states[row].measurement_noise = 0.2
                states[row], _ = kalman_update(states[row], source[active], desired[row])

        for row, active in enumerate(support):
            width = int(active.sum())
            assert np.allclose(bank.coefficients[0, row, :width], states[row].h, atol=1e-12)
            assert np.allclose(bank.inv_hessian[0, row, :width, :width], states[row].inv_hessian, atol=1e-12)

    def test_padding_stays_zero(self):
        """Padded taps never move"""
        rng = np.random.default_rng(7)
        layout = RowLayout.from_support(np.array([[1, 0], [1, 1]], dtype=bool))
        bank = MisoBank(layout, batch=2)
        for _ in range(10):
            bank.update(layout.gather(_complex(rng, (2, 2))), _complex(rng, (2, 2)), 0.5)
        assert np.all(bank.coefficients[:, 0, 1] == 0)
        assert np.all(bank.inv_hessian[:, 0, 1, :] == 0)

    def test_conjugate_taps_gather_conjugates(self):
        """Conjugate support entries read conj(source)"""
        layout = RowLayout.from_support(np.eye(2, dtype=bool), np.array([[0, 1], [0, 0]], dtype=bool))
        regressors = layout.gather(np.array([1 + 1j, 2 + 2j]))
        assert regressors[0, 1] == 2 - 2j
        assert regressors[1, 1] == 0

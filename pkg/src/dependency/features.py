"""
Detector input features

Five channels over (bin, time): Re X, Im X, Re Y, Im Y (latest measurement
frame repeated along time) and, per lag, the normalized magnitude of a ridge
regression of the measurement bin on every excitation bin.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.common.errors import InsufficientDataError, ShapeError

NUM_CHANNELS = 5

# Ridge strength relative to the mean excitation bin energy of the window.
RIDGE = 0.05


def lagged_regression(x: np.ndarray, y: np.ndarray, ridge: float = RIDGE) -> np.ndarray:
    """Per-lag ridge least squares of every measurement bin on all excitation bins.

    For each lag, Y[lag:, k'] is regressed jointly on the columns of
    X[:L - lag], so excitation bins that only correlate with a true input
    through chance overlap get small weights. The coefficient of bin k is
    reported as |c_k| ||x_k|| / ||y_k'||, clipped to [0, 1].

    x and y are (L, N); returns (N_out, N_in, L). Silent windows give zeros.
    """
    length, num_bins = x.shape
    out = np.zeros((y.shape[1], num_bins, length))
    column_energy = np.sum(np.abs(x) ** 2, axis=0)
    output_norm = np.linalg.norm(y, axis=0)
    if column_energy.max() <= 0:
        return out

    penalty = ridge * column_energy.mean() * np.eye(num_bins)
    for lag in range(length):
        design = x[:length - lag]
        gram = design.conj().T @ design + penalty
        coefficients = np.linalg.solve(gram, design.conj().T @ y[lag:])
        out[:, :, lag] = np.abs(coefficients).T

    scale = np.sqrt(column_energy)[None, :] / np.where(output_norm > 0, output_norm, np.inf)[:, None]
    return np.clip(out * scale[:, :, None], 0.0, 1.0)


def _standardize(channels: np.ndarray) -> np.ndarray:
    """Zero mean and unit variance per channel; constant channels only get centered"""
    flat = channels.reshape(channels.shape[0], -1)
    mean = flat.mean(axis=1)
    std = flat.std(axis=1)
    scale = np.where(std > 0, std, 1.0)
    return (channels - mean[:, None, None]) / scale[:, None, None]


@dataclass
class FeatureTensor:
    """Raw feature channels plus the complex windows they came from.

    data holds the unconditioned channels (shape 5 x N_s x L, channel 5 as
    the same-bin regression weight). regression holds the weights of every
    output bin, (N_s, N_s, L). for_output_bin() produces the standardized
    network input for one output bin.
    """
    x: np.ndarray
    y: np.ndarray
    data: np.ndarray
    regression: np.ndarray

    @property
    def num_bins(self) -> int:
        return self.x.shape[1]

    @property
    def history(self) -> int:
        return self.x.shape[0]

    def for_output_bin(self, output_bin: int) -> np.ndarray:
        """Conditioned, standardized network input for output bin k'"""
        if not 0 <= output_bin < self.num_bins:
            raise ShapeError(f"output bin {output_bin} outside [0, {self.num_bins})")
        channels = np.zeros_like(self.data)
        channels[0] = self.data[0]
        channels[1] = self.data[1]
        latest = self.y[-1, output_bin]
        channels[2, output_bin, :] = latest.real
        channels[3, output_bin, :] = latest.imag
        channels[4] = self.regression[output_bin]
        return _standardize(channels)

    def all_output_bins(self) -> np.ndarray:
        """Stacked inputs for every output bin, shape (N_s, 5, N_s, L)"""
        return np.stack([self.for_output_bin(k) for k in range(self.num_bins)])


def build_features(x_history: np.ndarray, y_history: np.ndarray,
                   history: Optional[int] = None) -> FeatureTensor:
    """Features from the last L excitation frames and the measurement.

    y_history may be a single latest frame (N_s,) or a window of frames
    (>= L, N_s); with a single frame the regression channel only sees
    the latest measurement.
    """
    x_history = np.asarray(x_history, dtype=np.complex128)
    y_history = np.asarray(y_history, dtype=np.complex128)
    if x_history.ndim != 2:
        raise ShapeError(f"x_history must be (frames, bins), got {x_history.shape}")
    length = history or x_history.shape[0]
    num_bins = x_history.shape[1]
    if x_history.shape[0] < length or length < 1:
        raise InsufficientDataError(f"need {length} excitation frames, have {x_history.shape[0]}")

    if y_history.ndim == 1:
        window = np.zeros((length, num_bins), dtype=np.complex128)
        window[-1] = y_history
        y_history = window
    if y_history.shape[1] != num_bins:
        raise ShapeError(f"measurement has {y_history.shape[1]} bins, excitation {num_bins}")
    if y_history.shape[0] < length:
        raise InsufficientDataError(f"need {length} measurement frames, have {y_history.shape[0]}")

    x = x_history[-length:]
    y = y_history[-length:]
    data = np.empty((NUM_CHANNELS, num_bins, length))
    data[0] = x.real.T
    data[1] = x.imag.T
    data[2] = np.repeat(y[-1].real[:, None], length, axis=1)
    data[3] = np.repeat(y[-1].imag[:, None], length, axis=1)
    regression = lagged_regression(x, y)
    data[4] = regression[np.arange(num_bins), np.arange(num_bins)]
    return FeatureTensor(x=x, y=y, data=data, regression=regression)

"""
Excitation signals

Seeded noise excitations standing in for speech.
"""

import numpy as np
import scipy.signal

from src.common.errors import ConfigurationError


def white_noise(num_samples: int, rng: np.random.Generator, rms: float = 0.1) -> np.ndarray:
    return rms * rng.standard_normal(num_samples)


def bandlimited_noise(num_samples: int, fs: int, cutoff_hz: float, rng: np.random.Generator,
                      rms: float = 0.1, order: int = 8) -> np.ndarray:
    """Low-pass Butterworth-filtered Gaussian noise scaled to the target RMS"""
    if not 0 < cutoff_hz < fs / 2:
        raise ConfigurationError(f"cutoff {cutoff_hz} Hz must lie inside (0, {fs / 2}) Hz")
    sos = scipy.signal.butter(order, cutoff_hz, btype="low", fs=fs, output="sos")
    noise = scipy.signal.sosfilt(sos, rng.standard_normal(num_samples))
    level = np.sqrt(np.mean(noise ** 2))
    return rms * noise / level if level > 0 else noise


def add_sensor_noise(signal: np.ndarray, relative_level: float, rng: np.random.Generator) -> np.ndarray:
    """Add white noise at relative_level times the signal RMS"""
    if relative_level <= 0:
        return np.asarray(signal, dtype=np.float64)
    level = relative_level * np.sqrt(np.mean(np.asarray(signal) ** 2))
    return signal + level * rng.standard_normal(len(signal))

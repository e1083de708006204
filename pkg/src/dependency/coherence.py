"""
Coherence dependency detector

Training-free fallback: an excitation bin k feeds output bin k_o when the
magnitude-squared coherence between Y[k_o, .] and X[k, . - lag] exceeds a
threshold for some lag. The pseudo-coherence (no conjugate on X) detects
bins that reach the output through their complex conjugate.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from src.common.errors import InsufficientDataError, ShapeError
from src.dependency.dependency_map import DependencyMap

logger = logging.getLogger(__name__)

MIN_FRAMES = 64


def lagged_coherence(x_history: np.ndarray, y_history: np.ndarray,
                     max_lag: int = 4) -> Tuple[np.ndarray, np.ndarray]:
    """Max-over-lag coherence and pseudo-coherence, each (N_out, N_in)"""
    x = np.asarray(x_history, dtype=np.complex128)
    y = np.asarray(y_history, dtype=np.complex128)
    if x.ndim != 2 or x.shape != y.shape:
        raise ShapeError(f"histories must share a (frames, bins) shape, got {x.shape} and {y.shape}")
    frames = x.shape[0]
    if frames < MIN_FRAMES:
        raise InsufficientDataError(f"coherence needs {MIN_FRAMES} frames, have {frames}")

    coherence = np.zeros((y.shape[1], x.shape[1]))
    pseudo = np.zeros_like(coherence)
    for lag in range(max(1, min(max_lag, frames - 1))):
        x_lag = x[:frames - lag]
        y_lag = y[lag:]
        power = np.outer(np.sum(np.abs(y_lag) ** 2, axis=0), np.sum(np.abs(x_lag) ** 2, axis=0))
        safe = np.where(power > 0, power, 1.0)
        direct = np.where(power > 0, np.abs(y_lag.T @ np.conj(x_lag)) ** 2 / safe, 0.0)
        folded = np.where(power > 0, np.abs(y_lag.T @ x_lag) ** 2 / safe, 0.0)
        coherence = np.maximum(coherence, direct)
        pseudo = np.maximum(pseudo, folded)
    return coherence, pseudo


def quiet_bins(x_history: np.ndarray, min_energy_db: Optional[float]) -> np.ndarray:
    """Excitation bins whose energy lies more than -min_energy_db below the strongest bin"""
    energy = np.sum(np.abs(np.asarray(x_history)) ** 2, axis=0)
    if min_energy_db is None or energy.max() <= 0:
        return np.zeros(energy.shape, dtype=bool)
    return energy < energy.max() * 10.0 ** (min_energy_db / 10.0)


def coherence_detector(x_history: np.ndarray, y_history: np.ndarray, threshold: float = 0.5,
                       max_lag: int = 4, conjugate: bool = False,
                       min_energy_db: Optional[float] = None) -> DependencyMap:
    """Dependency map from coherence over the given frame histories.

    With min_energy_db set, quiet excitation bins (see quiet_bins) are never
    reported as inputs, whatever their coherence.
    """
    coherence, pseudo = lagged_coherence(x_history, y_history, max_lag)
    quiet = quiet_bins(x_history, min_energy_db)
    coherence[:, quiet] = 0.0
    pseudo[:, quiet] = 0.0
    matrix = coherence > threshold
    conjugate_map = pseudo > threshold if conjugate else None
    detected = DependencyMap(matrix, conjugate_map)
    logger.debug("Coherence detector: %d direct, %d conjugate entries over %d frames, %d quiet bins",
                 int(matrix.sum()), 0 if conjugate_map is None else int(conjugate_map.sum()),
                 len(x_history), int(quiet.sum()))
    return detected

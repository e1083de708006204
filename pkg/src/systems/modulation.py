"""Amplitude modulation by a quarter-sample-rate sine: y[n] = x[n] sin(pi n / 2)"""

import numpy as np

# sin(pi n / 2) for n mod 4, exact on the integer grid
_QUADRATURE = np.array([0.0, 1.0, 0.0, -1.0])


def quadrature_carrier(length: int, start_index: int = 0) -> np.ndarray:
    return _QUADRATURE[(start_index + np.arange(length)) % 4]


def am_modulate(x: np.ndarray, start_index: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * quadrature_carrier(len(x), start_index)

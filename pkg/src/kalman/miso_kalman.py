"""
Multichannel Kalman Filter

Covariance-form Kalman recursion estimating one multi-input single-output
(MISO) subband filter h from the measurement d = h^H x + noise, with a
Gauss-Markov state transition h' = A h + process noise.
"""

import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from src.common.errors import ConfigurationError, ShapeError, StabilityError

logger = logging.getLogger(__name__)

# Diagonal of the inverse Hessian above this multiple of sigma0 triggers a reset.
RESET_FACTOR = 1e6


@dataclass
class MisoKalmanState:
    """State of one MISO row"""
    h: np.ndarray
    inv_hessian: np.ndarray
    transition: np.ndarray
    process_noise: np.ndarray
    measurement_noise: float
    sigma0: float = 1.0

    @property
    def dim(self) -> int:
        return self.h.shape[0]


def init_state(dim: int, sigma0: float = 1.0, gamma: float = 1e-6,
               xi0: float = 1.0, a: float = 0.9999) -> MisoKalmanState:
    """Zero coefficients with isotropic covariances"""
    if dim < 1:
        raise ConfigurationError(f"filter dimension must be at least 1, got {dim}")
    if sigma0 <= 0 or xi0 <= 0:
        raise ConfigurationError("sigma0 and xi0 must be positive")
    if gamma < 0:
        raise ConfigurationError("gamma must be non-negative")
    if not 0 < a <= 1:
        raise ConfigurationError(f"transition scale must lie in (0, 1], got {a}")

    eye = np.eye(dim, dtype=np.complex128)
    return MisoKalmanState(
        h=np.zeros(dim, dtype=np.complex128),
        inv_hessian=sigma0 * eye,
        transition=a * eye,
        process_noise=gamma * eye,
        measurement_noise=float(xi0),
        sigma0=float(sigma0),
    )


def _check_regressor(state: MisoKalmanState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if x.shape != (state.dim,):
        raise ShapeError(f"regressor shape {x.shape} does not match filter dimension {state.dim}")
    return x


def predict(state: MisoKalmanState, x: np.ndarray) -> complex:
    """Filter output h^H x"""
    x = _check_regressor(state, x)
    return complex(np.vdot(state.h, x))


def kalman_update(state: MisoKalmanState, x: np.ndarray, d: complex) -> Tuple[MisoKalmanState, complex]:
    """One measurement update, returning the new state and the prior error"""
    x = _check_regressor(state, x)
    omega = state.inv_hessian
    transition = state.transition

    omega_x = omega @ x
    eta2 = state.measurement_noise + float(np.real(np.vdot(x, omega_x)))
    if not np.isfinite(eta2) or eta2 <= 0:
        raise StabilityError(f"innovation variance became {eta2}")

    gain = transition @ omega_x / eta2
    error = complex(d - np.vdot(state.h, x))
    h = transition @ state.h + gain * np.conj(error)

    omega = transition @ omega @ transition.conj().T + state.process_noise - eta2 * np.outer(gain, gain.conj())
    omega = 0.5 * (omega + omega.conj().T)

    diagonal = np.real(np.diag(omega))
    if np.any(diagonal < 0) or np.any(diagonal > RESET_FACTOR * state.sigma0):
        logger.warning("Inverse Hessian drifted (diag range %.3g..%.3g); resetting to sigma0*I",
                       diagonal.min(), diagonal.max())
        omega = state.sigma0 * np.eye(state.dim, dtype=np.complex128)

    return replace(state, h=h, inv_hessian=omega), error


_HEADER = np.dtype([("dim", "<i8"), ("measurement_noise", "<f8"), ("sigma0", "<f8")])


def snapshot_size(dim: int) -> int:
    """Bytes taken by state_to_bytes for a row of the given dimension"""
    return _HEADER.itemsize + 16 * (dim + 3 * dim * dim)


def snapshot_dim(payload: bytes, offset: int = 0) -> int:
    """Dimension recorded in the snapshot starting at offset"""
    return int(np.frombuffer(payload, dtype=_HEADER, count=1, offset=offset)[0]["dim"])


def state_to_bytes(state: MisoKalmanState) -> bytes:
    """Little-endian snapshot: dim, xi^2, sigma0, then h, inverse Hessian, A, Gamma"""
    header = np.array([(state.dim, state.measurement_noise, state.sigma0)], dtype=_HEADER)
    parts = [header.tobytes()]
    for matrix in (state.h, state.inv_hessian, state.transition, state.process_noise):
        parts.append(np.ascontiguousarray(matrix, dtype="<c16").tobytes())
    return b"".join(parts)


def state_from_bytes(payload: bytes) -> MisoKalmanState:
    """Inverse of state_to_bytes"""
    header = np.frombuffer(payload[:_HEADER.itemsize], dtype=_HEADER)[0]
    dim = int(header["dim"])
    body = np.frombuffer(payload[_HEADER.itemsize:], dtype="<c16")
    expected = dim + 3 * dim * dim
    if body.size != expected:
        raise ShapeError(f"snapshot holds {body.size} values, expected {expected} for dim {dim}")

    h = body[:dim].astype(np.complex128)
    matrices = body[dim:].reshape(3, dim, dim).astype(np.complex128)
    return MisoKalmanState(
        h=h,
        inv_hessian=matrices[0],
        transition=matrices[1],
        process_noise=matrices[2],
        measurement_noise=float(header["measurement_noise"]),
        sigma0=float(header["sigma0"]),
    )

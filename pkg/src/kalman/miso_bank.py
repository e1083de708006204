"""
Batched MISO Kalman rows

A MisoBank runs the single-row covariance-form recursion of miso_kalman on
many independent rows at once. Rows have different active input sets; each
set is padded to a common width and the padded coordinates carry zero
regressors and zero covariance, so they stay exactly zero forever.

Arrays are laid out (stage, row, tap) so a whole lattice can update all its
stages in one call.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.common.errors import ShapeError, StabilityError
from src.kalman.miso_kalman import RESET_FACTOR

logger = logging.getLogger(__name__)


@dataclass
class RowLayout:
    """Padded active sets of a group of rows"""
    index: np.ndarray
    valid: np.ndarray
    conjugate: np.ndarray
    num_inputs: int

    @classmethod
    def from_support(cls, direct: np.ndarray, conjugate: Optional[np.ndarray] = None) -> "RowLayout":
        direct = np.asarray(direct, dtype=bool)
        num_rows, num_inputs = direct.shape
        entries = []
        for row in range(num_rows):
            taps = [(int(k), False) for k in np.flatnonzero(direct[row])]
            if conjugate is not None:
                taps += [(int(k), True) for k in np.flatnonzero(conjugate[row])]
            entries.append(taps)

        width = max(1, max(len(taps) for taps in entries))
        index = np.zeros((num_rows, width), dtype=np.intp)
        valid = np.zeros((num_rows, width), dtype=bool)
        conj = np.zeros((num_rows, width), dtype=bool)
        for row, taps in enumerate(entries):
            for p, (k, is_conj) in enumerate(taps):
                index[row, p] = k
                valid[row, p] = True
                conj[row, p] = is_conj
        return cls(index=index, valid=valid, conjugate=conj, num_inputs=num_inputs)

    @property
    def num_rows(self) -> int:
        return self.index.shape[0]

    @property
    def width(self) -> int:
        return self.index.shape[1]

    def gather(self, source: np.ndarray) -> np.ndarray:
        """Regressors (..., rows, width) from a source vector (..., inputs)"""
        values = source[..., self.index]
        values = np.where(self.conjugate, np.conj(values), values)
        return np.where(self.valid, values, 0)

    def scatter(self, taps: np.ndarray, conjugate: bool = False) -> np.ndarray:
        """Dense (..., rows, inputs) matrix of the direct or conjugate taps"""
        dense = np.zeros(taps.shape[:-1] + (self.num_inputs,), dtype=taps.dtype)
        rows, positions = np.nonzero(self.valid & (self.conjugate == conjugate))
        dense[..., rows, self.index[rows, positions]] = taps[..., rows, positions]
        return dense

    def align_to(self, other: "RowLayout") -> np.ndarray:
        """Position of each of our direct taps inside other's rows, -1 if absent"""
        positions = np.full(self.index.shape, -1, dtype=np.intp)
        for row in range(self.num_rows):
            lookup = {int(other.index[row, q]): q
                      for q in range(other.width)
                      if other.valid[row, q] and not other.conjugate[row, q]}
            for p in range(self.width):
                if self.valid[row, p] and not self.conjugate[row, p]:
                    positions[row, p] = lookup.get(int(self.index[row, p]), -1)
        return positions


class MisoBank:
    """Coefficients and inverse Hessians of (batch, rows) independent MISO filters.

    The transition is a*I and the process noise gamma*I for every row.
    """

    def __init__(self, layout: RowLayout, batch: int, sigma0: float = 1.0,
                 gamma: float = 1e-6, a: float = 0.9999):
        self.layout = layout
        self.batch = batch
        self.sigma0 = float(sigma0)
        self.gamma = float(gamma)
        self.a = float(a)

        rows, width = layout.index.shape
        self._eye = (np.eye(width, dtype=bool)[None, :, :] & layout.valid[:, :, None]).astype(np.complex128)
        self.coefficients = np.zeros((batch, rows, width), dtype=np.complex128)
        self.inv_hessian = np.broadcast_to(sigma0 * self._eye, (batch, rows, width, width)).copy()
        self.gain = np.zeros((batch, rows, width), dtype=np.complex128)
        self.reset_count = 0

    def predict(self, regressors: np.ndarray, stages=slice(None)) -> np.ndarray:
        """Row outputs h^H x for the selected stages"""
        return np.einsum("...p,...p->...", self.coefficients[stages].conj(), regressors)

    def update(self, regressors: np.ndarray, desired: np.ndarray, xi2: float,
               stages=slice(None)) -> Tuple[np.ndarray, np.ndarray]:
        """Kalman update of the selected stages; returns (prior errors, gains)"""
        coefficients = self.coefficients[stages]
        omega = self.inv_hessian[stages]
        if regressors.shape != coefficients.shape:
            raise ShapeError(f"regressors {regressors.shape} do not match bank {coefficients.shape}")

        omega_x = np.einsum("...pq,...q->...p", omega, regressors)
        eta2 = xi2 + np.einsum("...p,...p->...", regressors.conj(), omega_x).real
        if not np.all(np.isfinite(eta2)) or np.any(eta2 <= 0):
            raise StabilityError(f"innovation variance left the positive range (min {np.min(eta2)})")

        gain = self.a * omega_x / eta2[..., None]
        errors = desired - np.einsum("...p,...p->...", coefficients.conj(), regressors)
        coefficients = self.a * coefficients + gain * errors.conj()[..., None]

        omega = (self.a * self.a) * omega + self.gamma * self._eye \
            - eta2[..., None, None] * gain[..., :, None] * gain.conj()[..., None, :]
        omega = 0.5 * (omega + np.swapaxes(omega, -1, -2).conj())
        self._guard(omega)

        if not np.all(np.isfinite(coefficients)):
            raise StabilityError("coefficients became non-finite")
        self.coefficients[stages] = coefficients
        self.inv_hessian[stages] = omega
        self.gain[stages] = gain
        return errors, gain

    def apply_gain(self, gain: np.ndarray, errors: np.ndarray, stages=slice(None)):
        """Coefficient step with an externally computed gain; covariances untouched"""
        coefficients = self.a * self.coefficients[stages] + gain * errors.conj()[..., None]
        if not np.all(np.isfinite(coefficients)):
            raise StabilityError("coefficients became non-finite")
        self.coefficients[stages] = coefficients
        self.gain[stages] = gain

    def _guard(self, omega: np.ndarray):
        diagonal = np.einsum("...pp->...p", omega).real
        bad = np.any(diagonal < 0, axis=-1) | np.any(diagonal > RESET_FACTOR * self.sigma0, axis=-1)
        if np.any(bad):
            omega[bad] = self.sigma0 * np.broadcast_to(self._eye, omega.shape)[bad]
            self.reset_count += int(bad.sum())
            logger.warning("Reset inverse Hessian of %d rows after numerical drift", int(bad.sum()))

    def copy(self) -> "MisoBank":
        clone = MisoBank.__new__(MisoBank)
        clone.__dict__.update(self.__dict__)
        for name in ("coefficients", "inv_hessian", "gain"):
            setattr(clone, name, getattr(self, name).copy())
        return clone

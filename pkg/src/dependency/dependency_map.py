"""
Dependency Map

Boolean N_s x N_s matrix whose row k_o lists the excitation bins feeding
output bin k_o. An optional second matrix marks bins that feed the output
through their complex conjugate (content folded in from the negative half
of the spectrum).
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from src.common.errors import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class DependencyMap:
    """Activation sets of every output bin"""
    matrix: np.ndarray
    conjugate: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ShapeError(f"dependency map must be square, got shape {self.matrix.shape}")
        if self.matrix.dtype != np.bool_:
            if not np.all(np.isin(self.matrix, (0, 1))):
                raise ConfigurationError("dependency map entries must be boolean")
            self.matrix = self.matrix.astype(bool)
        if self.conjugate is not None:
            self.conjugate = np.asarray(self.conjugate, dtype=bool)
            if self.conjugate.shape != self.matrix.shape:
                raise ShapeError(
                    f"conjugate map shape {self.conjugate.shape} differs from {self.matrix.shape}"
                )
            if not self.conjugate.any():
                self.conjugate = None

    @classmethod
    def diagonal(cls, num_bins: int) -> "DependencyMap":
        return cls(np.eye(num_bins, dtype=bool))

    @classmethod
    def full(cls, num_bins: int) -> "DependencyMap":
        return cls(np.ones((num_bins, num_bins), dtype=bool))

    @property
    def num_bins(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_entries(self) -> int:
        total = int(self.matrix.sum())
        if self.conjugate is not None:
            total += int(self.conjugate.sum())
        return total

    def conjugate_or_empty(self) -> np.ndarray:
        if self.conjugate is None:
            return np.zeros_like(self.matrix)
        return self.conjugate

    def empty_rows(self) -> List[int]:
        """Output bins with no active input at all"""
        active = self.matrix | self.conjugate_or_empty()
        return [int(k) for k in np.flatnonzero(~active.any(axis=1))]

    def row_density(self) -> np.ndarray:
        return self.matrix.mean(axis=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DependencyMap):
            return NotImplemented
        return (self.matrix.shape == other.matrix.shape
                and np.array_equal(self.matrix, other.matrix)
                and np.array_equal(self.conjugate_or_empty(), other.conjugate_or_empty()))

    def to_csv(self, path: Union[str, Path], conjugate: bool = False):
        matrix = self.conjugate_or_empty() if conjugate else self.matrix
        write_matrix_csv(path, matrix.astype(int))


def write_matrix_csv(path: Union[str, Path], matrix: np.ndarray):
    """Row-major numeric matrix, output bins as rows"""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["output_bin"] + [f"in_{k}" for k in range(matrix.shape[1])])
        for k_o, row in enumerate(matrix):
            writer.writerow([k_o] + [repr(float(v)) if matrix.dtype.kind == "f" else int(v) for v in row])

"""
Identification quality metrics

Modeling error in dB, echo return loss enhancement, and the report written at
the end of an identification run.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

from src.common.errors import ShapeError, UndefinedMetricError

logger = logging.getLogger(__name__)


def _energies(e: np.ndarray, y: np.ndarray):
    e = np.asarray(e)
    y = np.asarray(y)
    if e.shape != y.shape:
        raise ShapeError(f"error and reference lengths differ: {e.shape} vs {y.shape}")
    reference = float(np.sum(np.abs(y) ** 2))
    if reference == 0.0:
        raise UndefinedMetricError("reference signal has zero energy")
    return float(np.sum(np.abs(e) ** 2)), reference


def modeling_error_db(e: np.ndarray, y: np.ndarray) -> float:
    """
    10*log10(sum|e|^2 / sum|y|^2).

    Returns -inf when e is identically zero.
    """
    residual, reference = _energies(e, y)
    if residual == 0.0:
        return float("-inf")
    return 10.0 * float(np.log10(residual / reference))


def erle(e: np.ndarray, y: np.ndarray) -> float:
    return -modeling_error_db(e, y)


@dataclass
class ErrorReport:
    """Result of one evaluation; erle_db is always -delta_db"""
    delta_db: float
    erle_db: float
    frame_residual_energies: np.ndarray = field(default_factory=lambda: np.zeros(0))
    evaluated_samples: int = 0
    skipped_samples: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "delta_db": _json_float(self.delta_db),
            "erle_db": _json_float(self.erle_db),
            "evaluated_samples": self.evaluated_samples,
            "skipped_samples": self.skipped_samples,
            "num_frames": int(len(self.frame_residual_energies)),
        }

    def write_json(self, path: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
        payload = {"report": self.to_dict()}
        if extra:
            payload.update(extra)
        path = Path(path)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def write_trace_csv(self, path: Path) -> Path:
        """Per-frame residual energy trace"""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["frame", "residual_energy"])
            for index, value in enumerate(self.frame_residual_energies):
                writer.writerow([index, repr(float(value))])
        return path


def _json_float(value: float):
    # JSON has no infinity; an exact model is reported as a string sentinel.
    if np.isinf(value):
        return "-inf" if value < 0 else "inf"
    return float(value)


def evaluate(e: np.ndarray, y: np.ndarray, skip_fraction: float = 0.25,
             frame_energies: Optional[Sequence[float]] = None) -> ErrorReport:
    """Modeling error over the samples after the convergence period"""
    if not 0.0 <= skip_fraction < 1.0:
        raise ShapeError(f"skip_fraction must lie in [0, 1), got {skip_fraction}")
    e = np.asarray(e)
    y = np.asarray(y)
    if e.shape != y.shape:
        raise ShapeError(f"error and reference lengths differ: {e.shape} vs {y.shape}")

    start = int(np.floor(skip_fraction * len(y)))
    delta = modeling_error_db(e[start:], y[start:])
    energies = np.zeros(0) if frame_energies is None else np.asarray(frame_energies, dtype=np.float64)
    report = ErrorReport(
        delta_db=delta,
        erle_db=-delta,
        frame_residual_energies=energies,
        evaluated_samples=len(y) - start,
        skipped_samples=start,
    )
    logger.info("Modeling error %.2f dB over %d samples (skipped %d)", delta, len(y) - start, start)
    return report

"""
Identification pipeline

analyze -> (analyticity) -> dependency detection every R frames ->
lattice per frame -> residual synthesis -> metrics
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, List, Optional

import numpy as np

from src.common.errors import ConfigurationError, PipelineError, SubbandIdError
from src.config.settings import RunConfig
from src.dependency.coherence import coherence_detector, lagged_coherence, quiet_bins
from src.dependency.dependency_map import DependencyMap
from src.dependency.detector_network import DetectorNetwork, load_detector, predict_map
from src.dependency.features import build_features
from src.filterbank.subband_transform import (
    analyze_array,
    enforce_analyticity_array,
    make_window_pair,
    synthesize_array,
)
from src.lattice.lattice_filter import LatticeFilter, init_lattice
from src.metrics.error_report import ErrorReport, evaluate

logger = logging.getLogger(__name__)


@dataclass
class IdentificationResult:
    report: ErrorReport
    residual: np.ndarray
    reference: np.ndarray
    final_map: DependencyMap
    # Fraction of frames during which each entry was in the active map
    mean_map: np.ndarray
    # Mean of the detector outputs over all refreshes (the start map if none ran)
    detected_map: np.ndarray
    frame_energies: np.ndarray
    # (frames, M) joint-process error energy after each lattice stage
    stage_energies: np.ndarray
    map_refreshes: int = 0
    promotions: int = 0
    refresh_frames: List[int] = field(default_factory=list)


class IdentificationRunner:
    """Runs one configured identification over an excitation/measurement pair"""

    def __init__(self, config: RunConfig, detector: Optional[DetectorNetwork] = None):
        self.config = config
        self.filterbank = config.filterbank_config()
        self.windows = make_window_pair(self.filterbank)
        self.detector = detector
        if config.detector == "network" and detector is None:
            self.detector = self._load_detector()

    def _load_detector(self) -> DetectorNetwork:
        if not self.config.detector_checkpoint:
            raise ConfigurationError("detector 'network' needs detector_checkpoint")
        net = load_detector(self.config.detector_checkpoint)
        if (net.num_bins, net.history) != (self.config.num_bins, self.config.history):
            raise ConfigurationError(
                f"checkpoint geometry (N_s={net.num_bins}, L={net.history}) does not match "
                f"run (N_s={self.config.num_bins}, L={self.config.history})"
            )
        net.eval()
        return net

    def _stage(self, module: str, frame_index: int, step: Callable):
        try:
            return step()
        except (SubbandIdError, ArithmeticError) as exc:
            if isinstance(exc, (PipelineError, ConfigurationError)):
                raise
            raise PipelineError(module, frame_index, exc) from exc

    def _to_subbands(self, signal: np.ndarray) -> np.ndarray:
        spectra = analyze_array(signal, self.filterbank, self.windows)
        if self.config.enforce_analyticity:
            spectra = enforce_analyticity_array(spectra)
        return spectra

    def detect(self, x_window: np.ndarray, y_window: np.ndarray) -> DependencyMap:
        """Dependency map from the most recent excitation/measurement frames"""
        cfg = self.config
        if cfg.detector == "diagonal":
            return DependencyMap.diagonal(cfg.num_bins)
        if cfg.detector == "coherence":
            return coherence_detector(x_window, y_window, cfg.coherence_threshold, cfg.coherence_lags,
                                      conjugate=cfg.widely_linear, min_energy_db=cfg.coherence_min_energy_db)

        features = build_features(x_window[-cfg.history:], y_window[-cfg.history:], history=cfg.history)
        detected = predict_map(self.detector, features, cfg.threshold)
        if not cfg.widely_linear:
            return detected
        # The network only sees the direct pathway; the conjugate one comes from pseudo-coherence.
        _, pseudo = lagged_coherence(x_window, y_window, cfg.coherence_lags)
        pseudo[:, quiet_bins(x_window, cfg.coherence_min_energy_db)] = 0.0
        return DependencyMap(detected.matrix, pseudo > cfg.coherence_threshold)

    def _is_refresh_frame(self, frame_index: int) -> bool:
        cfg = self.config
        if cfg.detector == "diagonal":
            return False
        seen = frame_index + 1
        if seen < cfg.min_detection_frames:
            return False
        return (seen - cfg.min_detection_frames) % cfg.refresh_period == 0

    def run(self, excitation: np.ndarray, measurement: np.ndarray) -> IdentificationResult:
        cfg = self.config
        excitation = np.asarray(excitation, dtype=np.float64)
        measurement = np.asarray(measurement, dtype=np.float64)
        if excitation.shape != measurement.shape:
            raise ConfigurationError(
                f"excitation and measurement lengths differ: {excitation.shape} vs {measurement.shape}"
            )

        x_frames = self._stage("filterbank", 0, lambda: self._to_subbands(excitation))
        d_frames = self._stage("filterbank", 0, lambda: self._to_subbands(measurement))
        num_frames = x_frames.shape[0]
        logger.info("Identifying %s: %d frames, N_s=%d, M=%d, detector=%s",
                    cfg.preset, num_frames, cfg.num_bins, cfg.num_stages, cfg.detector)

        start_map = DependencyMap.diagonal(cfg.num_bins)
        lattice: LatticeFilter = init_lattice(cfg.lattice_config(), start_map)
        window = max(cfg.coherence_history, cfg.history)
        x_recent: Deque[np.ndarray] = deque(maxlen=window)
        y_recent: Deque[np.ndarray] = deque(maxlen=window)

        residual_frames = np.zeros_like(x_frames)
        frame_energies = np.zeros(num_frames)
        stage_energies = np.zeros((num_frames, cfg.num_stages))
        map_counts = np.zeros((cfg.num_bins, cfg.num_bins))
        detected_counts = np.zeros((cfg.num_bins, cfg.num_bins))
        refresh_frames: List[int] = []

        for l in range(num_frames):
            x_recent.append(x_frames[l])
            y_recent.append(d_frames[l])
            if self._is_refresh_frame(l):
                x_window = np.stack(x_recent)
                y_window = np.stack(y_recent)
                new_map = self._stage("dependency", l, lambda: self.detect(x_window, y_window))
                lattice.apply_map_change(new_map)
                detected_counts += new_map.matrix
                refresh_frames.append(l)
                logger.debug("Frame %d: detected map with %d entries", l, new_map.num_entries)

            result = self._stage("lattice", l, lambda: lattice.process_frame(x_frames[l], d_frames[l]))
            if result.promoted:
                logger.info("Frame %d: map with %d entries now active",
                            l, lattice.dependency_map.num_entries)
            residual_frames[l] = result.residual
            frame_energies[l] = float(np.sum(np.abs(result.residual) ** 2))
            stage_energies[l] = result.per_stage_error_energy
            map_counts += lattice.dependency_map.matrix

        residual = self._stage("filterbank", num_frames - 1,
                               lambda: synthesize_array(residual_frames, self.filterbank, self.windows))
        # Samples past the last hop are only partly covered by the overlap-add.
        covered = num_frames * cfg.hop_size
        residual = residual[:covered]
        reference = measurement[:covered]
        report = self._stage("metrics", num_frames - 1,
                             lambda: evaluate(residual, reference, cfg.eval_skip_fraction, frame_energies))

        if refresh_frames:
            detected_map = detected_counts / len(refresh_frames)
        else:
            detected_map = start_map.matrix.astype(float)
        logger.info("Finished %s: delta %.2f dB, %d map refreshes, %d promotions",
                    cfg.preset, report.delta_db, len(refresh_frames), lattice.promotions)
        return IdentificationResult(
            report=report,
            residual=residual,
            reference=reference,
            final_map=lattice.dependency_map,
            mean_map=map_counts / num_frames,
            detected_map=detected_map,
            frame_energies=frame_energies,
            stage_energies=stage_energies,
            map_refreshes=len(refresh_frames),
            promotions=lattice.promotions,
            refresh_frames=refresh_frames,
        )

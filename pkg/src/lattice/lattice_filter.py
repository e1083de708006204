"""
Lattice Kalman Filter

Multistage subband identification: M cascaded single-tap stages exchange
forward errors f_m and backward errors b_m through reflection matrices
kappa_f and kappa_b, and each stage regresses the remaining residual e_m
onto b_m (joint-process estimation). Every coefficient row is a MISO Kalman
filter restricted to the active dependency map.

A map change does not touch the running filter directly. It starts a
shadow filter with the new map that runs on the same frames; the shadow
replaces the primary once it has proven a lower smoothed residual while
the measurement noise is stationary.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from src.common.errors import ConfigurationError, ShapeError
from src.dependency.dependency_map import DependencyMap
from src.kalman.miso_bank import MisoBank, RowLayout

logger = logging.getLogger(__name__)


class GainPairing(str, Enum):
    """Which gain drives the forward reflection update.

    AS_PRINTED reuses the joint-process gain (computed from b_{m,l}) for
    kappa_f; CONVENTIONAL gives kappa_f its own covariance driven by the
    regressor it actually predicts from, b_{m,l-1}.
    """
    AS_PRINTED = "as_printed"
    CONVENTIONAL = "conventional"


@dataclass(frozen=True)
class LatticeConfig:
    """Stage count and Kalman scalars shared by every row"""
    num_bins: int
    num_stages: int = 15
    transition: float = 0.9999
    process_noise: float = 1e-6
    sigma0: float = 1.0
    xi_floor: float = 1e-10
    gain_pairing: GainPairing = GainPairing.AS_PRINTED
    smoothing: float = 0.99
    shadow_window: int = 100
    stationarity_tolerance: float = 0.1

    def __post_init__(self):
        if self.num_bins < 1:
            raise ConfigurationError(f"num_bins must be positive, got {self.num_bins}")
        if self.num_stages < 1:
            raise ConfigurationError(f"lattice needs at least one stage, got {self.num_stages}")
        if not 0 < self.transition <= 1:
            raise ConfigurationError(f"transition must lie in (0, 1], got {self.transition}")
        if self.process_noise < 0 or self.sigma0 <= 0 or self.xi_floor <= 0:
            raise ConfigurationError("process_noise must be >= 0, sigma0 and xi_floor > 0")
        if not 0 <= self.smoothing < 1:
            raise ConfigurationError(f"smoothing must lie in [0, 1), got {self.smoothing}")
        if self.shadow_window < 1:
            raise ConfigurationError("shadow_window must be at least one frame")
        object.__setattr__(self, "gain_pairing", GainPairing(self.gain_pairing))


@dataclass
class FrameResult:
    """Output of one lattice pass"""
    residual: np.ndarray
    per_stage_error_energy: np.ndarray
    xi2: float
    shadow_active: bool = False
    promoted: bool = False


def estimate_measurement_noise(stage_errors: np.ndarray, floor: float = 1e-10) -> float:
    """Mean over stages of the squared norm of each stage's posterior error e_{m+1}"""
    errors = np.asarray(stage_errors)
    if errors.ndim == 1:
        errors = errors[None, :]
    energy = float(np.sum(np.abs(errors) ** 2)) / errors.shape[0]
    return max(energy, floor)


@dataclass
class _StageSignals:
    """Regressors and targets recorded during the forward pass"""
    forward_regressors: List[np.ndarray] = field(default_factory=list)
    backward_regressors: List[np.ndarray] = field(default_factory=list)
    joint_regressors: List[np.ndarray] = field(default_factory=list)
    forward_targets: List[np.ndarray] = field(default_factory=list)
    backward_targets: List[np.ndarray] = field(default_factory=list)
    joint_targets: List[np.ndarray] = field(default_factory=list)
    forward_errors: List[np.ndarray] = field(default_factory=list)
    backward_inputs: List[np.ndarray] = field(default_factory=list)

    def stacked(self, name: str) -> np.ndarray:
        return np.stack(getattr(self, name))


class _StageBanks:
    """All stages' coefficient banks for one dependency map"""

    def __init__(self, config: LatticeConfig, dependency_map: DependencyMap):
        self.config = config
        n_s, m = config.num_bins, config.num_stages
        scalars = dict(sigma0=config.sigma0, gamma=config.process_noise, a=config.transition)

        # Every excitation bin also predicts itself.
        prediction_support = dependency_map.matrix | np.eye(n_s, dtype=bool)
        self.prediction_layout = RowLayout.from_support(prediction_support)
        self.joint_layout = RowLayout.from_support(dependency_map.matrix, dependency_map.conjugate)

        self.forward = MisoBank(self.prediction_layout, m, **scalars)
        self.backward = MisoBank(self.prediction_layout, m, **scalars)
        self.joint = MisoBank(self.joint_layout, m, **scalars)
        self.delayed_backward = np.zeros((m, n_s), dtype=np.complex128)
        self._alignment = self.prediction_layout.align_to(self.joint_layout)

    def propagate(self, stage: int, f: np.ndarray, b: np.ndarray, e: np.ndarray, signals: _StageSignals):
        """Stage outputs from prior coefficients"""
        sl = slice(stage, stage + 1)
        b_delayed = self.delayed_backward[stage]
        forward_regressors = self.prediction_layout.gather(b_delayed)
        backward_regressors = self.prediction_layout.gather(f)
        joint_regressors = self.joint_layout.gather(b)

        f_out = f - self.forward.predict(forward_regressors[None], sl)[0]
        b_out = b_delayed - self.backward.predict(backward_regressors[None], sl)[0]
        e_out = e - self.joint.predict(joint_regressors[None], sl)[0]

        signals.forward_regressors.append(forward_regressors)
        signals.backward_regressors.append(backward_regressors)
        signals.joint_regressors.append(joint_regressors)
        signals.forward_targets.append(f)
        signals.backward_targets.append(b_delayed)
        signals.joint_targets.append(e)
        signals.forward_errors.append(f_out)
        signals.backward_inputs.append(b)
        return f_out, b_out, e_out

    def adapt(self, signals: _StageSignals, xi2: float, stages: slice):
        """Kalman updates of every bank for the stages recorded in signals"""
        self.backward.update(signals.stacked("backward_regressors"),
                             signals.stacked("backward_targets"), xi2, stages)
        _, joint_gain = self.joint.update(signals.stacked("joint_regressors"),
                                          signals.stacked("joint_targets"), xi2, stages)

        if self.config.gain_pairing is GainPairing.CONVENTIONAL:
            self.forward.update(signals.stacked("forward_regressors"),
                                signals.stacked("forward_targets"), xi2, stages)
        else:
            positions = np.broadcast_to(np.maximum(self._alignment, 0),
                                        joint_gain.shape[:-1] + self._alignment.shape[-1:])
            aligned = np.take_along_axis(joint_gain, positions, axis=-1)
            forward_gain = np.where(self._alignment >= 0, aligned, 0)
            self.forward.apply_gain(forward_gain, signals.stacked("forward_errors"), stages)

        self.delayed_backward[stages] = signals.stacked("backward_inputs")

    def copy(self) -> "_StageBanks":
        clone = _StageBanks.__new__(_StageBanks)
        clone.__dict__.update(self.__dict__)
        clone.forward = self.forward.copy()
        clone.backward = self.backward.copy()
        clone.joint = self.joint.copy()
        clone.delayed_backward = self.delayed_backward.copy()
        return clone


class LatticeStage:
    """View of stage m of a lattice filter"""

    def __init__(self, owner: "LatticeFilter", index: int):
        self._owner = owner
        self.index = index

    @property
    def _banks(self) -> _StageBanks:
        return self._owner._banks

    @property
    def kappa_f(self) -> np.ndarray:
        """Dense forward reflection matrix; f_{m+1} = f_m - kappa_f^H b_{m,l-1}"""
        banks = self._banks
        return banks.prediction_layout.scatter(banks.forward.coefficients[self.index]).T

    @property
    def kappa_b(self) -> np.ndarray:
        banks = self._banks
        return banks.prediction_layout.scatter(banks.backward.coefficients[self.index]).T

    @property
    def H_joint(self) -> np.ndarray:
        banks = self._banks
        return banks.joint_layout.scatter(banks.joint.coefficients[self.index]).T

    @property
    def H_conjugate(self) -> np.ndarray:
        """Taps applied to conj(b_m); zero without a conjugate map"""
        banks = self._banks
        return banks.joint_layout.scatter(banks.joint.coefficients[self.index], conjugate=True).T

    @property
    def inv_hessian_f(self) -> np.ndarray:
        """Per-row inverse Hessians for the regressor f_m"""
        return self._banks.backward.inv_hessian[self.index]

    @property
    def inv_hessian_b(self) -> np.ndarray:
        """Per-row inverse Hessians for the regressor b_m"""
        return self._banks.joint.inv_hessian[self.index]

    @property
    def inv_hessian_delayed(self) -> np.ndarray:
        """Per-row inverse Hessians for b_{m,l-1}; only evolves under conventional pairing"""
        return self._banks.forward.inv_hessian[self.index]

    @property
    def gain_f(self) -> np.ndarray:
        return self._banks.backward.gain[self.index]

    @property
    def gain_b(self) -> np.ndarray:
        return self._banks.joint.gain[self.index]

    @property
    def delayed_backward(self) -> np.ndarray:
        return self._banks.delayed_backward[self.index]

    def stage_update(self, f_in: np.ndarray, b_in: np.ndarray, e_in: np.ndarray, xi2: float):
        """Propagate and adapt this stage alone; b_{m,l-1} comes from the stage's delay buffer"""
        n_s = self._owner.config.num_bins
        vectors = [np.asarray(v, dtype=np.complex128) for v in (f_in, b_in, e_in)]
        for v in vectors:
            if v.shape != (n_s,):
                raise ShapeError(f"stage input shape {v.shape} does not match ({n_s},)")
        signals = _StageSignals()
        outputs = self._banks.propagate(self.index, *vectors, signals)
        self._banks.adapt(signals, max(xi2, self._owner.config.xi_floor), slice(self.index, self.index + 1))
        return outputs


class LatticeFilter:
    """Primary lattice plus an optional shadow running a pending map"""

    def __init__(self, config: LatticeConfig, dependency_map: DependencyMap):
        if dependency_map.num_bins != config.num_bins:
            raise ConfigurationError(
                f"dependency map covers {dependency_map.num_bins} bins, lattice expects {config.num_bins}"
            )
        empty = dependency_map.empty_rows()
        if empty:
            logger.warning("Dependency map leaves %d output bins without inputs", len(empty))

        self.config = config
        self.dependency_map = dependency_map
        self._banks = _StageBanks(config, dependency_map)
        self.shadow: Optional[LatticeFilter] = None
        self.smoothed_residual: Optional[float] = None
        self.promotions = 0
        self._shadow_age = 0
        self._smoothed_xi2: Optional[float] = None
        self._xi2_history: deque = deque(maxlen=config.shadow_window + 1)

    @property
    def noise_estimate(self) -> Optional[float]:
        """Smoothed xi^2, None before the first frame"""
        return self._smoothed_xi2

    @property
    def stages(self) -> List[LatticeStage]:
        return [LatticeStage(self, m) for m in range(self.config.num_stages)]

    def estimate_measurement_noise(self, stage_errors: Sequence[np.ndarray]) -> float:
        return estimate_measurement_noise(np.asarray(stage_errors), self.config.xi_floor)

    def _check_frame(self, frame) -> np.ndarray:
        values = getattr(frame, "bins", frame)
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != (self.config.num_bins,):
            raise ShapeError(f"frame shape {values.shape} does not match ({self.config.num_bins},)")
        return values

    def _step(self, x: np.ndarray, d: np.ndarray) -> FrameResult:
        signals = _StageSignals()
        f, b, e = x, x, d
        stage_errors = []
        for m in range(self.config.num_stages):
            f, b, e = self._banks.propagate(m, f, b, e, signals)
            stage_errors.append(e)

        stage_errors = np.stack(stage_errors)
        xi2 = self.estimate_measurement_noise(stage_errors)
        self._banks.adapt(signals, xi2, slice(None))

        residual_energy = float(np.sum(np.abs(e) ** 2))
        if self.smoothed_residual is None:
            self.smoothed_residual = residual_energy
        else:
            lam = self.config.smoothing
            self.smoothed_residual = lam * self.smoothed_residual + (1 - lam) * residual_energy

        return FrameResult(
            residual=e,
            per_stage_error_energy=np.sum(np.abs(stage_errors) ** 2, axis=1),
            xi2=xi2,
        )

    def process_frame(self, x_frame, d_frame) -> FrameResult:
        """Run every stage on one excitation/measurement frame pair"""
        x = self._check_frame(x_frame)
        d = self._check_frame(d_frame)
        result = self._step(x, d)
        self._track_noise(result.xi2)

        if self.shadow is not None:
            self.shadow._step(x, d)
            self._shadow_age += 1
            result.shadow_active = True
            if self._shadow_wins():
                self._promote_shadow()
                result.promoted = True
        return result

    def _track_noise(self, xi2: float):
        lam = self.config.smoothing
        if self._smoothed_xi2 is None:
            self._smoothed_xi2 = xi2
        else:
            self._smoothed_xi2 = lam * self._smoothed_xi2 + (1 - lam) * xi2
        self._xi2_history.append(self._smoothed_xi2)

    def noise_is_stationary(self) -> bool:
        """Smoothed xi^2 moved less than the tolerance over the last window"""
        if len(self._xi2_history) < self._xi2_history.maxlen:
            return False
        oldest, newest = self._xi2_history[0], self._xi2_history[-1]
        return abs(newest - oldest) <= self.config.stationarity_tolerance * oldest

    def _shadow_wins(self) -> bool:
        return (self._shadow_age >= self.config.shadow_window
                and self.noise_is_stationary()
                and self.shadow.smoothed_residual < self.smoothed_residual)

    def _promote_shadow(self):
        shadow = self.shadow
        logger.info("Promoting shadow filter after %d frames (smoothed residual %.3e < %.3e)",
                    self._shadow_age, shadow.smoothed_residual, self.smoothed_residual)
        self._banks = shadow._banks
        self.dependency_map = shadow.dependency_map
        self.smoothed_residual = shadow.smoothed_residual
        self.shadow = None
        self._shadow_age = 0
        self.promotions += 1

    def apply_map_change(self, new_map: DependencyMap) -> "LatticeFilter":
        """Start (or restart) a shadow filter for a changed map"""
        if new_map.num_bins != self.config.num_bins:
            raise ShapeError(f"new map covers {new_map.num_bins} bins, expected {self.config.num_bins}")
        if new_map == self.dependency_map:
            return self
        if self.shadow is not None and new_map == self.shadow.dependency_map:
            return self

        shadow = LatticeFilter(self.config, new_map)
        shadow.smoothed_residual = self.smoothed_residual
        self.shadow = shadow
        self._shadow_age = 0
        logger.info("Spawned shadow filter with %d map entries (active map has %d)",
                    new_map.num_entries, self.dependency_map.num_entries)
        return self


def init_lattice(config: LatticeConfig, dependency_map: DependencyMap) -> LatticeFilter:
    """Zero coefficients, identity covariances, empty delay buffers"""
    if not isinstance(dependency_map, DependencyMap):
        dependency_map = DependencyMap(np.asarray(dependency_map))
    if dependency_map.matrix.shape != (config.num_bins, config.num_bins):
        raise ConfigurationError(
            f"map shape {dependency_map.matrix.shape} does not match ({config.num_bins}, {config.num_bins})"
        )
    return LatticeFilter(config, dependency_map)

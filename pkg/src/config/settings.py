"""
Subband SysID Configuration Settings

Application settings per deployment environment, plus the run configuration
consumed by the CLI. Run configuration sources, strongest first:

    CLI overrides > TOML config file > SUBBANDID_RUN_* environment
    > preset file (config/<preset>.toml) > field defaults
"""

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Union

from pydantic import ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.common.errors import ConfigurationError
from src.dependency.coherence import MIN_FRAMES as COHERENCE_MIN_FRAMES
from src.dependency.training import TrainingConfig
from src.filterbank.subband_transform import FilterbankConfig, WindowKind
from src.lattice.lattice_filter import GainPairing, LatticeConfig
from src.systems.bouc_wen import BoucWenParams

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parents[2] / "config"
PRESETS = ("modulation", "hysteresis", "identity", "wav-pair")


class AppSettings(BaseSettings):
    """Application configuration settings"""

    app_name: str = "Subband SysID"
    app_version: str = "1.0.0"
    environment: str = "development"
    debug: bool = False

    # Logging settings
    log_level: str = "INFO"
    log_dir: Optional[str] = None
    log_file: Optional[str] = None
    log_max_bytes: int = 10 * 1024 * 1024
    log_backup_count: int = 5

    model_config = SettingsConfigDict(
        env_prefix="SUBBANDID_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


class DevelopmentSettings(AppSettings):
    """Development environment specific settings"""
    environment: str = "development"
    debug: bool = True
    log_level: str = "DEBUG"


class ProductionSettings(AppSettings):
    """Production environment specific settings"""
    environment: str = "production"
    debug: bool = False
    log_level: str = "INFO"


class TestingSettings(AppSettings):
    """Testing environment specific settings"""
    environment: str = "testing"
    debug: bool = True
    log_level: str = "WARNING"
    log_backup_count: int = 1


def get_settings() -> AppSettings:
    """Get settings based on environment"""
    env = os.getenv("SUBBANDID_ENVIRONMENT", "development").lower()

    if env == "production":
        return ProductionSettings()
    elif env == "testing":
        return TestingSettings()
    else:
        return DevelopmentSettings()


def preset_defaults(preset: str) -> Dict[str, Any]:
    """Field defaults shipped for a preset in config/<preset>.toml"""
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset '{preset}', expected one of {PRESETS}")
    path = PRESET_DIR / f"{preset.replace('-', '_')}.toml"
    if not path.exists():
        return {}
    with path.open("rb") as handle:
        return tomllib.load(handle)


class RunConfig(BaseSettings):
    """Everything one identify / train-detector / simulate run needs"""

    preset: Literal["modulation", "hysteresis", "identity", "wav-pair"] = "modulation"
    seed: int = 0
    output_dir: str = "runs/latest"

    # Filterbank
    window_size: int = 64
    hop_size: int = 16
    num_bins: int = 32
    window_kind: WindowKind = WindowKind.SQRT_HANN
    enforce_analyticity: bool = True

    # Lattice
    num_stages: int = 15
    transition: float = 0.9999
    process_noise: float = 1e-6
    sigma0: float = 1.0
    xi_floor: float = 1e-10
    # Presets switch to CONVENTIONAL; see config/*.toml.
    gain_pairing: GainPairing = GainPairing.AS_PRINTED
    smoothing: float = 0.99
    shadow_window: int = 100
    stationarity_tolerance: float = 0.1

    # Dependency detection
    detector: Literal["network", "coherence", "diagonal"] = "coherence"
    detector_checkpoint: Optional[str] = None
    history: int = 16
    threshold: float = 0.5
    coherence_threshold: float = 0.05
    coherence_lags: int = 2
    coherence_history: int = 512
    # Excitation bins this far below the strongest one (dB) are never inputs.
    coherence_min_energy_db: Optional[float] = None
    min_detection_frames: int = 256
    refresh_period: int = 100
    widely_linear: bool = False

    # Excitation and systems
    fs: int = 16000
    duration_s: float = 4.0
    excitation_rms: float = 0.1
    cutoff_hz: Optional[float] = None
    noise_level: float = 1e-3
    bouc_wen_alpha: float = 0.3
    bouc_wen_beta: float = 1.0
    bouc_wen_zeta: float = 0.5
    bouc_wen_mu: float = 0.5
    rt60_ms: float = 200.0
    excitation_wav: Optional[str] = None
    measurement_wav: Optional[str] = None

    # Detector training
    train_examples: int = 5000
    train_epochs: int = TrainingConfig.epochs
    learning_rate: float = TrainingConfig.learning_rate
    batch_size: int = 64
    sparsity: float = 0.3
    train_noise_level: float = 0.01
    validation_fraction: float = 0.25

    # Evaluation
    eval_skip_fraction: float = 0.25

    model_config = SettingsConfigDict(
        env_prefix="SUBBANDID_RUN_",
        case_sensitive=False,
        extra="forbid",
    )

    @model_validator(mode="before")
    @classmethod
    def _fill_from_preset(cls, data: Any) -> Any:
        # Preset values only fill keys no other source supplied.
        if not isinstance(data, dict):
            return data
        preset = data.get("preset", "modulation")
        if preset not in PRESETS:
            return data
        merged = dict(preset_defaults(preset))
        merged.update(data)
        return merged

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        if self.window_size % self.hop_size != 0:
            raise ValueError(f"hop_size {self.hop_size} must divide window_size {self.window_size}")
        if self.num_bins != self.window_size // 2:
            raise ValueError(f"num_bins must be window_size/2 = {self.window_size // 2}, got {self.num_bins}")
        for name in ("threshold", "coherence_threshold", "sparsity"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 <= self.eval_skip_fraction < 1.0:
            raise ValueError(f"eval_skip_fraction must lie in [0, 1), got {self.eval_skip_fraction}")
        if self.coherence_min_energy_db is not None and self.coherence_min_energy_db > 0:
            raise ValueError(f"coherence_min_energy_db must be <= 0 dB, got {self.coherence_min_energy_db}")
        if self.history < 1 or self.refresh_period < 1 or self.coherence_lags < 1:
            raise ValueError("history, refresh_period and coherence_lags must be positive")
        if self.coherence_history < self.history:
            raise ValueError("coherence_history must cover at least one detector window")
        needs_coherence = self.detector == "coherence" or self.widely_linear
        if needs_coherence and min(self.min_detection_frames, self.coherence_history) < COHERENCE_MIN_FRAMES:
            raise ValueError(
                f"coherence detection needs min_detection_frames and coherence_history >= {COHERENCE_MIN_FRAMES}"
            )
        if self.detector == "network" and self.min_detection_frames < self.history:
            raise ValueError("min_detection_frames must cover one detector window")
        if self.preset == "wav-pair" and not (self.excitation_wav and self.measurement_wav):
            raise ValueError("preset wav-pair requires excitation_wav and measurement_wav")
        if self.cutoff_hz is not None and not 0 < self.cutoff_hz < self.fs / 2:
            raise ValueError(f"cutoff_hz {self.cutoff_hz} outside (0, {self.fs / 2})")
        # Surfaces window/hop incompatibilities with the chosen window kind.
        self.filterbank_config()
        self.lattice_config()
        return self

    def filterbank_config(self) -> FilterbankConfig:
        return FilterbankConfig(self.window_size, self.hop_size, self.num_bins, self.window_kind)

    def lattice_config(self) -> LatticeConfig:
        return LatticeConfig(
            num_bins=self.num_bins,
            num_stages=self.num_stages,
            transition=self.transition,
            process_noise=self.process_noise,
            sigma0=self.sigma0,
            xi_floor=self.xi_floor,
            gain_pairing=self.gain_pairing,
            smoothing=self.smoothing,
            shadow_window=self.shadow_window,
            stationarity_tolerance=self.stationarity_tolerance,
        )

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            learning_rate=self.learning_rate,
            epochs=self.train_epochs,
            batch_size=self.batch_size,
            sparsity=self.sparsity,
            noise_level=self.train_noise_level,
            validation_fraction=self.validation_fraction,
            seed=self.seed,
        )

    def bouc_wen_params(self) -> BoucWenParams:
        return BoucWenParams(self.bouc_wen_alpha, self.bouc_wen_beta, self.bouc_wen_zeta, self.bouc_wen_mu)

    def echo(self) -> Dict[str, Any]:
        """Resolved configuration for embedding in reports"""
        return self.model_dump(mode="json")


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Resolve a RunConfig from a TOML file and CLI overrides.

    Raises ConfigurationError for unreadable files, unknown keys and any
    validation failure.
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            with path.open("rb") as handle:
                values.update(tomllib.load(handle))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    if overrides:
        values.update(overrides)

    try:
        config = RunConfig(**values)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid run configuration: {exc}") from exc
    except ConfigurationError:
        raise
    logger.debug("Resolved run configuration for preset %s", config.preset)
    return config

"""
Scenario generation

Builds the excitation/measurement pair for a preset: synthetic systems
driven by seeded noise, or a recorded WAV pair.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.common.errors import ConfigurationError
from src.config.settings import RunConfig
from src.filterbank.wav_io import read_wav
from src.systems.bouc_wen import bouc_wen
from src.systems.excitation import add_sensor_noise, bandlimited_noise, white_noise
from src.systems.modulation import am_modulate
from src.systems.reverb import hysteresis_pipeline

logger = logging.getLogger(__name__)


@dataclass
class Scenario:
    """Time-domain signals of one identification run"""
    excitation: np.ndarray
    measurement: np.ndarray
    sample_rate: int
    # Bouc-Wen input/output before the channel, hysteresis preset only
    loop_input: Optional[np.ndarray] = None
    loop_output: Optional[np.ndarray] = None


def make_excitation(config: RunConfig, rng: np.random.Generator) -> np.ndarray:
    num_samples = int(round(config.duration_s * config.fs))
    if config.cutoff_hz is None:
        return white_noise(num_samples, rng, config.excitation_rms)
    return bandlimited_noise(num_samples, config.fs, config.cutoff_hz, rng, config.excitation_rms)


def _load_wav_pair(config: RunConfig) -> Scenario:
    excitation, fs_x = read_wav(config.excitation_wav)
    measurement, fs_d = read_wav(config.measurement_wav)
    if fs_x != fs_d:
        raise ConfigurationError(f"sample rates differ: excitation {fs_x} Hz, measurement {fs_d} Hz")
    length = min(len(excitation), len(measurement))
    if len(excitation) != len(measurement):
        logger.warning("WAV pair lengths differ (%d vs %d); using the first %d samples",
                       len(excitation), len(measurement), length)
    return Scenario(excitation[:length], measurement[:length], fs_x)


def build_scenario(config: RunConfig) -> Scenario:
    """Excitation and measurement for the configured preset.

    Every random draw comes from one generator seeded with config.seed, in a
    fixed order, so a seed reproduces the signals exactly.
    """
    if config.preset == "wav-pair":
        return _load_wav_pair(config)

    rng = np.random.default_rng(config.seed)
    excitation = make_excitation(config, rng)
    loop_input = loop_output = None

    if config.preset == "modulation":
        clean = am_modulate(excitation)
    elif config.preset == "hysteresis":
        params = config.bouc_wen_params()
        clean = hysteresis_pipeline(excitation, params, config.rt60_ms, config.fs, rng)
        loop_input = excitation
        loop_output = bouc_wen(excitation, params)
    elif config.preset == "identity":
        clean = excitation.copy()
    else:
        raise ConfigurationError(f"no generator for preset '{config.preset}'")

    measurement = add_sensor_noise(clean, config.noise_level, rng)
    logger.info("Built %s scenario: %d samples at %d Hz", config.preset, len(excitation), config.fs)
    return Scenario(excitation, measurement, config.fs, loop_input, loop_output)

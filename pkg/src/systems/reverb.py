"""
Linear acoustic channel

Exponentially decaying noise impulse responses with a prescribed RT60,
direct-form FIR filtering, and the Bouc-Wen + reverberation chain of the
hysteresis experiment.
"""

import logging

import numpy as np

from src.common.errors import ShapeError
from src.systems.bouc_wen import BoucWenParams, bouc_wen

logger = logging.getLogger(__name__)

# The IR runs to twice the RT60 so the decay curve is not truncated near -60 dB.
IR_LENGTH_FACTOR = 2.0


def synth_reverb_ir(rt60_ms: float, fs: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-energy noise IR whose energy falls 60 dB after rt60_ms"""
    if rt60_ms <= 0:
        raise ShapeError(f"rt60 must be positive, got {rt60_ms} ms")
    rt60 = rt60_ms / 1000.0
    length = max(1, int(round(IR_LENGTH_FACTOR * rt60 * fs)))
    t = np.arange(length) / fs
    # Amplitude decays 60 dB (a factor 1000) over rt60.
    envelope = 10.0 ** (-3.0 * t / rt60)
    ir = rng.standard_normal(length) * envelope
    return ir / np.linalg.norm(ir)


def energy_decay_curve_db(ir: np.ndarray) -> np.ndarray:
    """Schroeder backward-integrated energy decay, normalized to 0 dB"""
    energy = np.cumsum(np.asarray(ir, dtype=np.float64)[::-1] ** 2)[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy / energy[0])


def fir_filter(x: np.ndarray, ir: np.ndarray) -> np.ndarray:
    """Full-length linear convolution"""
    ir = np.asarray(ir, dtype=np.float64)
    if ir.size == 0:
        raise ShapeError("impulse response is empty")
    return np.convolve(np.asarray(x, dtype=np.float64), ir, mode="full")


def hysteresis_pipeline(x: np.ndarray, params: BoucWenParams, rt60_ms: float, fs: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Bouc-Wen followed by a reverberant channel, cut to the excitation length"""
    ir = synth_reverb_ir(rt60_ms, fs, rng)
    displaced = bouc_wen(x, params)
    measurement = fir_filter(displaced, ir)[:len(x)]
    logger.debug("Hysteresis pipeline: %d samples through a %d-tap channel", len(x), len(ir))
    return measurement

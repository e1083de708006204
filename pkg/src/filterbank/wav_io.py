"""
WAV and frame CSV I/O

Reads mono 16-bit PCM or 32-bit float WAV files as float64 sample arrays
and exports subband frames as long-format CSV.
"""

import csv
import logging
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import soundfile as sf

from src.common.errors import ConfigurationError, ShapeError
from src.filterbank.subband_transform import SubbandFrame

logger = logging.getLogger(__name__)

SUPPORTED_SUBTYPES = ("PCM_16", "FLOAT")

PathLike = Union[str, Path]


def read_wav(path: PathLike) -> Tuple[np.ndarray, int]:
    """Load a mono WAV file, returning (samples, sample_rate)"""
    info = sf.info(str(path))
    if info.channels != 1:
        raise ShapeError(f"{path}: expected mono audio, found {info.channels} channels")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise ConfigurationError(
            f"{path}: unsupported WAV subtype {info.subtype}, expected one of {SUPPORTED_SUBTYPES}"
        )
    samples, sample_rate = sf.read(str(path), dtype="float64", always_2d=False)
    logger.info("Loaded %s: %d samples at %d Hz (%s)", path, len(samples), sample_rate, info.subtype)
    return samples, sample_rate


def write_wav(path: PathLike, samples: np.ndarray, sample_rate: int, subtype: str = "FLOAT"):
    """Write a mono WAV file"""
    if subtype not in SUPPORTED_SUBTYPES:
        raise ConfigurationError(f"unsupported WAV subtype {subtype}")
    data = np.asarray(samples, dtype=np.float64)
    if data.ndim != 1:
        raise ShapeError(f"expected mono samples, got shape {data.shape}")
    sf.write(str(path), data, sample_rate, subtype=subtype)


def write_frames_csv(path: PathLike, frames: Sequence[SubbandFrame]):
    """One row per (block_index, bin) with real and imaginary parts"""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["block_index", "bin", "re", "im"])
        for frame in frames:
            for k, value in enumerate(np.asarray(frame.bins)):
                writer.writerow([frame.block_index, k, repr(float(value.real)), repr(float(value.imag))])

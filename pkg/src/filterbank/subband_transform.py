"""
Subband Analysis and Synthesis

Half-bin-shifted short-time transform between real sample streams and
complex subband frames. Only the N_w/2 positive-frequency bins are kept;
a real signal's half-shifted spectrum is conjugate symmetric about the
middle of the window, so the other half carries no extra information.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Sequence

import numpy as np
import scipy.fft
import scipy.signal

from src.common.errors import ConfigurationError, EmptyOutputError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)


class WindowKind(str, Enum):
    """Supported analysis/synthesis window families"""
    SQRT_HANN = "sqrt-hann"
    RECTANGULAR = "rectangular"


@dataclass(frozen=True)
class FilterbankConfig:
    """Transform geometry: window length, hop and retained bin count"""
    window_size: int = 64
    hop_size: int = 16
    num_bins: int = 32
    window_kind: WindowKind = WindowKind.SQRT_HANN

    def __post_init__(self):
        n_w, n_h = self.window_size, self.hop_size
        if n_w <= 0 or n_w % 2:
            raise ConfigurationError(f"window_size must be positive and even, got {n_w}")
        if n_h <= 0 or n_h > n_w:
            raise ConfigurationError(f"hop_size must lie in [1, {n_w}], got {n_h}")
        if n_w % n_h:
            raise ConfigurationError(f"hop_size {n_h} does not divide window_size {n_w}")
        if self.num_bins != n_w // 2:
            raise ConfigurationError(
                f"num_bins must equal window_size/2 = {n_w // 2}, got {self.num_bins}"
            )
        kind = WindowKind(self.window_kind)
        object.__setattr__(self, "window_kind", kind)
        if kind is WindowKind.SQRT_HANN and n_w // n_h < 2:
            raise ConfigurationError("sqrt-hann windows need at least 50% overlap")

    @classmethod
    def from_window(cls, window_size: int, hop_size: int,
                    window_kind: WindowKind = WindowKind.SQRT_HANN) -> "FilterbankConfig":
        return cls(window_size, hop_size, window_size // 2, window_kind)


@dataclass(frozen=True)
class WindowPair:
    """Analysis and synthesis windows with unit overlap-add gain"""
    analysis: np.ndarray
    synthesis: np.ndarray


@dataclass
class SubbandFrame:
    """Complex positive-half spectrum of one analysis block"""
    block_index: int
    bins: np.ndarray


def make_window_pair(config: FilterbankConfig) -> WindowPair:
    """Build the window pair for a config.

    The synthesis window is scaled so that the shifted products
    w_a * w_s overlap-add to exactly one.
    """
    n_w, n_h = config.window_size, config.hop_size
    if config.window_kind is WindowKind.SQRT_HANN:
        base = np.sqrt(scipy.signal.get_window("hann", n_w, fftbins=True))
    else:
        base = np.ones(n_w)

    # Every sample is covered by N_w/N_h shifted windows.
    gain = float(np.sum(base * base)) / n_h
    return WindowPair(analysis=base.copy(), synthesis=base / gain)


def cola_sum(windows: WindowPair, hop_size: int) -> np.ndarray:
    """Overlap-added window product over one hop period"""
    product = windows.analysis * windows.synthesis
    return product.reshape(-1, hop_size).sum(axis=0)


def _half_shift(n_w: int) -> np.ndarray:
    return np.exp(-1j * np.pi * np.arange(n_w) / n_w)


def _block_phase(block_indices: np.ndarray, config: FilterbankConfig) -> np.ndarray:
    """Phase of the absolute time reference, one row per block"""
    n_w, n_h = config.window_size, config.hop_size
    k = np.arange(config.num_bins)
    # Integer reduction mod 2*N_w keeps the phase exact for long streams.
    cycles = (np.outer(block_indices, 2 * k + 1) * n_h) % (2 * n_w)
    return np.exp(-1j * np.pi * cycles / n_w)


def _check_finite(values: np.ndarray, what: str):
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{what} contains non-finite values")


def analyze_array(signal: np.ndarray, config: FilterbankConfig, windows: WindowPair,
                  first_block: int = 0) -> np.ndarray:
    """Analysis transform returning a (frames, bins) complex array.

    Implements X[k,l] = sum_n x[n] w_a[n - l N_h] exp(-j (2 pi k / N_w + pi / N_w) n)
    with n the absolute sample index, so block l starts at sample l*N_h.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"signal must be one-dimensional, got shape {x.shape}")
    _check_finite(x, "signal")
    n_w, n_h = config.window_size, config.hop_size
    if len(x) < n_w:
        raise EmptyOutputError(f"signal of {len(x)} samples is shorter than one window ({n_w})")

    num_frames = 1 + (len(x) - n_w) // n_h
    offsets = n_h * np.arange(num_frames)[:, None] + np.arange(n_w)[None, :]
    segments = x[offsets] * (windows.analysis * _half_shift(n_w))
    spectra = scipy.fft.fft(segments, axis=1)[:, :config.num_bins]
    blocks = first_block + np.arange(num_frames)
    return np.ascontiguousarray(spectra * _block_phase(blocks, config))


def synthesize_array(spectra: np.ndarray, config: FilterbankConfig, windows: WindowPair,
                     first_block: int = 0) -> np.ndarray:
    """Overlap-add synthesis of a (frames, bins) array.

    The output starts at the first block's first sample. The inverse kernel
    uses the same absolute time reference as the analysis kernel.
    """
    spectra = np.asarray(spectra, dtype=np.complex128)
    if spectra.ndim != 2 or spectra.shape[1] != config.num_bins:
        raise ShapeError(
            f"expected (frames, {config.num_bins}) spectra, got shape {spectra.shape}"
        )
    n_w, n_h, n_s = config.window_size, config.hop_size, config.num_bins
    num_frames = spectra.shape[0]
    if num_frames == 0:
        return np.zeros(0)

    blocks = first_block + np.arange(num_frames)
    local = spectra * np.conj(_block_phase(blocks, config))
    full = np.empty((num_frames, n_w), dtype=np.complex128)
    full[:, :n_s] = local
    full[:, n_s:] = np.conj(local[:, ::-1])
    segments = scipy.fft.ifft(full, axis=1) * np.conj(_half_shift(n_w))
    segments = segments.real * windows.synthesis

    output = np.zeros((num_frames - 1) * n_h + n_w)
    offsets = n_h * np.arange(num_frames)[:, None] + np.arange(n_w)[None, :]
    np.add.at(output, offsets, segments)
    return output


def analyze(signal: np.ndarray, config: FilterbankConfig, windows: WindowPair) -> List[SubbandFrame]:
    """Analysis transform returning one SubbandFrame per hop"""
    spectra = analyze_array(signal, config, windows)
    return [SubbandFrame(block_index=l, bins=spectra[l]) for l in range(spectra.shape[0])]


def stack_frames(frames: Sequence[SubbandFrame], num_bins: int) -> np.ndarray:
    """Stack frames into a (frames, bins) array after checking contiguity"""
    if not frames:
        return np.zeros((0, num_bins), dtype=np.complex128)
    for frame in frames:
        if np.shape(frame.bins) != (num_bins,):
            raise ShapeError(
                f"frame {frame.block_index} has {np.size(frame.bins)} bins, expected {num_bins}"
            )
    indices = np.array([frame.block_index for frame in frames])
    if np.any(np.diff(indices) != 1):
        raise ShapeError("frames must have contiguous block indices")
    return np.stack([np.asarray(frame.bins, dtype=np.complex128) for frame in frames])


def synthesize(frames: Sequence[SubbandFrame], config: FilterbankConfig, windows: WindowPair) -> np.ndarray:
    """Overlap-add synthesis of a contiguous frame sequence"""
    spectra = stack_frames(frames, config.num_bins)
    first_block = frames[0].block_index if frames else 0
    return synthesize_array(spectra, config, windows, first_block=first_block)


def enforce_analyticity_array(spectra: np.ndarray) -> np.ndarray:
    """Replace the imaginary part by the negative Hilbert transform of the real part.

    Operates along the last (bin) axis.
    """
    spectra = np.asarray(spectra)
    _check_finite(spectra, "spectrum")
    real = np.real(spectra).astype(np.float64)
    if real.shape[-1] == 0:
        return real.astype(np.complex128)
    quadrature = np.imag(scipy.signal.hilbert(real, axis=-1))
    return real - 1j * quadrature


def enforce_analyticity(frame: SubbandFrame) -> SubbandFrame:
    """Analytic version of a single frame along the bin axis"""
    return SubbandFrame(block_index=frame.block_index,
                        bins=enforce_analyticity_array(frame.bins))


class StreamingAnalyzer:
    """Incremental analysis over a sample stream.

    Holds the tail of the input that has not yet filled a whole block.
    Frames come out identical to analyze() on the concatenated stream.
    Not thread-safe; one producer per instance.
    """

    def __init__(self, config: FilterbankConfig, windows: WindowPair):
        self.config = config
        self.windows = windows
        self._buffer = np.zeros(0)
        self._next_block = 0

    @property
    def next_block(self) -> int:
        return self._next_block

    def push(self, samples: Iterable[float]) -> List[SubbandFrame]:
        """Append samples and return every frame that became complete"""
        chunk = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples,
                           dtype=np.float64)
        self._buffer = np.concatenate([self._buffer, chunk.ravel()])
        n_w, n_h = self.config.window_size, self.config.hop_size
        if len(self._buffer) < n_w:
            return []

        spectra = analyze_array(self._buffer, self.config, self.windows, first_block=self._next_block)
        frames = [SubbandFrame(block_index=self._next_block + i, bins=spectra[i])
                  for i in range(spectra.shape[0])]
        self._next_block += len(frames)
        self._buffer = self._buffer[len(frames) * n_h:]
        logger.debug("Streaming analyzer emitted %d frames", len(frames))
        return frames

    def reset(self):
        self._buffer = np.zeros(0)
        self._next_block = 0

"""
Synthetic detector training data

Examples are generated directly in the subband domain: every excitation
bin is colored noise, and every true map entry routes its excitation bin
through a random complex gain (or, with max_channel_length > 1, a short
random channel) into the measurement bin.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import scipy.signal
import torch
from torch.utils.data import Dataset

from src.common.errors import ConfigurationError
from src.dependency.dependency_map import DependencyMap
from src.dependency.features import build_features

logger = logging.getLogger(__name__)

WARMUP_FRAMES = 32


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _random_taps(rng: np.random.Generator, max_length: int) -> np.ndarray:
    taps = _complex_normal(rng, int(rng.integers(1, max_length + 1)))
    return taps / np.linalg.norm(taps)


def generate_synthetic_example(rng: np.random.Generator, num_bins: int, history: int,
                               sparsity: float = 0.3, noise_level: float = 0.01,
                               max_filter_length: int = 3, max_channel_length: int = 1,
                               identity_channels: bool = False) -> Tuple[np.ndarray, np.ndarray, DependencyMap]:
    """One (X, Y, label) triple with X and Y shaped (L, N_s)"""
    if not 0 <= sparsity <= 1:
        raise ConfigurationError(f"sparsity must lie in [0, 1], got {sparsity}")
    length = history + WARMUP_FRAMES

    sources = _complex_normal(rng, (length, num_bins))
    x = np.empty_like(sources)
    for k in range(num_bins):
        x[:, k] = scipy.signal.lfilter(_random_taps(rng, max_filter_length), [1.0], sources[:, k])

    label = rng.random((num_bins, num_bins)) < sparsity
    y = np.zeros((length, num_bins), dtype=np.complex128)
    for k_out, k_in in zip(*np.nonzero(label)):
        channel = np.ones(1) if identity_channels else _random_taps(rng, max_channel_length)
        y[:, k_out] += scipy.signal.lfilter(channel, [1.0], x[:, k_in])
    y += noise_level * _complex_normal(rng, (length, num_bins))

    return x[-history:], y[-history:], DependencyMap(label)


@dataclass
class SyntheticExample:
    x: np.ndarray
    y: np.ndarray
    label: DependencyMap


class SyntheticDataset(Dataset):
    """Per-output-bin training samples drawn from synthetic examples.

    Each example contributes N_s samples: the conditioned features for
    output bin k' and the map row k' as target.
    """

    def __init__(self, size: int, num_bins: int, history: int, sparsity: float = 0.3,
                 noise_level: float = 0.01, seed: int = 0):
        if size < 1:
            raise ConfigurationError("dataset needs at least one example")
        self.size = size
        self.num_bins = num_bins
        self.history = history
        self.sparsity = sparsity
        self.noise_level = noise_level
        self.seed = seed

        rng = np.random.default_rng(seed)
        self.examples: List[SyntheticExample] = []
        for _ in range(size):
            x, y, label = generate_synthetic_example(rng, num_bins, history, sparsity, noise_level)
            self.examples.append(SyntheticExample(x, y, label))
        self.inputs, self.targets = _to_tensors(self.examples)
        logger.info("Generated %d synthetic examples (%d samples, N_s=%d, L=%d)",
                    size, len(self.targets), num_bins, history)

    def __len__(self) -> int:
        return self.targets.shape[0]

    def __getitem__(self, index):
        return self.inputs[index], self.targets[index]

    def independent_validation(self, fraction: float = 0.25) -> "SyntheticDataset":
        """Fresh examples from a disjoint seed, sized as a fraction of this set"""
        size = max(1, int(round(fraction * self.size)))
        return SyntheticDataset(size, self.num_bins, self.history, self.sparsity,
                                self.noise_level, seed=self.seed + 1_000_003)


def _to_tensors(examples: List[SyntheticExample]) -> Tuple[torch.Tensor, torch.Tensor]:
    inputs, targets = [], []
    for example in examples:
        features = build_features(example.x, example.y)
        inputs.append(features.all_output_bins().astype(np.float32))
        targets.append(example.label.matrix)
    inputs = np.concatenate(inputs)
    targets = np.concatenate(targets).astype(np.float32)
    return torch.from_numpy(inputs), torch.from_numpy(targets)


def save_examples(directory: Union[str, Path], examples: List[SyntheticExample]) -> Path:
    """One .npz (x, y) and one .json (label) per example"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for index, example in enumerate(examples):
        stem = directory / f"example_{index:06d}"
        np.savez(stem.with_suffix(".npz"), x=example.x, y=example.y)
        stem.with_suffix(".json").write_text(
            json.dumps({"num_bins": example.label.num_bins,
                        "label": example.label.matrix.astype(int).tolist()}),
            encoding="utf-8",
        )
    return directory


def load_examples(directory: Union[str, Path]) -> List[SyntheticExample]:
    examples = []
    for record in sorted(Path(directory).glob("example_*.npz")):
        arrays = np.load(record)
        label = json.loads(record.with_suffix(".json").read_text(encoding="utf-8"))["label"]
        examples.append(SyntheticExample(arrays["x"], arrays["y"], DependencyMap(np.array(label, dtype=bool))))
    return examples

"""
Dependency detector network

Small convolutional network that, for one output bin, scores every
excitation bin as a contributor. Convolutions run along time only, so
each bin row is processed with shared weights before two fully connected
layers mix the bins.
"""

import json
import logging
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from src.common.errors import ConfigurationError, ShapeError
from src.dependency.dependency_map import DependencyMap
from src.dependency.features import NUM_CHANNELS, FeatureTensor

logger = logging.getLogger(__name__)

KERNEL_SIZES = (7, 5, 3, 3)
STRIDES = (1, 3, 3, 3)


def conv_output_width(history: int) -> int:
    width = history
    for kernel, stride in zip(KERNEL_SIZES, STRIDES):
        width = (width + 2 * (kernel // 2) - kernel) // stride + 1
    return width


class DetectorNetwork(nn.Module):
    """Maps a (5, N_s, L) feature tensor to N_s dependency probabilities"""

    def __init__(self, num_bins: int, history: int,
                 channels: Sequence[int] = (16, 32, 32, 32),
                 negative_slope: float = 0.01, dropout: float = 0.1):
        super().__init__()
        if len(channels) != len(KERNEL_SIZES):
            raise ConfigurationError(f"expected {len(KERNEL_SIZES)} conv channel counts, got {len(channels)}")
        width = conv_output_width(history)
        if num_bins < 1 or history < 1 or width < 1:
            raise ConfigurationError(f"invalid detector geometry N_s={num_bins}, L={history}")

        self.num_bins = num_bins
        self.history = history
        self.channels = tuple(int(c) for c in channels)
        self.negative_slope = negative_slope
        self.dropout = dropout
        self.feature_width = width

        layers = []
        in_channels = NUM_CHANNELS
        for out_channels, kernel, stride in zip(self.channels, KERNEL_SIZES, STRIDES):
            layers.append(nn.Conv2d(in_channels, out_channels, kernel_size=(1, kernel),
                                    stride=(1, stride), padding=(0, kernel // 2)))
            layers.append(nn.LeakyReLU(negative_slope))
            in_channels = out_channels
        self.features = nn.Sequential(*layers)

        hidden = 2 * num_bins
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Dropout(dropout),
            nn.Linear(in_channels * num_bins * width, hidden),
            nn.LeakyReLU(negative_slope),
            nn.Dropout(dropout),
            nn.Linear(hidden, num_bins),
            nn.Sigmoid(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.features(x))

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def describe(self) -> dict:
        return {
            "num_bins": self.num_bins,
            "history": self.history,
            "channels": list(self.channels),
            "negative_slope": self.negative_slope,
            "dropout": self.dropout,
            "parameter_count": self.parameter_count,
        }


def _as_batch(net: DetectorNetwork, inputs: np.ndarray) -> torch.Tensor:
    dtype = next(net.parameters()).dtype
    return torch.as_tensor(np.ascontiguousarray(inputs), dtype=dtype)


def _check_geometry(net: DetectorNetwork, features: FeatureTensor):
    if features.num_bins != net.num_bins or features.history != net.history:
        raise ShapeError(
            f"features are {features.num_bins}x{features.history}, "
            f"network expects {net.num_bins}x{net.history}"
        )


def forward(net: DetectorNetwork, features: FeatureTensor, output_bin: int) -> np.ndarray:
    """Dependency probabilities of every excitation bin for one output bin"""
    _check_geometry(net, features)
    net.eval()
    with torch.no_grad():
        probabilities = net(_as_batch(net, features.for_output_bin(output_bin)[None]))
    return probabilities[0].double().numpy()


def predict_map(net: DetectorNetwork, features: FeatureTensor, threshold: float = 0.5) -> DependencyMap:
    """Thresholded map; a probability equal to the threshold counts as a dependency"""
    _check_geometry(net, features)
    net.eval()
    with torch.no_grad():
        probabilities = net(_as_batch(net, features.all_output_bins())).double().numpy()
    return DependencyMap(probabilities >= threshold)


def save_detector(net: DetectorNetwork, path: Union[str, Path]) -> Path:
    """JSON header plus a flat little-endian float32 body of every parameter"""
    base = Path(path)
    state = net.state_dict()
    entries, offset = [], 0
    for name, tensor in state.items():
        entries.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        offset += tensor.numel()
    header = {"format": "detector-v1", "byte_order": "little", "dtype": "float32",
              **net.describe(), "tensors": entries}
    base.with_suffix(".json").write_text(json.dumps(header, indent=2), encoding="utf-8")
    with open(base.with_suffix(".bin"), "wb") as handle:
        for tensor in state.values():
            handle.write(tensor.detach().cpu().numpy().astype("<f4").tobytes())
    logger.info("Saved detector (%d parameters) to %s", net.parameter_count, base)
    return base


def load_detector(path: Union[str, Path]) -> DetectorNetwork:
    base = Path(path)
    header = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    net = DetectorNetwork(header["num_bins"], header["history"], header["channels"],
                          header["negative_slope"], header["dropout"])
    body = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype="<f4")
    state = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        values = body[entry["offset"]:entry["offset"] + count].reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(values.astype(np.float32))
    net.load_state_dict(state)
    return net


def detector_geometry(path: Union[str, Path]) -> Tuple[int, int]:
    """(num_bins, history) recorded in a checkpoint header"""
    header = json.loads(Path(path).with_suffix(".json").read_text(encoding="utf-8"))
    return header["num_bins"], header["history"]

"""
Detector training

Adam on binary cross entropy over per-output-bin samples, with a
validation loss after every epoch.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
from torch.utils.data import DataLoader, Dataset

from src.common.errors import ConfigurationError, TrainingError
from src.dependency.detector_network import DetectorNetwork

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer and data-generation settings"""
    learning_rate: float = 1e-5
    betas: Tuple[float, float] = (0.9, 0.999)
    epochs: int = 10
    batch_size: int = 64
    sparsity: float = 0.3
    noise_level: float = 0.01
    validation_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        # A zero learning rate is accepted so a run can measure the untouched network.
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning rate must be non-negative, got {self.learning_rate}")
        if not 0 <= self.sparsity <= 1:
            raise ConfigurationError(f"sparsity must lie in [0, 1], got {self.sparsity}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class LossCurve:
    """Per-epoch mean BCE on the training and validation sets"""
    initial_validation: float
    train: List[float] = field(default_factory=list)
    validation: List[float] = field(default_factory=list)


def evaluate_loss(net: nn.Module, dataset: Dataset, batch_size: int = 256) -> float:
    """Mean BCE in inference mode"""
    loss_fn = nn.BCELoss(reduction="sum")
    net.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for inputs, targets in DataLoader(dataset, batch_size=batch_size):
            total += float(loss_fn(net(inputs), targets))
            count += targets.numel()
    return total / max(count, 1)


def predict_probabilities(net: nn.Module, dataset: Dataset, batch_size: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    net.eval()
    outputs, labels = [], []
    with torch.no_grad():
        for inputs, targets in DataLoader(dataset, batch_size=batch_size):
            outputs.append(net(inputs).double().numpy())
            labels.append(targets.numpy() > 0.5)
    return np.concatenate(outputs), np.concatenate(labels)


def f1_score(predicted: np.ndarray, actual: np.ndarray) -> float:
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    true_positive = int(np.sum(predicted & actual))
    denominator = int(np.sum(predicted)) + int(np.sum(actual))
    if denominator == 0:
        return 1.0
    return 2.0 * true_positive / denominator


def train(net: DetectorNetwork, dataset: Dataset, cfg: TrainingConfig,
          validation: Optional[Dataset] = None) -> Tuple[DetectorNetwork, LossCurve]:
    """Train in place and return the network with its loss curve"""
    if len(dataset) == 0:
        raise ConfigurationError("training set is empty")
    if validation is None:
        if not hasattr(dataset, "independent_validation"):
            raise ConfigurationError("a validation set is required for this dataset type")
        validation = dataset.independent_validation(cfg.validation_fraction)

    torch.manual_seed(cfg.seed)
    loader = DataLoader(dataset, batch_size=cfg.batch_size, shuffle=True,
                        generator=torch.Generator().manual_seed(cfg.seed))
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=cfg.betas)
    loss_fn = nn.BCELoss()

    curve = LossCurve(initial_validation=evaluate_loss(net, validation))
    logger.info("Initial validation BCE %.5f", curve.initial_validation)
    last_finite = curve.initial_validation

    for epoch in range(cfg.epochs):
        net.train()
        total, count = 0.0, 0
        for batch, (inputs, targets) in enumerate(loader):
            optimizer.zero_grad()
            loss = loss_fn(net(inputs), targets)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"loss diverged at epoch {epoch}, batch {batch}",
                    diagnostics={"epoch": epoch, "batch": batch, "last_finite_loss": last_finite,
                                 "learning_rate": cfg.learning_rate},
                )
            loss.backward()
            optimizer.step()
            last_finite = float(loss)
            total += last_finite * targets.shape[0]
            count += targets.shape[0]

        curve.train.append(total / count)
        curve.validation.append(evaluate_loss(net, validation))
        logger.info("Epoch %d/%d: train BCE %.5f, validation BCE %.5f",
                    epoch + 1, cfg.epochs, curve.train[-1], curve.validation[-1])

    return net, curve


def gradient_check(net: nn.Module, inputs: torch.Tensor, targets: torch.Tensor,
                   eps: float = 1e-6, entries_per_tensor: int = 6) -> Dict[str, float]:
    """Largest relative gap between autograd and central differences, per parameter tensor.

    Runs in float64 with dropout disabled. Checks the first few entries of
    every tensor.
    """
    net = net.double().eval()
    inputs = inputs.double()
    targets = targets.double()
    loss_fn = nn.BCELoss()

    net.zero_grad()
    loss_fn(net(inputs), targets).backward()

    worst = {}
    with torch.no_grad():
        for name, param in net.named_parameters():
            flat = param.view(-1)
            analytic = param.grad.view(-1)
            gap = 0.0
            for i in range(min(entries_per_tensor, flat.numel())):
                original = float(flat[i])
                flat[i] = original + eps
                upper = float(loss_fn(net(inputs), targets))
                flat[i] = original - eps
                lower = float(loss_fn(net(inputs), targets))
                flat[i] = original
                numeric = (upper - lower) / (2 * eps)
                scale = max(abs(numeric) + abs(float(analytic[i])), 1e-5)
                gap = max(gap, abs(numeric - float(analytic[i])) / scale)
            worst[name] = gap
    return worst

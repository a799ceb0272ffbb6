"""
Evaluator Module
Retrains a discretized architecture from scratch and measures accuracy.

Protocol: SGD with momentum 0.9 and weight decay, cosine learning-rate
decay to exactly zero (optional linear warm-up), global gradient-norm
clipping, optional label smoothing and augmentation.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from config.run_config import EvalConfig
from src.analysis.complexity import ComplexityReport, complexity_report
from src.autodiff import functional as F
from src.autodiff.optim import SGD, CosineSchedule, clip_grad_norm
from src.autodiff.tensor import Tensor, backward
from src.data_sources.datasets import BatchLoader, Dataset
from src.errors import NumericalError
from src.search.discretizer import rebuild_discrete
from src.search_space.genotype import Genotype
from src.search_space.network import CellNetwork

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    train_accuracy: float
    test_accuracy: float
    final_loss: float
    epochs: int
    complexity: ComplexityReport
    history: List[Dict] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "train_accuracy": self.train_accuracy,
            "test_accuracy": None if math.isnan(self.test_accuracy) else self.test_accuracy,
            "final_loss": self.final_loss,
            "epochs": self.epochs,
            "complexity": self.complexity.to_dict(),
            "history": self.history,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def accuracy(net: CellNetwork, images: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
    """Top-1 accuracy; NaN for an empty sample set."""
    if len(labels) == 0:
        return math.nan
    correct = 0
    for start in range(0, len(labels), batch_size):
        logits = net(Tensor(images[start:start + batch_size])).data
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start:start + batch_size]))
    return correct / len(labels)


def train_discrete(genotype: Genotype, dataset: Dataset, config: EvalConfig, channels: int,
                   rng: np.random.Generator, augment: bool = False,
                   augment_rng: Optional[np.random.Generator] = None) -> EvalReport:
    """
    Rebuild the genotype with fresh parameters and train it on the
    dataset's training split.

    Args:
        genotype: Architecture to evaluate
        dataset: Split, normalized dataset
        config: Evaluation settings
        channels: Stem width (config.channels overrides it when set)
        rng: Stream for initialization and batch order
        augment: Crop + flip augmentation of training batches
        augment_rng: Stream for augmentation (defaults to rng)

    Returns:
        EvalReport with accuracies, per-epoch history and complexity

    Raises:
        NumericalError: If the training loss diverges
    """
    config.validate()
    width = config.channels or channels
    net = rebuild_discrete(genotype, width, dataset.classes, dataset.channels, rng)
    train_images, train_labels = dataset.train()
    test_images, test_labels = dataset.test()
    loader = BatchLoader(train_images, train_labels, config.batch_size, rng, augment=augment, augment_rng=augment_rng)

    steps_per_epoch = len(loader)
    schedule = CosineSchedule(config.lr, config.epochs * steps_per_epoch, config.warmup_epochs * steps_per_epoch)
    params = net.model_parameters()
    optimizer = SGD(params, lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    report_complexity = complexity_report(genotype, width, dataset.classes, dataset.resolution, dataset.channels)
    logger.info(f"Evaluating genotype: {genotype.edge_count} edges, {report_complexity.params} params, "
                f"{report_complexity.flops} FLOPs, {config.epochs} epochs × {steps_per_epoch} steps")

    step = 0
    history = []
    epoch_loss = math.nan
    for epoch in range(1, config.epochs + 1):
        losses = []
        for images, labels in loader:
            optimizer.lr = schedule.lr_at(step)
            optimizer.zero_grad()
            loss = F.cross_entropy(net(Tensor(images)), labels, label_smoothing=config.label_smoothing)
            backward(loss)
            clip_grad_norm(params, config.grad_clip)
            optimizer.step()
            step += 1
            if not math.isfinite(loss.item()):
                raise NumericalError(f"evaluation loss diverged at epoch {epoch}, step {step}")
            losses.append(loss.item())
        epoch_loss = float(np.mean(losses))
        history.append({"epoch": epoch, "loss": epoch_loss, "lr": schedule.lr_at(step)})
        logger.info(f"Eval epoch {epoch}/{config.epochs}: loss {epoch_loss:.4f}")

    report = EvalReport(
        train_accuracy=accuracy(net, train_images, train_labels),
        test_accuracy=accuracy(net, test_images, test_labels),
        final_loss=epoch_loss,
        epochs=config.epochs,
        complexity=report_complexity,
        history=history,
    )
    logger.info(f"Train accuracy {report.train_accuracy:.4f}, test accuracy {report.test_accuracy:.4f}")
    return report

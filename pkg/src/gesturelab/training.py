"""Head training with SGD and learning-curve export."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from .dataset import AugmentationConfig, DataSplit, augment_frame, encode_labels
from .zoo import ClassifierModel

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


class TrainingError(RuntimeError):
    pass


class ClassMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    """Plain SGD with momentum and per-iteration time decay
    ``lr_t = lr / (1 + decay * t)``. ``decay=None`` means ``lr / epochs``."""

    learning_rate: float = 1e-4
    momentum: float = 0.9
    decay: float | None = None
    kind: str = "sgd"

    def __post_init__(self):
        if self.kind != "sgd":
            raise ValueError(f"only SGD is supported, got {self.kind!r}")
        # zero is allowed: it gives a frozen-head dry run
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be a finite non-negative number, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.decay is not None and self.decay < 0:
            raise ValueError(f"decay must be non-negative, got {self.decay}")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 25
    batch_size: int = 32
    seed: int = 42
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def decay(self) -> float:
        if self.optimizer.decay is None:
            return self.optimizer.learning_rate / self.epochs
        return self.optimizer.decay


class EpochRow(NamedTuple):
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class EpochHistory:
    rows: list[EpochRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def append(self, row: EpochRow) -> None:
        expected = len(self.rows) + 1
        if row.epoch != expected:
            raise ValueError(f"epoch rows must be consecutive: expected {expected}, got {row.epoch}")
        self.rows.append(row)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.rows]


def categorical_cross_entropy(logits: torch.Tensor, one_hot: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, one_hot)


def _pooled_features(model: ClassifierModel, frames, batch_size: int) -> torch.Tensor:
    chunks = [
        model.features(model.prepare(frames[i:i + batch_size]))
        for i in range(0, len(frames), batch_size)
    ]
    return torch.cat(chunks)


def fit(
    model: ClassifierModel,
    split: DataSplit,
    config: TrainingConfig = TrainingConfig(),
    progress: Callable[[EpochRow], None] | None = None,
) -> tuple[ClassifierModel, EpochHistory]:
    """Train the head on ``split.train``; ``split.test`` is scored after every
    epoch as the validation set.

    Each training batch is augmented with per-sample seeds drawn from the
    config seed, so batch order and augmentations are reproducible. The
    backbone is frozen and always in eval mode, which makes its features for
    the un-augmented test frames constant; they are computed once.
    """
    codec = model.codec
    split_classes = set(split.classes)
    if split_classes != set(codec.class_names):
        raise ClassMismatchError(
            f"split classes {sorted(split_classes)} do not match model classes {list(codec.class_names)}"
        )
    if not split.train or not split.test:
        raise ValueError("fit needs non-empty train and test partitions")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    opt_cfg = config.optimizer
    head_params = [p for p in model.head.parameters() if p.requires_grad]
    optimizer = torch.optim.SGD(head_params, lr=opt_cfg.learning_rate, momentum=opt_cfg.momentum)
    decay = config.decay
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda it: 1.0 / (1.0 + decay * it))

    train_images = [r.image for r in split.train]
    train_targets = torch.from_numpy(encode_labels([r.class_name for r in split.train], codec))
    test_targets = torch.from_numpy(encode_labels([r.class_name for r in split.test], codec))
    model.eval()
    test_features = _pooled_features(model, [r.image for r in split.test], config.batch_size)

    history = EpochHistory()
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(len(train_images))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            seeds = rng.integers(0, 2**32, size=len(idx))
            frames = [augment_frame(train_images[i], config.augmentation, int(s)) for i, s in zip(idx, seeds)]
            target = train_targets[idx]
            logits = model.logits(model.prepare(frames))
            loss = categorical_cross_entropy(logits, target)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss ({loss.item()}) in epoch {epoch}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            scheduler.step()
            loss_sum += loss.item() * len(idx)
            correct += int((logits.argmax(1) == target.argmax(1)).sum())

        model.eval()
        with torch.no_grad():
            val_logits = model.classify(test_features)
            val_loss = categorical_cross_entropy(val_logits, test_targets).item()
            val_acc = float((val_logits.argmax(1) == test_targets.argmax(1)).float().mean())
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss in epoch {epoch}")
        row = EpochRow(epoch, loss_sum / len(order), correct / len(order), val_loss, val_acc)
        history.append(row)
        logger.info("epoch %d/%d loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
                    epoch, config.epochs, row.train_loss, row.train_acc, val_loss, val_acc)
        if progress is not None:
            progress(row)
    model.eval()
    return model, history


def export_history(
    history: EpochHistory,
    out_dir: str | Path,
    csv_name: str = "history.csv",
    plot_name: str = "curves.png",
) -> tuple[Path, Path]:
    """Write the per-epoch CSV and a loss/accuracy plot."""
    if not history.rows:
        raise ValueError("history is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, png_path = out / csv_name, out / plot_name
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history.rows:
            writer.writerow([row.epoch] + [f"{v:.6f}" for v in row[1:]])

    from matplotlib.figure import Figure

    fig = Figure(figsize=(8, 5))
    ax = fig.add_subplot()
    epochs = history.column("epoch")
    marker = "o" if len(epochs) == 1 else None
    for name, label in (("train_loss", "train_loss"), ("val_loss", "val_loss"),
                        ("train_acc", "train_acc"), ("val_acc", "val_acc")):
        ax.plot(epochs, history.column(name), label=label, marker=marker)
    ax.set_title("Training Loss and Accuracy")
    ax.set_xlabel("Epoch #")
    ax.set_ylabel("Loss/Accuracy")
    ax.legend(loc="best")
    fig.savefig(png_path, dpi=100)
    return csv_path, png_path

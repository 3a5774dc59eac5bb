"""Auxiliary-model training loop and per-sample loss inference.

Training is seeded-deterministic up to backend nondeterminism: sample order,
augmentation draws, and weight init all derive from the configured seed.
Inference never applies augmentation; each loss is the categorical
cross-entropy of the stored probability vector at the true label, so reports
can be re-verified from their own probabilities.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import images as imageio
from .augment import AugmentConfig, augment, counter_for
from .errors import BudgetError, ImageDecodeError, ManifestError
from .manifest import DatasetManifest
from .models import predict_proba, to_batch

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12  # loss = -ln(max(p_true, floor)) so a hard 0 stays finite


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-3
    early_stopping: bool = True
    patience: int = 20
    monitor: str = "val_accuracy"  # or "val_loss"
    augment: AugmentConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.monitor not in ("val_accuracy", "val_loss"):
            raise ValueError(f"unknown monitor {self.monitor!r}")


@dataclass
class ArrayDataset:
    """Decoded samples ready for the trainer: ids, images (N,H,W[,C]), labels."""

    ids: list[str]
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, ids: list[str],
                      images_root: str | Path) -> "ArrayDataset":
        root = Path(images_root)
        imgs, labels = [], []
        for sid in ids:
            record = manifest.get(sid)
            img = imageio.load_image(root / record.image_path)
            imgs.append(imageio.to_grayscale(img))
            labels.append(manifest.class_index(record.label))
        return cls(ids=list(ids), images=np.stack(imgs), labels=np.array(labels, dtype=np.int64))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainHistory:
    train_size: int
    val_size: int
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int | None = None

    def best(self) -> EpochStats | None:
        if self.best_epoch is None:
            return None
        return self.epochs[self.best_epoch]

    def final(self) -> EpochStats | None:
        return self.epochs[-1] if self.epochs else None

    def to_dict(self) -> dict:
        return {"train_size": self.train_size, "val_size": self.val_size,
                "best_epoch": self.best_epoch, "epochs": [asdict(e) for e in self.epochs]}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


@dataclass
class LossEntry:
    id: str
    loss: float
    predicted: str
    confidence: float
    probabilities: list[float]


@dataclass
class LossReport:
    """Per-sample inference output used to rank samples for triage."""

    entries: list[LossEntry] = field(default_factory=list)
    failed_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"entries": [asdict(e) for e in self.entries], "failed_ids": self.failed_ids}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LossReport":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(entries=[LossEntry(**e) for e in payload["entries"]],
                   failed_ids=list(payload["failed_ids"]))


@torch.no_grad()
def _evaluate(model: nn.Module, dataset: ArrayDataset, batch_size: int = 256) -> tuple[float, float]:
    model.eval()
    total_loss, correct = 0.0, 0
    for lo in range(0, len(dataset), batch_size):
        x = to_batch(dataset.images[lo:lo + batch_size])
        y = torch.from_numpy(dataset.labels[lo:lo + batch_size])
        logits = model(x)
        total_loss += F.cross_entropy(logits, y, reduction="sum").item()
        correct += (logits.argmax(dim=1) == y).sum().item()
    n = max(len(dataset), 1)
    return total_loss / n, correct / n


def train(model: nn.Module, train_set: ArrayDataset, val_set: ArrayDataset,
          config: TrainConfig, n_max: int | None = None) -> tuple[nn.Module, TrainHistory]:
    """Train in place and return (model, history).

    With early stopping enabled the returned weights are the best-validation
    checkpoint. When n_max is given, |train| + |validation| < n_max is
    enforced up front.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ManifestError("train and validation sets must be non-empty")
    if n_max is not None and len(train_set) + len(val_set) >= n_max:
        raise BudgetError(
            f"|train| + |validation| = {len(train_set) + len(val_set)} >= n_max = {n_max}")
    num_classes = model.config.num_classes
    present = set(np.unique(train_set.labels).tolist())
    absent = sorted(set(range(num_classes)) - present)
    if absent:
        log.warning("classes absent from the training set: %s", absent)

    history = TrainHistory(train_size=len(train_set), val_size=len(val_set))
    if config.epochs == 0:
        return model, history

    torch.manual_seed(config.seed)
    shuffle_rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    sign = 1.0 if config.monitor == "val_accuracy" else -1.0
    best_metric = -np.inf
    best_state = None
    stall = 0

    for epoch in range(config.epochs):
        model.train()
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss, epoch_correct = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            batch = train_set.images[idx]
            if config.augment is not None:
                batch = np.stack([
                    augment(img, config.augment,
                            counter_for(train_set.ids[i], index=epoch))
                    for img, i in zip(batch, idx)
                ])
            x = to_batch(batch)
            y = torch.from_numpy(train_set.labels[idx])
            optimizer.zero_grad()
            logits = model(x)
            loss = F.cross_entropy(logits, y)
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(idx)
            epoch_correct += (logits.argmax(dim=1) == y).sum().item()
        val_loss, val_acc = _evaluate(model, val_set)
        stats = EpochStats(epoch=epoch,
                           train_loss=epoch_loss / len(train_set),
                           train_accuracy=epoch_correct / len(train_set),
                           val_loss=val_loss, val_accuracy=val_acc)
        history.epochs.append(stats)

        metric = sign * (val_acc if config.monitor == "val_accuracy" else val_loss)
        if metric > best_metric:
            best_metric = metric
            history.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            stall = 0
        else:
            stall += 1
            if config.early_stopping and stall > config.patience:
                log.info("early stop at epoch %d (best epoch %d)", epoch, history.best_epoch)
                break

    if config.early_stopping and best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model, history


def infer_losses(model: nn.Module, dataset: ArrayDataset,
                 classes: list[str]) -> LossReport:
    """Per-sample cross-entropy losses and probability vectors, no augmentation."""
    report = LossReport()
    if len(dataset) == 0:
        return report
    probs = predict_proba(model, dataset.images)
    for i, sid in enumerate(dataset.ids):
        row = probs[i]
        pred = int(np.argmax(row))
        true = int(dataset.labels[i])
        loss = float(-np.log(max(row[true], PROB_FLOOR)))
        report.entries.append(LossEntry(
            id=sid, loss=loss, predicted=classes[pred],
            confidence=float(row[pred]), probabilities=[float(p) for p in row]))
    return report


def infer_losses_from_manifest(model: nn.Module, manifest: DatasetManifest,
                               ids: list[str], images_root: str | Path) -> LossReport:
    """Like infer_losses but loads images from disk; undecodable samples are
    flagged in failed_ids and excluded from ranking."""
    good_ids, imgs, labels = [], [], []
    failed = []
    root = Path(images_root)
    for sid in ids:
        record = manifest.get(sid)
        try:
            img = imageio.to_grayscale(imageio.load_image(root / record.image_path))
        except ImageDecodeError as exc:
            log.warning("skipping %s: %s", sid, exc)
            failed.append(sid)
            continue
        good_ids.append(sid)
        imgs.append(img)
        labels.append(manifest.class_index(record.label))
    if not good_ids:
        return LossReport(failed_ids=failed)
    dataset = ArrayDataset(ids=good_ids, images=np.stack(imgs),
                           labels=np.array(labels, dtype=np.int64))
    report = infer_losses(model, dataset, manifest.classes)
    report.failed_ids = failed
    return report

"""Supervised fine-tuning of a classifier backbone with softmax cross-entropy."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from ..autodiff import no_grad, softmax_cross_entropy
from ..errors import EmptyDataset, InvalidHyperparameter, InvalidLabel, NonFiniteLoss
from ..models import BACKBONES, ModelGraph, freeze_backbone
from .optim import adam

log = logging.getLogger(__name__)


@dataclass
class ClassifierConfig:
    backbone: str = "resnet18_mini"
    epochs: int = 15
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    freeze: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise InvalidHyperparameter(f"backbone must be one of {BACKBONES}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise InvalidHyperparameter("need epochs >= 0, batch_size >= 1 and lr > 0")


@dataclass
class ClassifierReport:
    loss: List[float] = field(default_factory=list)
    train_accuracy: List[float] = field(default_factory=list)
    wall_clock: float = 0.0
    checksum: str = ""

    def __len__(self):
        return len(self.loss)


def _arrays(train_set) -> Tuple[np.ndarray, np.ndarray]:
    if hasattr(train_set, "model_input"):
        return train_set.model_input(), train_set.labels
    x, y = train_set
    return np.asarray(x, dtype=np.float32), np.asarray(y)


def train_classifier(model: ModelGraph, train_set, config: ClassifierConfig,
                     ) -> Tuple[ModelGraph, ClassifierReport]:
    """Minibatch Adam on softmax cross-entropy, honouring the freeze flag.

    ``train_set`` is a Dataset or an ``(x, y)`` pair with x shaped (N, 1, H, W)
    in [-1, 1].
    """
    x, y = _arrays(train_set)
    if len(x) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if not np.all(np.isin(y, (0, 1))):
        raise InvalidLabel("classifier labels must be 0 or 1")
    x = x.astype(model.dtype)
    if config.freeze != model.frozen:
        freeze_backbone(model, config.freeze)
    rng = np.random.default_rng(config.seed)
    opt = adam(config.lr, config.beta1, config.beta2)
    report = ClassifierReport()
    start = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total, correct, seen = 0.0, 0, 0
        for lo in range(0, len(x), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            if len(idx) < 2 and len(x) >= 2:
                continue  # batch-norm cannot normalise a single sample
            logits = model(x[idx], train=True)
            loss = softmax_cross_entropy(logits, y[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLoss(f"classifier loss is {value}", {"epoch": epoch + 1})
            model.zero_grad()
            loss.backward()
            opt.step(model.trainable())
            total += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
            seen += len(idx)
        report.loss.append(total / max(seen, 1))
        report.train_accuracy.append(correct / max(seen, 1))
        log.debug("epoch %d loss %.4f acc %.3f", epoch + 1, report.loss[-1], report.train_accuracy[-1])
    report.wall_clock = time.perf_counter() - start
    report.checksum = model.checksum()
    return model, report


def predict(model: ModelGraph, data, batch_size: int = 256) -> np.ndarray:
    """Class predictions in eval mode (no gradient recording)."""
    x = data.model_input() if hasattr(data, "model_input") else np.asarray(data, dtype=np.float32)
    out = []
    with no_grad():
        for lo in range(0, len(x), batch_size):
            out.append(model(x[lo:lo + batch_size].astype(model.dtype), train=False).data.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

"""Per-class GAN augmentation: grow a dataset to ``multiplier`` times its size."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from . import CLASS_NAMES
from .autodiff import no_grad
from .data.dataset import Dataset, merge_datasets
from .errors import EmptyDataset, InvalidHyperparameter, InvalidLabel, SizeMismatch, UntrainedGenerator
from .models import ModelGraph

__all__ = ["AugmentationPlan", "plan_augmentation", "generate_synthetic", "merge_datasets",
           "train_class_generators"]


@dataclass
class AugmentationPlan:
    real_counts: Dict[int, int]
    multiplier: int = 10
    generators: Dict[int, ModelGraph] = field(default_factory=dict)
    seed: int = 0
    image_size: Optional[int] = None

    @property
    def synthetic_counts(self) -> Dict[int, int]:
        return {c: (self.multiplier - 1) * n for c, n in self.real_counts.items()}

    @property
    def total_real(self) -> int:
        return sum(self.real_counts.values())

    @property
    def total_after_merge(self) -> int:
        return self.multiplier * self.total_real


def plan_augmentation(dataset: Dataset, multiplier: int = 10, seed: int = 0,
                      generators: Optional[Dict[int, ModelGraph]] = None) -> AugmentationPlan:
    """Plan (multiplier - 1) synthetic images per real image, class by class."""
    if multiplier < 1:
        raise InvalidHyperparameter(f"multiplier must be >= 1, got {multiplier}")
    if len(dataset) == 0:
        raise EmptyDataset("cannot plan augmentation for an empty dataset")
    if np.any((dataset.labels < 0) | (dataset.labels >= len(CLASS_NAMES))):
        raise InvalidLabel(f"labels must index {CLASS_NAMES}")
    counts = {c: n for c, n in enumerate(dataset.class_counts(len(CLASS_NAMES))) if n}
    size = dataset.image_size[0] if dataset.image_size else None
    return AugmentationPlan(counts, multiplier, dict(generators or {}), seed, size)


def generate_synthetic(plan: AugmentationPlan, batch_size: int = 256) -> Dataset:
    """Sample the planned number of images from each class's generator.

    Generators run in eval mode, so every image depends only on the generator
    parameters and its own noise vector; each class draws from its own seeded
    stream.  Pixels are mapped from [-1, 1] to [0, 1].
    """
    pixels, labels, ids = [], [], []
    for label in sorted(plan.real_counts):
        count = plan.synthetic_counts[label]
        if count == 0:
            continue
        gen = plan.generators.get(label)
        if gen is None or not gen.meta.get("trained", False):
            raise UntrainedGenerator(f"no trained generator for class {CLASS_NAMES[label]}")
        out_size = gen.meta.get("out_size")
        if plan.image_size is not None and out_size != plan.image_size:
            raise SizeMismatch(f"generator emits {out_size}px images, dataset has {plan.image_size}px")
        rng = np.random.default_rng([plan.seed, label])
        z = rng.standard_normal((count, gen.meta["latent_dim"])).astype(gen.dtype)
        with no_grad():
            for lo in range(0, count, batch_size):
                x = gen(z[lo:lo + batch_size], train=False).data[:, 0]
                pixels.append(np.clip((x + 1.0) / 2.0, 0.0, 1.0))
        labels += [label] * count
        ids += [f"synthetic/{CLASS_NAMES[label]}-{i:06d}" for i in range(count)]
    if not ids:
        return Dataset.empty(plan.image_size)
    return Dataset(np.concatenate(pixels), labels, ids, np.ones(len(ids), bool), {"seed": plan.seed})


def train_class_generators(dataset: Dataset, trainer: Callable[[Dataset, int], ModelGraph],
                           classes=None) -> Dict[int, ModelGraph]:
    """Train one generator per class with ``trainer(class_subset, label)``."""
    classes = sorted(set(dataset.labels.tolist())) if classes is None else classes
    return {c: trainer(dataset.of_class(c), c) for c in classes}

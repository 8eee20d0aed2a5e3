"""Labelled grayscale image collections, ingestion, subsampling and splitting."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError
from skimage.transform import resize

from .. import CLASS_NAMES
from ..errors import (
    EmptyDataset,
    InvalidHyperparameter,
    MissingClassDir,
    SizeMismatch,
    TooSmall,
    UndecodableImage,
)

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".pgm"}
LUMA = np.array([0.299, 0.587, 0.114])

PAPER_ORDER = "split_after_augment"
SOUND_ORDER = "split_before_augment"


@dataclass(frozen=True)
class ImageRecord:
    id: str
    pixels: np.ndarray
    label: int
    provenance: str  # "real" | "synthetic"


@dataclass
class Dataset:
    """Column-oriented image set: ``pixels`` is (N, H, W) float32 in [0, 1]."""

    pixels: np.ndarray
    labels: np.ndarray
    ids: List[str]
    synthetic: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.synthetic = np.asarray(self.synthetic, dtype=bool)
        self.ids = list(self.ids)
        n = len(self.ids)
        if not (len(self.pixels) == len(self.labels) == len(self.synthetic) == n):
            raise ValueError("pixels, labels, ids and provenance flags differ in length")

    @classmethod
    def empty(cls, size: Optional[int] = None) -> "Dataset":
        shape = (0, size, size) if size else (0, 0, 0)
        return cls(np.zeros(shape, np.float32), np.zeros(0, np.int64), [], np.zeros(0, bool))

    @classmethod
    def from_records(cls, records) -> "Dataset":
        records = list(records)
        if not records:
            return cls.empty()
        return cls(np.stack([r.pixels for r in records]), [r.label for r in records],
                   [r.id for r in records], [r.provenance == "synthetic" for r in records])

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def image_size(self) -> Optional[Tuple[int, int]]:
        return tuple(self.pixels.shape[1:]) if self.pixels.ndim == 3 and self.pixels.shape[1] else None

    @property
    def provenance(self) -> List[str]:
        return ["synthetic" if s else "real" for s in self.synthetic]

    def records(self) -> Iterator[ImageRecord]:
        for i in range(len(self)):
            yield ImageRecord(self.ids[i], self.pixels[i], int(self.labels[i]),
                              "synthetic" if self.synthetic[i] else "real")

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.pixels[idx], self.labels[idx], [self.ids[i] for i in idx],
                       self.synthetic[idx], dict(self.meta))

    def of_class(self, label: int) -> "Dataset":
        return self.subset(np.flatnonzero(self.labels == label))

    def class_counts(self, num_classes: int = 2) -> List[int]:
        return np.bincount(self.labels, minlength=num_classes).tolist()

    def provenance_counts(self) -> dict:
        n_syn = int(self.synthetic.sum())
        return {"real": len(self) - n_syn, "synthetic": n_syn}

    def model_input(self) -> np.ndarray:
        """(N, 1, H, W) array rescaled to [-1, 1], the range every model consumes."""
        return (self.pixels[:, None] * 2.0 - 1.0).astype(np.float32)


# -- ingestion ------------------------------------------------------------------

def _find_class_dir(root: Path, name: str) -> Path:
    exact = root / name
    if exact.is_dir():
        return exact
    for child in sorted(root.iterdir()):
        if child.is_dir() and child.name.lower() == name.lower():
            return child
    raise MissingClassDir(f"missing class directory {exact}")


def decode_image(path: Path) -> np.ndarray:
    """Decode to a float64 (H, W) luma image in [0, 1]."""
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(img, dtype=np.float64) / 65535.0
            elif mode == "F":
                arr = np.asarray(img, dtype=np.float64)
            elif mode in ("L", "P", "1", "LA"):
                arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
            else:
                rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
                arr = rgb @ LUMA
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UndecodableImage(f"{path}: {exc}") from None
    return np.clip(arr, 0.0, 1.0)


def to_square(arr: np.ndarray, size: int) -> np.ndarray:
    if arr.shape != (size, size):
        arr = resize(arr, (size, size), order=1, mode="edge", anti_aliasing=False, preserve_range=True)
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def load_image_directory(root, target_size: int) -> Dataset:
    """Read ``<root>/Normal`` and ``<root>/Pneumonia`` into a dataset.

    Files are visited in lexicographic order within each class.  Files that
    fail to decode are skipped with a warning and listed in
    ``dataset.meta["undecodable"]``.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingClassDir(f"data root {root} does not exist")
    records, bad = [], []
    for label, name in enumerate(CLASS_NAMES):
        cdir = _find_class_dir(root, name)
        files = sorted(p for p in cdir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        for path in files:
            try:
                pixels = to_square(decode_image(path), target_size)
            except UndecodableImage as exc:
                log.warning("skipping undecodable image %s", exc)
                bad.append(str(path))
                continue
            records.append(ImageRecord(f"{name}/{path.name}", pixels, label, "real"))
    if not records:
        raise EmptyDataset(f"no decodable images under {root}")
    ds = Dataset.from_records(records)
    ds.meta["undecodable"] = bad
    ds.meta["root"] = str(root)
    return ds


# -- sampling -------------------------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def subsample_fraction(dataset: Dataset, fraction: float = 0.10, seed: int = 0) -> Dataset:
    """Stratified random subset keeping round(fraction * n_c) images per class."""
    if not 0 < fraction <= 1:
        raise InvalidHyperparameter(f"fraction must lie in (0, 1], got {fraction}")
    if len(dataset) == 0:
        raise EmptyDataset("cannot subsample an empty dataset")
    if fraction == 1:
        return dataset.subset(np.arange(len(dataset)))
    rng = np.random.default_rng(seed)
    keep = []
    for label in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == label)
        k = _round_half_up(fraction * len(idx))
        keep.append(rng.permutation(idx)[:k])
    return dataset.subset(np.sort(np.concatenate(keep)))


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    stratified: bool = True
    seed: int = 0
    order: str = SOUND_ORDER

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise InvalidHyperparameter(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.order not in (PAPER_ORDER, SOUND_ORDER):
            raise InvalidHyperparameter(f"unknown split order {self.order!r}")


def _n_train(fraction: float, n: int) -> int:
    # guard against 0.8 * 390 landing a hair under 312
    return int(math.floor(fraction * n + 1e-9))


def split_dataset(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> Tuple[Dataset, Dataset]:
    """Disjoint train/test partition; per class floor(fraction * n_c) go to train."""
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        train_idx, test_idx = [], []
        for label in np.unique(dataset.labels):
            idx = np.flatnonzero(dataset.labels == label)
            if len(idx) < 2:
                raise TooSmall(f"class {label} has {len(idx)} image(s); stratified split needs 2")
            perm = rng.permutation(idx)
            k = _n_train(spec.train_fraction, len(idx))
            train_idx.append(perm[:k])
            test_idx.append(perm[k:])
        if not train_idx:
            raise TooSmall("cannot split an empty dataset")
        train_idx, test_idx = np.concatenate(train_idx), np.concatenate(test_idx)
    else:
        if len(dataset) < 2:
            raise TooSmall("need at least two images to split")
        perm = rng.permutation(len(dataset))
        k = _n_train(spec.train_fraction, len(dataset))
        train_idx, test_idx = perm[:k], perm[k:]
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(test_idx))


def merge_datasets(real: Dataset, synthetic: Dataset) -> Dataset:
    """Concatenate, real records first, both in their original order."""
    if len(synthetic) == 0:
        return real.subset(np.arange(len(real)))
    if len(real) == 0:
        return synthetic.subset(np.arange(len(synthetic)))
    if real.image_size != synthetic.image_size:
        raise SizeMismatch(f"image sizes differ: {real.image_size} vs {synthetic.image_size}")
    return Dataset(np.concatenate([real.pixels, synthetic.pixels]),
                   np.concatenate([real.labels, synthetic.labels]),
                   real.ids + synthetic.ids,
                   np.concatenate([real.synthetic, synthetic.synthetic]),
                   dict(real.meta))


# -- fixtures ---------------------------------------------------------------------

def _bars(label: int, size: int, rng) -> np.ndarray:
    img = np.zeros((size, size))
    width = max(1, size // 8)
    start = rng.integers(1, size - width)
    if label == 0:
        img[start:start + width, :] = 1.0
    else:
        img[:, start:start + width] = 1.0
    return img


def _bump(size: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))


def _blobs(label: int, size: int, rng) -> np.ndarray:
    sigma = size / 8
    jitter = size / 16
    if label == 0:
        cy, cx = (size - 1) / 2 + rng.uniform(-jitter, jitter, 2)
        return _bump(size, cy, cx, sigma)
    cy = (size - 1) / 2 + rng.uniform(-jitter, jitter)
    left = size / 4 - 0.5 + rng.uniform(-jitter, jitter)
    right = 3 * size / 4 - 0.5 + rng.uniform(-jitter, jitter)
    return np.maximum(_bump(size, cy, left, sigma), _bump(size, cy, right, sigma))


def synth_fixture_dataset(kind: str = "bars", n_per_class: int = 10, size: int = 16,
                          noise: float = 0.0, seed: int = 0) -> Dataset:
    """Two-class toy images standing in for real radiographs.

    ``bars``: class 0 carries a horizontal bright bar, class 1 a vertical one.
    ``blobs``: class 0 has one Gaussian bump, class 1 two side by side.
    Gaussian pixel noise of std ``noise`` is added and the result clipped to [0, 1].
    """
    if kind not in ("bars", "blobs"):
        raise InvalidHyperparameter(f"unknown fixture kind {kind!r}")
    if n_per_class < 1 or size < 8 or noise < 0:
        raise InvalidHyperparameter("need n_per_class >= 1, size >= 8 and noise >= 0")
    rng = np.random.default_rng(seed)
    draw = _bars if kind == "bars" else _blobs
    pixels, labels, ids = [], [], []
    for label in (0, 1):
        for i in range(n_per_class):
            img = draw(label, size, rng)
            if noise:
                img = img + rng.normal(0.0, noise, img.shape)
            pixels.append(np.clip(img, 0.0, 1.0))
            labels.append(label)
            ids.append(f"{kind}-{label}-{i:05d}")
    return Dataset(np.stack(pixels), labels, ids, np.zeros(len(ids), bool), {"fixture": kind})


def write_image_directory(dataset: Dataset, root, subdir: Optional[str] = None) -> List[Path]:
    """Write 8-bit grayscale PNGs in the ``<root>/<Class>/`` layout."""
    root = Path(root) / subdir if subdir else Path(root)
    written = []
    for rec in dataset.records():
        cdir = root / CLASS_NAMES[rec.label]
        cdir.mkdir(parents=True, exist_ok=True)
        stem = rec.id.replace("/", "_")
        path = cdir / f"{Path(stem).stem}.png"
        Image.fromarray(np.round(rec.pixels * 255).astype(np.uint8)).save(path)
        written.append(path)
    return written

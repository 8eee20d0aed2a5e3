"""Run configuration: one JSON file, strict keys, documented defaults.

Precedence is command-line flags > config file > the defaults below.

=====================  ======================  ==========================================
key                    default                 meaning
=====================  ======================  ==========================================
data_root              null                    ``<root>/Normal``, ``<root>/Pneumonia``; null
                                               means use the synthetic ``fixture``
fixture                bars, 200/class, 0.15   kind / n_per_class / noise of the stand-in set
output_dir             "runs/latest"           where reports, figures, checkpoints go
order                  split_before_augment    or split_after_augment (reproduces the
                                               published counts; synthetic images reach test)
subsample_fraction     0.1                     stratified share of the real data kept
multiplier             10                      final size = multiplier x real
image_size             64                      square side after resizing
train_fraction         0.8                     stratified train share
seed                   0                       global seed; phases derive their own streams
write_synthetic        false                   also dump synthetic PNGs under ``synthetic/``
figures                true                    render PNG figures
gan                    see GanTrainConfig      iterations, batch_size, learning rates, ...
classifier             see ClassifierConfig    backbone, epochs, freeze, ...
=====================  ======================  ==========================================
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data.dataset import PAPER_ORDER, SOUND_ORDER
from .errors import ConfigError, InvalidHyperparameter
from .training.classifier import ClassifierConfig
from .training.gan import GanTrainConfig


@dataclass
class FixtureConfig:
    kind: str = "bars"
    n_per_class: int = 200
    noise: float = 0.15


@dataclass
class RunConfig:
    data_root: Optional[str] = None
    fixture: FixtureConfig = field(default_factory=FixtureConfig)
    output_dir: str = "runs/latest"
    order: str = SOUND_ORDER
    subsample_fraction: float = 0.1
    multiplier: int = 10
    image_size: int = 64
    train_fraction: float = 0.8
    seed: int = 0
    write_synthetic: bool = False
    figures: bool = True
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def __post_init__(self):
        if self.order not in (PAPER_ORDER, SOUND_ORDER):
            raise ConfigError(f"order must be {PAPER_ORDER!r} or {SOUND_ORDER!r}")
        if not 0 < self.subsample_fraction <= 1:
            raise ConfigError("subsample_fraction must lie in (0, 1]")
        if self.multiplier < 1:
            raise ConfigError("multiplier must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")

    @property
    def paper_mode(self) -> bool:
        return self.order == PAPER_ORDER

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gan"].pop("log_path", None)
        return d


_NESTED = {"fixture": FixtureConfig, "gan": GanTrainConfig, "classifier": ClassifierConfig}
_EXCLUDED = {"gan": {"log_path"}}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)} - _EXCLUDED.get(where, set())
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED and cls is RunConfig:
            value = _build(_NESTED[key], value, key)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (InvalidHyperparameter, TypeError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Read a JSON config (or start from defaults) and apply flag overrides.

    ``overrides`` may use dotted keys such as ``"gan.iterations"``.
    """
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        target = data
        *parents, leaf = key.split(".")
        for p in parents:
            target = target.setdefault(p, {})
        target[leaf] = value
    return config_from_dict(data)

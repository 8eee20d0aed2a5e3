"""End-to-end run: subsample -> per-class GANs -> augment -> split -> fine-tune -> evaluate.

In ``split_before_augment`` order the real data is split first and only the
training side is augmented.  ``split_after_augment`` augments everything and
then splits, so synthetic images land in the test set; it exists to
reproduce the published counts (624 -> 6,240 -> 4,992 / 1,248).
"""
from __future__ import annotations

import dataclasses
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np

from . import CLASS_NAMES
from .augment import generate_synthetic, plan_augmentation
from .config import RunConfig
from .data.checkpoint import save_model
from .data.dataset import (
    Dataset,
    SplitSpec,
    load_image_directory,
    merge_datasets,
    split_dataset,
    subsample_fraction,
    synth_fixture_dataset,
    write_image_directory,
)
from .errors import GanTransferError
from .metrics import confusion_from_predictions, format_report, metrics_report, render_confusion
from .models import ModelGraph, build_backbone, freeze_backbone
from .training.classifier import ClassifierConfig, predict, train_classifier
from .training.gan import GanTrainConfig, TrainingReport, train_gan

log = logging.getLogger(__name__)

# (subset, label, gan config) -> trained generator, plus an optional report
GanTrainer = Callable[[Dataset, int, GanTrainConfig], "tuple[ModelGraph, Optional[TrainingReport]]"]

PHASES = ("ingest", "subsample", "augment", "split", "train", "evaluate")


class PhaseError(GanTransferError):
    def __init__(self, phase: str, cause: Exception):
        super().__init__(f"{phase} phase failed: {cause}")
        self.phase = phase
        self.cause = cause


def _phase_seeds(seed: int) -> Dict[str, int]:
    children = np.random.SeedSequence(seed).spawn(len(PHASES))
    return {p: int(c.generate_state(1)[0]) for p, c in zip(PHASES, children)}


def default_gan_trainer(subset: Dataset, label: int, cfg: GanTrainConfig):
    cfg = dataclasses.replace(cfg, seed=cfg.seed + 1000 * label,
                              batch_size=min(cfg.batch_size, len(subset)))
    G, _, report = train_gan(subset, cfg)
    G.meta["class_label"] = label
    return G, report


def load_source(config: RunConfig) -> Dataset:
    if config.data_root:
        return load_image_directory(config.data_root, config.image_size)
    fx = config.fixture
    return synth_fixture_dataset(fx.kind, fx.n_per_class, config.image_size, fx.noise, config.seed)


@dataclass
class PipelineResult:
    summary: dict
    report: object
    confusion: object
    classifier: ModelGraph
    generators: Dict[int, ModelGraph] = field(default_factory=dict)
    gan_reports: Dict[int, TrainingReport] = field(default_factory=dict)
    train: Optional[Dataset] = None
    test: Optional[Dataset] = None


def _augment(real: Dataset, config: RunConfig, seed: int, trainer: GanTrainer):
    if config.multiplier == 1:
        return real, {}, {}
    generators, reports = {}, {}
    gan_cfg = dataclasses.replace(config.gan, seed=seed, log_path=None)
    for label in sorted(set(real.labels.tolist())):
        G, rep = trainer(real.of_class(label), label, gan_cfg)
        generators[label] = G
        if rep is not None:
            reports[label] = rep
    plan = plan_augmentation(real, config.multiplier, seed=seed, generators=generators)
    synthetic = generate_synthetic(plan)
    return merge_datasets(real, synthetic), generators, reports


def run_pipeline(config: RunConfig, dataset: Optional[Dataset] = None,
                 gan_trainer: Optional[GanTrainer] = None, output_dir=None,
                 write: bool = True) -> PipelineResult:
    """Execute every phase; when ``write`` is set, artifacts go to ``output_dir``.

    ``dataset`` overrides the configured source and ``gan_trainer`` the GAN
    phase (used with stub generators for count checks).
    """
    out = Path(output_dir or config.output_dir)
    trainer = gan_trainer or default_gan_trainer
    seeds = _phase_seeds(config.seed)
    summary = {"order": config.order, "multiplier": config.multiplier, "seed": config.seed}
    phase = "ingest"
    start = time.perf_counter()
    try:
        source = dataset if dataset is not None else load_source(config)
        summary["source"] = {"total": len(source), "per_class": source.class_counts()}

        phase = "subsample"
        real = subsample_fraction(source, config.subsample_fraction, seeds["subsample"])
        summary["subsampled"] = {"total": len(real), "per_class": real.class_counts()}

        split = SplitSpec(config.train_fraction, True, seeds["split"], config.order)
        if config.paper_mode:
            phase = "augment"
            merged, generators, gan_reports = _augment(real, config, seeds["augment"], trainer)
            summary["merged"] = {"total": len(merged), "per_class": merged.class_counts(),
                                 "provenance": merged.provenance_counts()}
            phase = "split"
            train, test = split_dataset(merged, split)
        else:
            phase = "split"
            train_real, test = split_dataset(real, split)
            phase = "augment"
            train, generators, gan_reports = _augment(train_real, config, seeds["augment"], trainer)
            summary["merged"] = {"total": len(train) + len(test),
                                 "per_class": (np.add(train.class_counts(), test.class_counts())).tolist(),
                                 "provenance": {"real": len(train_real) + len(test),
                                                "synthetic": train.provenance_counts()["synthetic"]}}
            if test.synthetic.any():
                raise AssertionError("synthetic image leaked into the test set")
        summary["train"] = {"total": len(train), "per_class": train.class_counts(),
                            "provenance": train.provenance_counts()}
        summary["test"] = {"total": len(test), "per_class": test.class_counts(),
                           "provenance": test.provenance_counts()}

        phase = "train"
        ccfg: ClassifierConfig = dataclasses.replace(config.classifier, seed=seeds["train"])
        model = build_backbone(ccfg.backbone, config.image_size, seed=seeds["train"])
        if ccfg.freeze:
            freeze_backbone(model, True)
        model, clf_report = train_classifier(model, train, ccfg)

        phase = "evaluate"
        pred = predict(model, test)
        cm = confusion_from_predictions(pred, test.labels)
        report = metrics_report(cm)
        summary["confusion"] = [list(r) for r in cm.counts]
        summary["gan_final"] = {CLASS_NAMES[c]: {"d_real": r.tail_mean("d_real"),
                                                  "d_fake": r.tail_mean("d_fake")}
                                for c, r in gan_reports.items()}
    except Exception as exc:
        if write:
            _write_failure(out, phase, exc, summary)
        if isinstance(exc, GanTransferError):
            raise PhaseError(phase, exc) from exc
        raise
    summary["wall_clock_s"] = round(time.perf_counter() - start, 3)
    result = PipelineResult(summary, report, cm, model, generators, gan_reports, train, test)
    if write:
        write_artifacts(out, config, result, clf_report)
    return result


def _write_failure(out: Path, phase: str, exc: Exception, summary: dict) -> None:
    failed = out / "failed"
    failed.mkdir(parents=True, exist_ok=True)
    (failed / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (failed / "FAILED").write_text(f"phase={phase}\nerror={type(exc).__name__}: {exc}\n")


def write_artifacts(out: Path, config: RunConfig, result: PipelineResult, clf_report=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if (out / "failed").exists():
        shutil.rmtree(out / "failed")
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "metrics.txt").write_text(format_report(result.report))
    (out / "confusion.txt").write_text(render_confusion(result.confusion))
    summary = dict(result.summary)
    summary.pop("wall_clock_s", None)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    ckpt = out / "checkpoints"
    save_model(ckpt / "classifier.gdlc", result.classifier)
    for label, G in result.generators.items():
        save_model(ckpt / f"generator_{CLASS_NAMES[label]}.gdlc", G)
    for label, rep in result.gan_reports.items():
        rep.write_jsonl(out / f"gan_{CLASS_NAMES[label]}.jsonl")
    if config.write_synthetic and result.train is not None:
        # when augmenting before the split some synthetic images sit in the test split too
        parts = [d.subset(np.flatnonzero(d.synthetic)) for d in (result.train, result.test) if d is not None]
        write_image_directory(merge_datasets(*parts), out, "synthetic")
    if config.figures:
        from . import plotting

        fig = out / "figures"
        plotting.plot_confusion(result.confusion, fig / "confusion.png",
                                title=f"{config.classifier.backbone} ({config.order})")
        if clf_report is not None and len(clf_report):
            plotting.plot_classifier_history(clf_report, fig / "classifier_history.png")
        for label, rep in result.gan_reports.items():
            plotting.plot_gan_history(rep, fig / f"gan_{CLASS_NAMES[label]}.png", title=CLASS_NAMES[label])
        if result.train is not None and result.train.synthetic.any():
            for label in result.generators:
                idx = np.flatnonzero(result.train.synthetic & (result.train.labels == label))[:32]
                if len(idx):
                    plotting.plot_image_grid(result.train.pixels[idx], fig / f"samples_{CLASS_NAMES[label]}.png",
                                             title=f"generated {CLASS_NAMES[label]}")

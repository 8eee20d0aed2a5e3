"""Command-line entry point: ``gantransfer <command> [options]``.

Exit codes
    0  success
    1  unexpected error
    2  data input missing or unusable (missing class directory, empty dataset)
    3  training diverged (non-finite loss)
    4  corrupt or malformed file (checkpoint, config, matrices)
    5  published-table oracle mismatch
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import CLASS_NAMES, __version__
from .errors import (
    ConfigError,
    CorruptArchive,
    EmptyDataset,
    GanTransferError,
    MissingClassDir,
    NonFiniteLoss,
    TooSmall,
)

EXIT_OK, EXIT_ERROR, EXIT_DATA, EXIT_DIVERGED, EXIT_CORRUPT, EXIT_MISMATCH = range(6)


def _exit_code(exc: BaseException) -> int:
    from .pipeline import PhaseError
    from .tables import MalformedMatrices

    if isinstance(exc, PhaseError):
        exc = exc.cause
    if isinstance(exc, (MissingClassDir, EmptyDataset, TooSmall)):
        return EXIT_DATA
    if isinstance(exc, NonFiniteLoss):
        return EXIT_DIVERGED
    if isinstance(exc, (CorruptArchive, MalformedMatrices, ConfigError)):
        return EXIT_CORRUPT
    return EXIT_ERROR


def _class_index(name: str) -> int:
    for i, n in enumerate(CLASS_NAMES):
        if n.lower() == name.lower():
            return i
    raise ConfigError(f"unknown class {name!r}; expected one of {', '.join(CLASS_NAMES)}")


def _overrides(args, **mapping) -> dict:
    return {key: getattr(args, attr, None) for key, attr in mapping.items()}


# -- commands -------------------------------------------------------------------

def cmd_ingest(args) -> int:
    from .data import load_image_directory

    ds = load_image_directory(args.data, args.size)
    entries = [{"id": r.id, "label": r.label, "class": CLASS_NAMES[r.label],
                "sha256": hashlib.sha256(r.pixels.tobytes()).hexdigest()} for r in ds.records()]
    manifest = {"root": str(Path(args.data)), "size": args.size, "count": len(entries),
                "per_class": ds.class_counts(), "undecodable": ds.meta["undecodable"],
                "entries": entries}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(manifest, indent=2) + "\n")
    bad = len(ds.meta["undecodable"])
    print(f"ingested {len(entries)} images ({ds.class_counts()[0]} {CLASS_NAMES[0]}, "
          f"{ds.class_counts()[1]} {CLASS_NAMES[1]}); {bad} undecodable -> {out}")
    return EXIT_OK


def cmd_train_gan(args) -> int:
    from .config import load_config
    from .data import save_model, subsample_fraction
    from .pipeline import load_source
    from .plotting import plot_gan_history
    from .training import train_gan

    cfg = load_config(args.config, _overrides(args, **{"seed": "seed", "gan.iterations": "iterations",
                                                        "data_root": "data", "image_size": "size"}))
    label = _class_index(args.cls)
    source = subsample_fraction(load_source(cfg), cfg.subsample_fraction, cfg.seed)
    subset = source.of_class(label)
    gan_cfg = dataclasses.replace(cfg.gan, seed=cfg.seed,
                                  batch_size=min(cfg.gan.batch_size, max(len(subset), 1)))
    out = Path(args.out or cfg.output_dir)
    gan_cfg.log_path = str(out / f"gan_{CLASS_NAMES[label]}.jsonl")
    G, D, report = train_gan(subset, gan_cfg)
    G.meta["class_label"] = label
    ckpt = save_model(out / f"generator_{CLASS_NAMES[label]}.gdlc", G)
    save_model(out / f"discriminator_{CLASS_NAMES[label]}.gdlc", D)
    if cfg.figures:
        plot_gan_history(report, out / "figures" / f"gan_{CLASS_NAMES[label]}.png", title=CLASS_NAMES[label])
    print(f"trained {CLASS_NAMES[label]} GAN for {len(report)} iterations on {len(subset)} images; "
          f"final D(real)={report.tail_mean('d_real'):.3f} D(fake)={report.tail_mean('d_fake'):.3f} "
          f"-> {ckpt}")
    return EXIT_OK


def cmd_generate(args) -> int:
    from .augment import AugmentationPlan, generate_synthetic
    from .data import load_model, write_image_directory

    G, _ = load_model(args.checkpoint)
    if G.meta.get("role") != "generator":
        raise CorruptArchive(f"{args.checkpoint} does not hold a generator")
    label = int(G.meta.get("class_label", 0))
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    # a plan with multiplier 2 and `count` real images asks for exactly `count` synthetic ones
    plan = AugmentationPlan({label: args.count}, 2, {label: G}, args.seed, G.meta["out_size"])
    ds = generate_synthetic(plan)
    written = write_image_directory(ds, args.out) if len(ds) else []
    print(f"wrote {len(written)} {CLASS_NAMES[label]} images to {args.out}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .config import load_config
    from .pipeline import run_pipeline

    cfg = load_config(args.config, _overrides(args, **{
        "seed": "seed", "order": "order", "output_dir": "out", "data_root": "data",
        "multiplier": "multiplier", "subsample_fraction": "fraction", "image_size": "size",
        "classifier.backbone": "backbone", "classifier.epochs": "epochs",
        "gan.iterations": "iterations"}))
    result = run_pipeline(cfg)
    s = result.summary
    print(f"real {s['subsampled']['total']} -> merged {s['merged']['total']} -> "
          f"train {s['train']['total']} / test {s['test']['total']} "
          f"(test synthetic: {s['test']['provenance']['synthetic']})")
    print(f"accuracy {100 * result.report.accuracy:.2f}%  macro P {100 * result.report.macro_precision:.2f}%  "
          f"macro R {100 * result.report.macro_recall:.2f}%  F1 {100 * result.report.f1:.2f}%")
    print(f"artifacts in {cfg.output_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .data import load_image_directory, load_model
    from .metrics import confusion_from_predictions, format_report, metrics_report, render_confusion
    from .training import predict

    model, _ = load_model(args.checkpoint)
    if model.meta.get("role") != "classifier":
        raise CorruptArchive(f"{args.checkpoint} does not hold a classifier")
    ds = load_image_directory(args.data, model.meta["in_size"])
    cm = confusion_from_predictions(predict(model, ds), ds.labels)
    report = metrics_report(cm)
    text = format_report(report)
    sys.stdout.write(render_confusion(cm))
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.txt").write_text(text)
        (out / "confusion.txt").write_text(render_confusion(cm))
        if args.figures:
            from .plotting import plot_confusion

            plot_confusion(cm, out / "confusion.png", title=model.meta.get("kind", ""))
    return EXIT_OK


def cmd_verify_tables(args) -> int:
    from .tables import failures, format_checks, load_matrices, verify

    checks = verify(load_matrices(args.matrices))
    sys.stdout.write(format_checks(checks))
    return EXIT_MISMATCH if failures(checks) else EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gantransfer", description=__doc__.split("\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog=__doc__.split("\n", 1)[1])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="read an image directory and write a manifest")
    s.add_argument("--data", required=True, help="root holding Normal/ and Pneumonia/")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--out", required=True, help="manifest path (JSON)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train-gan", help="train the GAN for one class")
    s.add_argument("--config")
    s.add_argument("--class", dest="cls", required=True, choices=[n for n in CLASS_NAMES] + [n.lower() for n in CLASS_NAMES])
    s.add_argument("--data")
    s.add_argument("--size", type=int)
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train_gan)

    s = sub.add_parser("generate", help="sample images from a generator checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("pipeline", help="run every phase end to end")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--order", choices=["split_before_augment", "split_after_augment"])
    s.add_argument("--multiplier", type=int)
    s.add_argument("--fraction", type=float)
    s.add_argument("--size", type=int)
    s.add_argument("--backbone")
    s.add_argument("--epochs", type=int)
    s.add_argument("--iterations", type=int)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("evaluate", help="score a saved classifier on an image directory")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.add_argument("--no-figures", dest="figures", action="store_false")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("verify-tables", help="recompute published metrics from their confusion matrices")
    s.add_argument("--matrices", help="matrices JSON (defaults to the bundled reference file)")
    s.set_defaults(func=cmd_verify_tables)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GanTransferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

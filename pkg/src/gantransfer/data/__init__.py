"""Dataset ingestion, sampling, fixtures and checkpoint persistence."""
from .checkpoint import load_checkpoint, load_model, save_checkpoint, save_model
from .dataset import (
    PAPER_ORDER,
    SOUND_ORDER,
    Dataset,
    ImageRecord,
    SplitSpec,
    load_image_directory,
    merge_datasets,
    split_dataset,
    subsample_fraction,
    synth_fixture_dataset,
    write_image_directory,
)

__all__ = [
    "PAPER_ORDER", "SOUND_ORDER", "Dataset", "ImageRecord", "SplitSpec", "load_checkpoint",
    "load_image_directory", "load_model", "merge_datasets", "save_checkpoint", "save_model",
    "split_dataset", "subsample_fraction", "synth_fixture_dataset", "write_image_directory",
]

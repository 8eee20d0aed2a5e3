"""Optimizers and the adversarial / supervised training loops."""
from .gan import (
    GanTrainConfig,
    TrainingReport,
    gan_train_step,
    generator_loss,
    minimax_value,
    sample_noise,
    train_gan,
    value_from_probabilities,
)
from .optim import Optimizer, adam, optimizer_step, sgd
from .classifier import ClassifierConfig, ClassifierReport, predict, train_classifier

__all__ = [
    "ClassifierConfig", "ClassifierReport", "GanTrainConfig", "Optimizer", "TrainingReport", "adam",
    "gan_train_step", "generator_loss", "minimax_value", "optimizer_step", "predict", "sample_noise",
    "sgd", "train_classifier", "train_gan", "value_from_probabilities",
]

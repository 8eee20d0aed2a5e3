"""GAN-based augmentation and fine-tuned miniature CNN classifiers on numpy."""

__version__ = "0.1.0"

CLASS_NAMES = ("Normal", "Pneumonia")

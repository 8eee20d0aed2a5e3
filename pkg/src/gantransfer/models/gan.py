"""Generator and discriminator builders (transposed-conv / conv ladders, 4x4 kernels)."""
from __future__ import annotations

import math

import numpy as np

from ..errors import InvalidHyperparameter
from .graph import LayerSpec, ModelGraph

KERNEL = 4
LEAKY_ALPHA = 0.2


def _stages(size: int, what: str) -> int:
    """Number of conv-family layers needed to go between 1x1 and ``size``."""
    if size < 8 or size & (size - 1):
        raise InvalidHyperparameter(f"{what} must be a power of two >= 8, got {size}")
    return int(math.log2(size)) - 1


def generator_layers(latent_dim: int = 100, base_channels: int = 32, out_size: int = 64):
    if latent_dim < 1:
        raise InvalidHyperparameter("latent_dim must be >= 1")
    if base_channels < 1:
        raise InvalidHyperparameter("base_channels must be >= 1")
    n = _stages(out_size, "out_size")
    widths = [base_channels * 2 ** (n - 2 - i) for i in range(n - 1)] + [1]
    layers = []
    cin = latent_dim
    for i, cout in enumerate(widths):
        stride, pad = (1, 0) if i == 0 else (2, 1)
        layers.append(LayerSpec("conv_transpose", f"g{i + 1}", dict(
            in_ch=cin, out_ch=cout, kernel=KERNEL, stride=stride, padding=pad)))
        if i < n - 1:
            layers.append(LayerSpec("batchnorm", f"g{i + 1}_bn", dict(channels=cout)))
            layers.append(LayerSpec("activation", f"g{i + 1}_act", dict(fn="relu")))
        cin = cout
    layers.append(LayerSpec("activation", "g_out", dict(fn="tanh")))
    return layers


def build_generator(latent_dim: int = 100, base_channels: int = 32, out_size: int = 64,
                    seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Map (N, latent_dim) Gaussian noise to (N, 1, out_size, out_size) images in [-1, 1].

    The first transposed conv lifts 1x1 to 4x4; each later one doubles the side.
    At ``out_size=64`` that is 5 transposed convs, 4 batch-norms, 4 ReLUs and a
    final tanh.
    """
    layers = generator_layers(latent_dim, base_channels, out_size)
    meta = dict(role="generator", kind="generator", latent_dim=latent_dim,
                base_channels=base_channels, out_size=out_size, trained=False)
    return ModelGraph.build(layers, seed=seed, dtype=dtype, init="dcgan", meta=meta)


def discriminator_layers(in_size: int = 64, base_channels: int = 32):
    if base_channels < 1:
        raise InvalidHyperparameter("base_channels must be >= 1")
    n = _stages(in_size, "in_size")
    layers = []
    cin = 1
    for i in range(n - 1):
        cout = base_channels * 2 ** i
        layers.append(LayerSpec("conv", f"d{i + 1}", dict(
            in_ch=cin, out_ch=cout, kernel=KERNEL, stride=2, padding=1)))
        if i > 0:
            layers.append(LayerSpec("batchnorm", f"d{i + 1}_bn", dict(channels=cout)))
        layers.append(LayerSpec("activation", f"d{i + 1}_act", dict(fn="leaky_relu", alpha=LEAKY_ALPHA)))
        cin = cout
    layers.append(LayerSpec("conv", f"d{n}", dict(in_ch=cin, out_ch=1, kernel=KERNEL, stride=1, padding=0)))
    layers.append(LayerSpec("activation", "d_out", dict(fn="sigmoid")))
    return layers


def build_discriminator(in_size: int = 64, base_channels: int = 32, seed: int = 0,
                        dtype=np.float32) -> ModelGraph:
    """Map (N, 1, in_size, in_size) images to N probabilities of being real."""
    layers = discriminator_layers(in_size, base_channels)
    meta = dict(role="discriminator", kind="discriminator", in_size=in_size,
                base_channels=base_channels)
    return ModelGraph.build(layers, seed=seed, dtype=dtype, init="dcgan", meta=meta)

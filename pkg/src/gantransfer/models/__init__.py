"""Model builders: generator, discriminator and miniature classifier backbones."""
import numpy as np

from .backbones import BACKBONES, backbone_layers, build_backbone
from .gan import build_discriminator, build_generator, discriminator_layers, generator_layers
from .graph import HEAD, LayerSpec, ModelGraph, backbone_gradients, freeze_backbone


def rebuild(meta: dict) -> ModelGraph:
    """Construct an untrained model with the architecture recorded in ``meta``."""
    dtype = np.dtype(meta.get("dtype", "float32"))
    role = meta.get("role")
    if role == "generator":
        model = build_generator(meta["latent_dim"], meta["base_channels"], meta["out_size"], dtype=dtype)
    elif role == "discriminator":
        model = build_discriminator(meta["in_size"], meta["base_channels"], dtype=dtype)
    elif role == "classifier":
        model = build_backbone(meta["kind"], meta["in_size"], meta["num_classes"], dtype=dtype)
    else:
        raise ValueError(f"cannot rebuild model with role {role!r}")
    model.meta.update(meta)
    return model


__all__ = [
    "BACKBONES", "HEAD", "LayerSpec", "ModelGraph", "backbone_gradients", "backbone_layers",
    "build_backbone", "build_discriminator", "build_generator", "discriminator_layers",
    "freeze_backbone", "generator_layers", "rebuild",
]

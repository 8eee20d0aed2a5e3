"""Miniature classifier backbones, each ending in a 2-way fine-tuning head.

These are small homages rather than ports: each keeps the signature block of
its family (plain conv stack, fire modules, inception blocks, residual
blocks) at a width that trains on a CPU in seconds.
"""
from __future__ import annotations

import numpy as np

from ..errors import InvalidHyperparameter
from .graph import HEAD, LayerSpec, ModelGraph, fire_out_channels, inception_out_channels

BACKBONES = ("alexnet_mini", "squeezenet_mini", "googlenet_mini", "resnet18_mini")


def _conv(name, cin, cout, k, stride=1, padding=0, bias=True):
    return LayerSpec("conv", name, dict(in_ch=cin, out_ch=cout, kernel=k, stride=stride,
                                        padding=padding, bias=bias))


def _relu(name):
    return LayerSpec("activation", name, dict(fn="relu"))


def _maxpool(name, k=2):
    return LayerSpec("pool", name, dict(mode="max", kernel=k))


def _alexnet(size):
    side = size // 8
    return [
        _conv("c1", 1, 16, 5, padding=2), _relu("c1_act"), _maxpool("p1"),
        _conv("c2", 16, 32, 3, padding=1), _relu("c2_act"), _maxpool("p2"),
        _conv("c3", 32, 32, 3, padding=1), _relu("c3_act"),
        _conv("c4", 32, 32, 3, padding=1), _relu("c4_act"), _maxpool("p3"),
        LayerSpec("flatten", "flat"),
        LayerSpec("dense", "fc1", dict(in_features=32 * side * side, out_features=64)),
        _relu("fc1_act"),
    ], 64


def _squeezenet(size):
    fire1 = LayerSpec("fire_module", "fire1", dict(in_ch=16, squeeze=4, expand1=8, expand3=8))
    fire2 = LayerSpec("fire_module", "fire2", dict(in_ch=16, squeeze=4, expand1=8, expand3=8))
    fire3 = LayerSpec("fire_module", "fire3", dict(in_ch=16, squeeze=8, expand1=16, expand3=16))
    return [
        _conv("c1", 1, 16, 3, padding=1), _relu("c1_act"), _maxpool("p1"),
        fire1, fire2, _maxpool("p2"), fire3,
        LayerSpec("pool", "gap", dict(mode="global_avg")),
    ], fire_out_channels(fire3)


def _googlenet(size):
    inc1 = LayerSpec("inception_block", "inc1", dict(
        in_ch=16, b1=8, b3_reduce=8, b3=12, b5_reduce=4, b5=4, pool_proj=4))
    c1 = inception_out_channels(inc1)
    inc2 = LayerSpec("inception_block", "inc2", dict(
        in_ch=c1, b1=12, b3_reduce=12, b3=16, b5_reduce=4, b5=8, pool_proj=8))
    return [
        _conv("c1", 1, 16, 3, padding=1), _relu("c1_act"), _maxpool("p1"),
        inc1, _maxpool("p2"), inc2,
        LayerSpec("pool", "gap", dict(mode="global_avg")),
    ], inception_out_channels(inc2)


def _resnet18(size):
    def block(name, cin, cout, stride=1):
        return LayerSpec("residual_block", name, dict(in_ch=cin, out_ch=cout, stride=stride))

    return [
        _conv("stem", 1, 16, 3, padding=1, bias=False),
        block("res1", 16, 16), block("res2", 16, 16),
        block("res3", 16, 32, stride=2), block("res4", 32, 32),
        LayerSpec("batchnorm", "bn_out", dict(channels=32)), _relu("bn_out_act"),
        LayerSpec("pool", "gap", dict(mode="global_avg")),
    ], 32


_BUILDERS = {
    "alexnet_mini": _alexnet,
    "squeezenet_mini": _squeezenet,
    "googlenet_mini": _googlenet,
    "resnet18_mini": _resnet18,
}


def backbone_layers(kind: str, in_size: int, num_classes: int = 2):
    if kind not in _BUILDERS:
        raise InvalidHyperparameter(f"unknown backbone {kind!r}; choose from {BACKBONES}")
    if in_size not in (16, 32, 64):
        raise InvalidHyperparameter(f"in_size must be 16, 32 or 64, got {in_size}")
    if num_classes < 2:
        raise InvalidHyperparameter("num_classes must be >= 2")
    layers, width = _BUILDERS[kind](in_size)
    layers.append(LayerSpec("dense", HEAD, dict(in_features=width, out_features=num_classes)))
    return layers


def build_backbone(kind: str, in_size: int = 32, num_classes: int = 2, seed: int = 0,
                   dtype=np.float32) -> ModelGraph:
    """Build a classifier mapping (N, 1, in_size, in_size) images to (N, num_classes) logits."""
    layers = backbone_layers(kind, in_size, num_classes)
    meta = dict(role="classifier", kind=kind, in_size=in_size, num_classes=num_classes)
    return ModelGraph.build(layers, seed=seed, dtype=dtype, init="he", meta=meta)

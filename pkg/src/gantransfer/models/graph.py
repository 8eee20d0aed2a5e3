"""Layer specifications and the :class:`ModelGraph` that executes them.

A model is an ordered list of :class:`LayerSpec` plus a flat parameter set
keyed by dotted names (``"g2.weight"``, ``"res1.bn1.gamma"``).  Batch-norm
running statistics are kept apart from trainable parameters as buffers.
"""
from __future__ import annotations

import copy
import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from ..autodiff import (
    RunningStats,
    Tensor,
    activation,
    batchnorm2d,
    concat,
    conv2d,
    conv_transpose2d,
    global_avg_pool,
    linear,
    max_pool2d,
    avg_pool2d,
)
from ..errors import InvalidHyperparameter, NoHead, ShapeMismatch

LAYER_KINDS = frozenset({
    "conv", "conv_transpose", "batchnorm", "activation", "dense", "pool",
    "residual_block", "fire_module", "inception_block", "flatten",
})

HEAD = "head"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidHyperparameter(f"unknown layer kind {self.kind!r}")

    def get(self, key, default=None):
        return self.hyper.get(key, default)


# -- parameter initialisation -------------------------------------------------

def _normal(rng, shape, std, mean=0.0):
    return rng.normal(mean, std, size=shape)


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _conv_params(rng, prefix, cin, cout, k, init, bias=False, transpose=False):
    shape = (cin, cout, k, k) if transpose else (cout, cin, k, k)
    if init == "dcgan":
        w = _normal(rng, shape, 0.02)
    else:
        w = _he(rng, shape, cin * k * k)
    out = {f"{prefix}.weight": w}
    if bias:
        out[f"{prefix}.bias"] = np.zeros(cout)
    return out


def _bn_params(rng, prefix, channels, init):
    gamma = _normal(rng, channels, 0.02, 1.0) if init == "dcgan" else np.ones(channels)
    return {f"{prefix}.gamma": gamma, f"{prefix}.beta": np.zeros(channels)}


def init_layer(spec: LayerSpec, rng: np.random.Generator, init: str):
    """Return (params, batchnorm buffer names) for one layer."""
    h, n = spec.hyper, spec.name
    params, bns = {}, []
    if spec.kind in ("conv", "conv_transpose"):
        params.update(_conv_params(rng, n, h["in_ch"], h["out_ch"], h["kernel"], init,
                                   bias=h.get("bias", False), transpose=spec.kind == "conv_transpose"))
    elif spec.kind == "batchnorm":
        params.update(_bn_params(rng, n, h["channels"], init))
        bns.append((n, h["channels"]))
    elif spec.kind == "dense":
        fin, fout = h["in_features"], h["out_features"]
        params[f"{n}.weight"] = _he(rng, (fin, fout), fin) if init != "dcgan" else _normal(rng, (fin, fout), 0.02)
        params[f"{n}.bias"] = np.zeros(fout)
    elif spec.kind == "residual_block":
        cin, cout = h["in_ch"], h["out_ch"]
        params.update(_bn_params(rng, f"{n}.bn1", cin, init))
        params.update(_conv_params(rng, f"{n}.conv1", cin, cout, 3, init))
        params.update(_bn_params(rng, f"{n}.bn2", cout, init))
        params.update(_conv_params(rng, f"{n}.conv2", cout, cout, 3, init))
        bns += [(f"{n}.bn1", cin), (f"{n}.bn2", cout)]
        if _has_projection(spec):
            params.update(_conv_params(rng, f"{n}.proj", cin, cout, 1, init))
    elif spec.kind == "fire_module":
        params.update(_conv_params(rng, f"{n}.squeeze", h["in_ch"], h["squeeze"], 1, init, bias=True))
        params.update(_conv_params(rng, f"{n}.expand1", h["squeeze"], h["expand1"], 1, init, bias=True))
        params.update(_conv_params(rng, f"{n}.expand3", h["squeeze"], h["expand3"], 3, init, bias=True))
    elif spec.kind == "inception_block":
        cin = h["in_ch"]
        params.update(_conv_params(rng, f"{n}.b1", cin, h["b1"], 1, init, bias=True))
        params.update(_conv_params(rng, f"{n}.b3r", cin, h["b3_reduce"], 1, init, bias=True))
        params.update(_conv_params(rng, f"{n}.b3", h["b3_reduce"], h["b3"], 3, init, bias=True))
        params.update(_conv_params(rng, f"{n}.b5r", cin, h["b5_reduce"], 1, init, bias=True))
        params.update(_conv_params(rng, f"{n}.b5", h["b5_reduce"], h["b5"], 5, init, bias=True))
        params.update(_conv_params(rng, f"{n}.pool", cin, h["pool_proj"], 1, init, bias=True))
    return params, bns


def _has_projection(spec: LayerSpec) -> bool:
    return spec.hyper.get("stride", 1) != 1 or spec.hyper["in_ch"] != spec.hyper["out_ch"]


def inception_out_channels(spec: LayerSpec) -> int:
    h = spec.hyper
    return h["b1"] + h["b3"] + h["b5"] + h["pool_proj"]


def fire_out_channels(spec: LayerSpec) -> int:
    return spec.hyper["expand1"] + spec.hyper["expand3"]


# -- the graph ----------------------------------------------------------------

class ModelGraph:
    """Ordered layers plus parameters; callable as ``model(x, train=...)``."""

    def __init__(self, layers: List[LayerSpec], params: Dict[str, Tensor],
                 buffers: Dict[str, RunningStats], meta: Optional[dict] = None):
        self.layers = list(layers)
        self.params = params
        self.buffers = buffers
        self.meta = dict(meta or {})
        self.frozen = False

    @classmethod
    def build(cls, layers: List[LayerSpec], seed: int = 0, dtype=np.float32,
              init: str = "he", meta: Optional[dict] = None) -> "ModelGraph":
        rng = np.random.default_rng(seed)
        params, buffers = {}, {}
        for spec in layers:
            p, bns = init_layer(spec, rng, init)
            for name, value in p.items():
                params[name] = Tensor(np.asarray(value, dtype=dtype), requires_grad=True)
            for name, ch in bns:
                buffers[name] = RunningStats.fresh(ch, dtype=dtype)
        meta = dict(meta or {})
        meta.setdefault("seed", seed)
        meta.setdefault("dtype", np.dtype(dtype).name)
        return cls(layers, params, buffers, meta)

    # -- execution -------------------------------------------------------
    def __call__(self, x, train: bool = True) -> Tensor:
        return self.forward(x, train=train)

    def forward(self, x, train: bool = True) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if self.meta.get("role") == "generator" and x.ndim == 2:
            x = x.reshape(x.shape[0], x.shape[1], 1, 1)
        for spec in self.layers:
            layer_train = train and not (self.frozen and spec.name != HEAD)
            x = _forward_layer(self, spec, x, layer_train)
        if self.meta.get("role") == "discriminator":
            x = x.reshape(x.shape[0])
        return x

    def _bn(self, prefix: str, x: Tensor, train: bool, eps: float = 1e-5) -> Tensor:
        return batchnorm2d(x, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"],
                           self.buffers[prefix], eps=eps, train=train)

    def _conv(self, prefix: str, x: Tensor, stride: int = 1, padding: int = 0,
              transpose: bool = False) -> Tensor:
        op = conv_transpose2d if transpose else conv2d
        return op(x, self.params[f"{prefix}.weight"], self.params.get(f"{prefix}.bias"),
                  stride=stride, padding=padding)

    # -- bookkeeping -----------------------------------------------------
    @property
    def dtype(self):
        return np.dtype(self.meta.get("dtype", "float32"))

    def has_head(self) -> bool:
        return any(spec.name == HEAD for spec in self.layers)

    def trainable(self) -> Dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if p.requires_grad}

    def backbone_names(self) -> List[str]:
        return [k for k in self.params if not k.startswith(HEAD + ".")]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def layer_counts(self) -> Counter:
        """Count top-level layers; activations are counted by function name."""
        counts = Counter()
        for spec in self.layers:
            counts[spec.get("fn") if spec.kind == "activation" else spec.kind] += 1
        return counts

    def kernel_sizes(self, kinds: Iterable[str] = ("conv", "conv_transpose")) -> List[int]:
        kinds = set(kinds)
        return [spec.hyper["kernel"] for spec in self.layers if spec.kind in kinds]

    def state_arrays(self, include_buffers: bool = True) -> Dict[str, np.ndarray]:
        out = {f"param/{k}": v.data for k, v in self.params.items()}
        if include_buffers:
            for k, rs in self.buffers.items():
                out[f"buffer/{k}/mean"] = rs.mean
                out[f"buffer/{k}/var"] = rs.var
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for key, value in arrays.items():
            kind, _, rest = key.partition("/")
            if kind == "param":
                if rest not in self.params:
                    raise KeyError(f"unknown parameter {rest!r}")
                if self.params[rest].shape != value.shape:
                    raise ShapeMismatch(f"{rest}: {value.shape} != {self.params[rest].shape}")
                self.params[rest].data = np.array(value)
            elif kind == "buffer":
                name, _, which = rest.rpartition("/")
                setattr(self.buffers[name], which, np.array(value))

    def checksum(self, include_buffers: bool = True) -> str:
        h = hashlib.sha256()
        for key, arr in sorted(self.state_arrays(include_buffers).items()):
            h.update(key.encode())
            h.update(str(arr.dtype).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def copy(self) -> "ModelGraph":
        params = {k: Tensor(p.data.copy(), requires_grad=p.requires_grad) for k, p in self.params.items()}
        buffers = {k: RunningStats(rs.mean.copy(), rs.var.copy(), rs.momentum) for k, rs in self.buffers.items()}
        out = ModelGraph(self.layers, params, buffers, copy.deepcopy(self.meta))
        out.frozen = self.frozen
        return out

    def __repr__(self) -> str:
        return (f"ModelGraph(role={self.meta.get('role')!r}, kind={self.meta.get('kind')!r}, "
                f"layers={len(self.layers)}, params={self.param_count()})")


def freeze_backbone(model: ModelGraph, frozen: bool = True) -> ModelGraph:
    """Freeze (or unfreeze) everything except the fine-tuning head, in place.

    Frozen backbone parameters stop requiring gradients and the backbone runs
    its batch-norm layers on running statistics.
    """
    if not model.has_head():
        raise NoHead("model has no fine-tuning head")
    model.frozen = bool(frozen)
    for name, p in model.params.items():
        p.requires_grad = (not frozen) or name.startswith(HEAD + ".")
        if not p.requires_grad:
            p.grad = None
    return model


def backbone_gradients(model: ModelGraph) -> Dict[str, np.ndarray]:
    """Gradients of backbone parameters, zeros where none were produced."""
    return {k: (model.params[k].grad if model.params[k].grad is not None
                else np.zeros_like(model.params[k].data))
            for k in model.backbone_names()}


# -- per-kind forward ---------------------------------------------------------

def _forward_layer(m: ModelGraph, spec: LayerSpec, x: Tensor, train: bool) -> Tensor:
    h, n = spec.hyper, spec.name
    kind = spec.kind
    if kind == "conv":
        return m._conv(n, x, h.get("stride", 1), h.get("padding", 0))
    if kind == "conv_transpose":
        return m._conv(n, x, h.get("stride", 1), h.get("padding", 0), transpose=True)
    if kind == "batchnorm":
        return m._bn(n, x, train, h.get("eps", 1e-5))
    if kind == "activation":
        return activation(h["fn"], x, h.get("alpha", 0.2))
    if kind == "dense":
        return linear(x, m.params[f"{n}.weight"], m.params[f"{n}.bias"])
    if kind == "flatten":
        return x.flatten()
    if kind == "pool":
        mode = h.get("mode", "max")
        if mode == "max":
            return max_pool2d(x, h.get("kernel", 2), h.get("stride"), h.get("padding", 0))
        if mode == "avg":
            return avg_pool2d(x, h.get("kernel", 2), h.get("stride"))
        if mode == "global_avg":
            return global_avg_pool(x)
        raise InvalidHyperparameter(f"unknown pool mode {mode!r}")
    if kind == "residual_block":
        return _residual(m, spec, x, train)
    if kind == "fire_module":
        s = activation("relu", m._conv(f"{n}.squeeze", x))
        e1 = activation("relu", m._conv(f"{n}.expand1", s))
        e3 = activation("relu", m._conv(f"{n}.expand3", s, padding=1))
        return concat([e1, e3], axis=1)
    if kind == "inception_block":
        relu = lambda t: activation("relu", t)
        b1 = relu(m._conv(f"{n}.b1", x))
        b3 = relu(m._conv(f"{n}.b3", relu(m._conv(f"{n}.b3r", x)), padding=1))
        b5 = relu(m._conv(f"{n}.b5", relu(m._conv(f"{n}.b5r", x)), padding=2))
        bp = relu(m._conv(f"{n}.pool", max_pool2d(x, 3, 1, 1)))
        return concat([b1, b3, b5, bp], axis=1)
    raise InvalidHyperparameter(f"unknown layer kind {kind!r}")


def _residual(m: ModelGraph, spec: LayerSpec, x: Tensor, train: bool) -> Tensor:
    # pre-activation ordering: zero conv weights make the block an exact identity
    n, stride = spec.name, spec.get("stride", 1)
    pre = activation("relu", m._bn(f"{n}.bn1", x, train))
    out = m._conv(f"{n}.conv1", pre, stride=stride, padding=1)
    out = m._conv(f"{n}.conv2", activation("relu", m._bn(f"{n}.bn2", out, train)), padding=1)
    skip = m._conv(f"{n}.proj", pre, stride=stride) if _has_projection(spec) else x
    return skip + out

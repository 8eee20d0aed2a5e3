"""Activations, normalisation, pooling and losses on :class:`Tensor`."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import DegenerateBatch, DomainError, InvalidHyperparameter, InvalidTarget, ShapeMismatch
from .conv import _scatter, _windows, conv_output_size
from .tensor import Tensor, matmul

BCE_EPS = 1e-7


# -- activations -------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    if not 0 < alpha < 1:
        raise InvalidHyperparameter(f"leaky_relu alpha must lie in (0, 1), got {alpha}")
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    return Tensor._from_op(x.data * slope, (x,), lambda g: (g * slope,), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return Tensor._from_op(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def activation(kind: str, x: Tensor, alpha: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise InvalidHyperparameter(f"unknown activation {kind!r}")


# -- dense -------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in_features, out_features)."""
    out = matmul(x, weight)
    return out if bias is None else out + bias


# -- batch normalisation -----------------------------------------------------

@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats,
                eps: float = 1e-5, train: bool = True) -> Tensor:
    """Per-channel batch normalisation of an NCHW tensor.

    In train mode the batch mean and biased variance normalise the input and
    the running estimates move toward the batch mean and unbiased variance.
    Eval mode normalises with the running estimates only.
    """
    if x.ndim != 4:
        raise ShapeMismatch(f"batchnorm2d expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"gamma/beta must have shape ({c},)")
    xd = x.data
    g4 = gamma.data.reshape(1, c, 1, 1)

    if train:
        m = n * h * w
        if m < 2:
            raise DegenerateBatch(f"batchnorm needs at least 2 values per channel, got {m}")
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
        xhat = (xd - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        mom = running.momentum
        running.mean[...] = (1 - mom) * running.mean + mom * mean
        running.var[...] = (1 - mom) * running.var + mom * var * (m / (m - 1))

        def backward(g):
            dxhat = g * g4
            gx = None
            if x.requires_grad:
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = inv_std.reshape(1, c, 1, 1) / m * (m * dxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    else:
        inv_std = (1.0 / np.sqrt(running.var + eps)).astype(xd.dtype)
        xhat = (xd - running.mean.reshape(1, c, 1, 1).astype(xd.dtype)) * inv_std.reshape(1, c, 1, 1)

        def backward(g):
            gx = g * g4 * inv_std.reshape(1, c, 1, 1)
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    out = xhat * g4 + beta.data.reshape(1, c, 1, 1)
    return Tensor._from_op(out.astype(xd.dtype), (x, gamma, beta), backward, "batchnorm2d")


# -- pooling -----------------------------------------------------------------

def max_pool2d(x: Tensor, kernel: int = 2, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    stride = stride or kernel
    n, c, h, w = x.shape
    ho = conv_output_size(h, kernel, stride, padding)
    wo = conv_output_size(w, kernel, stride, padding)
    if ho < 1 or wo < 1:
        raise InvalidHyperparameter(f"max_pool2d output would be {ho}x{wo}")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    win = _windows(xp, kernel, stride, ho, wo).reshape(n, c, ho, wo, kernel * kernel)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    hp, wp = xp.shape[2:]

    def backward(g):
        cols = np.zeros((n, c, ho, wo, kernel * kernel), dtype=g.dtype)
        np.put_along_axis(cols, idx[..., None], g[..., None], axis=-1)
        full = _scatter(cols.reshape(n, c, ho, wo, kernel, kernel), hp, wp, stride)
        if padding:
            full = full[:, :, padding:-padding, padding:-padding]
        return (full,)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), backward, "max_pool2d")


def avg_pool2d(x: Tensor, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    stride = stride or kernel
    n, c, h, w = x.shape
    ho = conv_output_size(h, kernel, stride, 0)
    wo = conv_output_size(w, kernel, stride, 0)
    if ho < 1 or wo < 1:
        raise InvalidHyperparameter(f"avg_pool2d output would be {ho}x{wo}")
    scale = 1.0 / (kernel * kernel)
    out = _windows(x.data, kernel, stride, ho, wo).sum(axis=(-1, -2)) * scale

    def backward(g):
        cols = np.broadcast_to((g * scale)[..., None, None], (n, c, ho, wo, kernel, kernel))
        return (_scatter(np.ascontiguousarray(cols), h, w, stride),)

    return Tensor._from_op(out.astype(x.dtype), (x,), backward, "avg_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    return x.mean(axis=(2, 3))


# -- losses ------------------------------------------------------------------

def bce(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy of probabilities against {0, 1} targets.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logarithm.
    """
    y = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    y = np.broadcast_to(y, pred.shape) if y.ndim == 0 else y
    if y.shape != pred.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidTarget("bce targets must be 0 or 1")
    p = pred.data
    if np.any(p < 0) or np.any(p > 1) or np.any(np.isnan(p)):
        raise DomainError("bce predictions must lie in [0, 1]")
    y = y.astype(p.dtype)
    pc = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    inside = (p >= BCE_EPS) & (p <= 1 - BCE_EPS)
    n = p.size
    loss = -np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc))

    def backward(g):
        d = (-(y / pc) + (1 - y) / (1 - pc)) * inside / n
        return (g * d.astype(p.dtype),)

    return Tensor._from_op(np.asarray(loss, dtype=p.dtype), (pred,), backward, "bce")


def softmax_cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean cross-entropy of (N, C) logits against integer class indices."""
    if logits.ndim != 2:
        raise ShapeMismatch(f"logits must be (N, C), got {logits.shape}")
    t = np.asarray(target.data if isinstance(target, Tensor) else target)
    n, k = logits.shape
    if t.shape != (n,):
        raise ShapeMismatch(f"targets must be ({n},), got {t.shape}")
    if t.dtype.kind == "f":
        if not np.all(t == np.round(t)):
            raise InvalidTarget("class targets must be integers")
        t = t.astype(np.int64)
    if np.any(t < 0) or np.any(t >= k):
        raise InvalidTarget(f"class targets must lie in [0, {k})")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    loss = -logp[np.arange(n), t].mean()

    def backward(g):
        d = np.exp(logp)
        d[np.arange(n), t] -= 1
        return (g * d / n,)

    return Tensor._from_op(np.asarray(loss, dtype=z.dtype), (logits,), backward, "softmax_xent")


def loss(kind: str, prediction: Tensor, target) -> Tensor:
    if kind == "bce":
        return bce(prediction, target)
    if kind == "softmax_cross_entropy":
        return softmax_cross_entropy(prediction, target)
    raise ValueError(f"unknown loss {kind!r}")

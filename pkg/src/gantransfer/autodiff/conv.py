"""2-D convolution and transposed convolution (NCHW, square kernels).

Both are built on the same pair of primitives: a strided window *gather*
(im2col through ``sliding_window_view``) and its adjoint *scatter*
(col2im).  conv2d gathers in the forward pass and scatters in the backward
pass; conv_transpose2d does the opposite, which makes the two operators
exact adjoints of each other.

The kernel is applied as a cross-correlation (no flip).
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidHyperparameter, ShapeMismatch
from .tensor import Tensor


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def _check_hyper(stride: int, padding: int) -> None:
    if stride < 1:
        raise InvalidHyperparameter(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise InvalidHyperparameter(f"padding must be >= 0, got {padding}")


def _windows(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """View of shape (N, C, Ho, Wo, K, K) over an already padded input."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _scatter(cols: np.ndarray, hp: int, wp: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`_windows`: sum (N, C, Ho, Wo, K, K) patches into (N, C, Hp, Wp)."""
    n, c, ho, wo, k, _ = cols.shape
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[..., i, j]
    return out


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _crop(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return x[:, :, p:-p, p:-p]


def _correlate(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Raw conv2d forward on arrays; w is (O, I, K, K)."""
    k = w.shape[2]
    ho = conv_output_size(x.shape[2], k, stride, padding)
    wo = conv_output_size(x.shape[3], k, stride, padding)
    win = _windows(_pad(x, padding), k, stride, ho, wo)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _correlate_adjoint(g: np.ndarray, w: np.ndarray, in_hw, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`_correlate` w.r.t. its input; g is (N, O, Ho, Wo)."""
    h, wd = in_hw
    cols = np.tensordot(g, w, axes=([1], [0]))  # N, Ho, Wo, I, K, K
    cols = cols.transpose(0, 3, 1, 2, 4, 5)
    full = _scatter(cols, h + 2 * padding, wd + 2 * padding, stride)
    return _crop(full, padding)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate an NCHW input with an OIHW kernel bank."""
    _check_hyper(stride, padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatch(f"conv2d expects NCHW input and OIHW weight, got {x.shape}, {weight.shape}")
    n, c, h, wd = x.shape
    o, i, k, k2 = weight.shape
    if c != i:
        raise ShapeMismatch(f"input has {c} channels, weight expects {i}")
    if k != k2:
        raise ShapeMismatch("only square kernels are supported")
    if bias is not None and bias.shape != (o,):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({o},)")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    if ho < 1 or wo < 1:
        raise InvalidHyperparameter(f"conv2d output would be {ho}x{wo}")

    xd, wdat = x.data, weight.data
    out = _correlate(xd, wdat, stride, padding)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    def backward(g):
        gx = _correlate_adjoint(g, wdat, (h, wd), stride, padding) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            win = _windows(_pad(xd, padding), k, stride, ho, wo)
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution; ``weight`` is laid out (I, O, K, K)."""
    _check_hyper(stride, padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatch(f"conv_transpose2d expects NCHW input and IOHW weight, got {x.shape}, {weight.shape}")
    n, c, h, wd = x.shape
    i, o, k, k2 = weight.shape
    if c != i:
        raise ShapeMismatch(f"input has {c} channels, weight expects {i}")
    if k != k2:
        raise ShapeMismatch("only square kernels are supported")
    if bias is not None and bias.shape != (o,):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({o},)")
    ho = conv_transpose_output_size(h, k, stride, padding)
    wo = conv_transpose_output_size(wd, k, stride, padding)
    if ho < 1 or wo < 1:
        raise InvalidHyperparameter(f"conv_transpose2d output would be {ho}x{wo}")

    xd, wdat = x.data, weight.data
    # the forward pass is the input-adjoint of conv2d with an (I, O, K, K) kernel read as OIHW
    out = _correlate_adjoint(xd, wdat, (ho, wo), stride, padding)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    def backward(g):
        gx = _correlate(g, wdat, stride, padding) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            win = _windows(_pad(g, padding), k, stride, h, wd)  # N, O, H, W, K, K
            gw = np.tensordot(xd, win, axes=([0, 2, 3], [0, 2, 3]))  # I, O, K, K
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv_transpose2d")

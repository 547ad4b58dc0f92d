"""Differentiable primitives on NCHW numpy arrays.

Every forward has a matching backward taking the upstream gradient. Ops keep
the dtype of their inputs so the same code runs the float32 network and the
float64 gradient checks.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ConvGrads(NamedTuple):
    weight: np.ndarray
    bias: np.ndarray
    input: np.ndarray


def _pads(padding):
    """Normalise ``padding`` to (top, left, bottom, right)."""
    if np.isscalar(padding):
        p = int(padding)
        return p, p, p, p
    top, left, bottom, right = (int(p) for p in padding)
    return top, left, bottom, right


def _check_conv(x, weight, bias, padding, stride):
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"expected 4-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {weight.shape[0]} output channels")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    top, left, bottom, right = _pads(padding)
    kh, kw = weight.shape[2:]
    if x.shape[2] + top + bottom < kh or x.shape[3] + left + right < kw:
        raise ValueError("kernel larger than padded input")


def _columns(x, kh, kw, padding, stride):
    top, left, bottom, right = _pads(padding)
    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    # rows ordered (n, ho, wo); columns ordered (c, kh, kw) to match weight.reshape(Cout, -1)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def conv2d_forward(x, weight, bias=None, padding=0, stride=1):
    """Cross-correlation of ``x (N,Cin,H,W)`` with ``weight (Cout,Cin,kh,kw)``.

    ``padding`` is an int or a ``(top, left, bottom, right)`` tuple of zeros.
    """
    _check_conv(x, weight, bias, padding, stride)
    cout, _, kh, kw = weight.shape
    cols, ho, wo = _columns(x, kh, kw, padding, stride)
    out = cols @ weight.reshape(cout, -1).T
    if bias is not None:
        out += bias
    return out.reshape(x.shape[0], ho, wo, cout).transpose(0, 3, 1, 2).copy()


def conv2d_backward(x, weight, grad_out, padding=0, stride=1) -> ConvGrads:
    _check_conv(x, weight, None, padding, stride)
    cout, cin, kh, kw = weight.shape
    cols, ho, wo = _columns(x, kh, kw, padding, stride)
    n = x.shape[0]
    if grad_out.shape != (n, cout, ho, wo):
        raise ValueError(f"grad_out shape {grad_out.shape}, expected {(n, cout, ho, wo)}")
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, cout)
    d_weight = (g.T @ cols).reshape(weight.shape)
    d_bias = grad_out.sum(axis=(0, 2, 3))
    d_cols = (g @ weight.reshape(cout, -1)).reshape(n, ho, wo, cin, kh, kw)

    top, left, bottom, right = _pads(padding)
    hp, wp = x.shape[2] + top + bottom, x.shape[3] + left + right
    d_xp = np.zeros((n, cin, hp, wp), dtype=np.result_type(x, weight, grad_out))
    for i in range(kh):
        for j in range(kw):
            d_xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                d_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    d_x = d_xp[:, :, top : hp - bottom, left : wp - right]
    return ConvGrads(d_weight, d_bias, np.ascontiguousarray(d_x))


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    # subgradient at exactly 0 is 0
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def maxpool2x2_forward(x):
    """2x2 stride-2 max pooling.

    Returns ``(out, argmax)``; ``argmax`` holds the winning position 0..3 within
    each window in row-major order, the first one on ties.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even extents, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    argmax = win.argmax(axis=-1)
    out = np.take_along_axis(win, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool2x2_backward(argmax, grad_out):
    n, c, h2, w2 = grad_out.shape
    win = np.zeros((n, c, h2, w2, 4), dtype=grad_out.dtype)
    np.put_along_axis(win, argmax[..., None], grad_out[..., None], axis=-1)
    return win.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)


def upsample2x_nearest(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2x_backward(grad_out):
    n, c, h, w = grad_out.shape
    return grad_out.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def concat_channels(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    return np.concatenate([a, b], axis=1)


def split_channels(x, ca: int):
    """Inverse of :func:`concat_channels`; also splits its gradient."""
    return x[:, :ca], x[:, ca:]


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out

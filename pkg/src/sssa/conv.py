"""Convolution and batch-normalization kernels (plain numpy, no autograd).

Layout is ``[B, C, H, W]`` where the batch axis usually folds time and batch
together (``T * B``). The convolution contracts a strided window view of the
padded input against the weights; the input gradient scatters back tap by tap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError


class ConfigurationError(ValueError):
    """Block parameters do not compose (e.g. GL-SPS branches differ in shape)."""


@dataclass
class ConvParams:
    weights: np.ndarray
    stride: int = 1
    dilation: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f"weights must be [C_out, C_in, k, k], got {list(self.weights.shape)}")
        if self.kernel < 1 or self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ConfigurationError("need k >= 1, stride >= 1, dilation >= 1, padding >= 0")

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]

    @classmethod
    def same(cls, weights, dilation: int = 1) -> "ConvParams":
        """Stride-1 convolution padded so the output keeps the input's spatial size."""
        k = np.asarray(weights).shape[2]
        if (dilation * (k - 1)) % 2:
            raise ConfigurationError("SAME padding needs dilation*(k-1) even")
        return cls(weights, stride=1, dilation=dilation, padding=dilation * (k - 1) // 2)


@dataclass
class BNParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray = None
    running_var: np.ndarray = None
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        c = self.gamma.shape[0]
        self.running_mean = np.zeros(c) if self.running_mean is None else np.asarray(self.running_mean, dtype=np.float64)
        self.running_var = np.ones(c) if self.running_var is None else np.asarray(self.running_var, dtype=np.float64)
        if np.any(self.running_var < 0) or not self.eps > 0:
            raise ConfigurationError("running variance must be >= 0 and eps > 0")

    @classmethod
    def identity(cls, channels: int) -> "BNParams":
        return cls(np.ones(channels), np.zeros(channels))

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def output_size(size: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _out_hw(x_shape, p: ConvParams):
    h = output_size(x_shape[2], p.kernel, p.stride, p.dilation, p.padding)
    w = output_size(x_shape[3], p.kernel, p.stride, p.dilation, p.padding)
    if h < 1 or w < 1:
        raise ShapeError(f"convolution output would be {h}x{w}")
    return h, w


def _tap(a, i, j, p: ConvParams, ho, wo):
    r, c = i * p.dilation, j * p.dilation
    return a[:, :, r : r + p.stride * (ho - 1) + 1 : p.stride, c : c + p.stride * (wo - 1) + 1 : p.stride]


def _columns(xp, p: ConvParams, ho, wo):
    # [B, C, Ho, Wo, k, k] strided view, no copy
    span = p.dilation * (p.kernel - 1) + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (span, span), axis=(2, 3))
    return win[:, :, : p.stride * (ho - 1) + 1 : p.stride, : p.stride * (wo - 1) + 1 : p.stride, :: p.dilation, :: p.dilation]


def _pad(x, p: ConvParams):
    if p.padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p.padding, p.padding), (p.padding, p.padding)))


def conv2d(x, p: ConvParams) -> np.ndarray:
    """Cross-correlation with stride, dilation and zero padding."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [B, C, H, W], got {list(x.shape)}")
    if x.shape[1] != p.weights.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {p.weights.shape[1]}")
    ho, wo = _out_hw(x.shape, p)
    cols = _columns(_pad(x, p), p, ho, wo)
    out = np.tensordot(cols, p.weights, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(x, p: ConvParams, grad_out) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(grad_out * conv2d(x, p))`` with respect to ``x`` and the weights."""
    x = np.asarray(x, dtype=np.float64)
    ho, wo = grad_out.shape[2:]
    xp = _pad(x, p)
    dw = np.tensordot(grad_out, _columns(xp, p, ho, wo), axes=([0, 2, 3], [0, 2, 3]))
    gcols = np.tensordot(grad_out, p.weights, axes=([1], [0]))  # [B, Ho, Wo, C, k, k]
    dxp = np.zeros_like(xp)
    for i in range(p.kernel):
        for j in range(p.kernel):
            _tap(dxp, i, j, p, ho, wo)[...] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    pad = p.padding
    dx = dxp[:, :, pad : pad + x.shape[2], pad : pad + x.shape[3]]
    return dx, dw


def conv2d_naive(x, p: ConvParams) -> np.ndarray:
    """Per-pixel reference implementation; slow, for cross-checking only."""
    x = np.asarray(x, dtype=np.float64)
    b, cin, h, w = x.shape
    cout = p.weights.shape[0]
    ho, wo = _out_hw(x.shape, p)
    out = np.zeros((b, cout, ho, wo))
    for n in range(b):
        for o in range(cout):
            for y in range(ho):
                for z in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for i in range(p.kernel):
                            for j in range(p.kernel):
                                r = y * p.stride + i * p.dilation - p.padding
                                s = z * p.stride + j * p.dilation - p.padding
                                if 0 <= r < h and 0 <= s < w:
                                    acc += x[n, c, r, s] * p.weights[o, c, i, j]
                    out[n, o, y, z] = acc
    return out


def _bn_axes(x):
    if x.ndim < 2:
        raise ShapeError("batchnorm needs a channel axis at position 1")
    return (0,) + tuple(range(2, x.ndim))


def bcast_channel(v, ndim):
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def bn_statistics(x, p: BNParams, mode: str):
    """Per-channel (mean, variance) to normalize with; train mode also updates running stats."""
    if x.shape[1] != p.channels:
        raise ShapeError(f"input has {x.shape[1]} channels, BN has {p.channels}")
    if mode == "train":
        axes = _bn_axes(x)
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        n = x.size // p.channels
        p.running_mean = (1 - p.momentum) * p.running_mean + p.momentum * mean
        p.running_var = (1 - p.momentum) * p.running_var + p.momentum * var * n / max(n - 1, 1)
        return mean, var
    if mode == "infer":
        return p.running_mean, p.running_var
    raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


def batchnorm(x, p: BNParams, mode: str = "infer") -> np.ndarray:
    """Batch normalization over every axis except axis 1.

    ``train`` uses batch statistics and updates the running estimates in
    place; ``infer`` uses the running estimates.
    """
    x = np.asarray(x, dtype=np.float64)
    mean, var = bn_statistics(x, p, mode)
    x_hat = (x - bcast_channel(mean, x.ndim)) / np.sqrt(bcast_channel(var, x.ndim) + p.eps)
    return bcast_channel(p.gamma, x.ndim) * x_hat + bcast_channel(p.beta, x.ndim)


def gl_sps(x, conv_p: ConvParams, dconv_p: ConvParams, bn1: BNParams, bn2: BNParams, mode: str = "infer") -> np.ndarray:
    """Global-local patch splitting: ``BN(Conv(x)) + BN(DConv(x))``.

    ``x`` is the output of the stride-2 stem. Both branches must emit the
    same shape, which SAME padding guarantees.
    """
    x = np.asarray(x, dtype=np.float64)
    if _out_hw(x.shape, conv_p) != _out_hw(x.shape, dconv_p) or conv_p.weights.shape[0] != dconv_p.weights.shape[0]:
        raise ConfigurationError("GL-SPS branches produce different shapes")
    return batchnorm(conv2d(x, conv_p), bn1, mode) + batchnorm(conv2d(x, dconv_p), bn2, mode)

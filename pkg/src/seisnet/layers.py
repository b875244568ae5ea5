"""Layer forward/backward passes for 1D feature maps.

A feature map is a numpy array of shape ``(length, channels)``; batched
maps carry a leading batch axis, ``(batch, length, channels)``. Every op
accepts either form and returns the same form it was given.

Forward ops return ``(output, saved)``; the matching backward op takes the
upstream gradient and that ``saved`` record. Convolution and pooling use
SAME-ceil padding: ``out_len = ceil(in_len / stride)``, zeros split evenly
(extra one on the right) for convolution, and partial pooling windows
average only the samples they actually cover.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels

FeatureMap = np.ndarray


class ShapeError(ValueError):
    """Raised when an op receives operands whose shapes do not fit together."""


class BatchNormStateError(RuntimeError):
    """Raised when inference is attempted with uninitialised running statistics."""


class Mode(str, enum.Enum):
    TRAIN = "train"
    INFER = "infer"


def same_ceil(length: int, kernel: int, stride: int) -> tuple[int, int]:
    """Output length and left padding for SAME-ceil windows."""
    if length < 1 or kernel < 1 or stride < 1:
        raise ValueError(f"need length, kernel, stride >= 1, got {length}, {kernel}, {stride}")
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return out, total // 2


def _as_batch(x, op):
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeError(f"{op}: expected (length, channels) or (batch, length, channels), got shape {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


@dataclass
class ConvParams:
    weight: np.ndarray  # (kernel_size, in_channels, out_channels)
    bias: np.ndarray  # (out_channels,)
    stride: int = 1

    def __post_init__(self):
        if self.weight.ndim != 3:
            raise ShapeError(f"conv weight must be (kernel, in, out), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[2],):
            raise ShapeError(f"conv bias shape {self.bias.shape} does not match weight {self.weight.shape}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def kernel_size(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[2]


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.99
    # False until the first training batch (or an explicit load) fills the
    # running statistics
    initialized: bool = False

    def __post_init__(self):
        c = self.gamma.shape
        if not (self.beta.shape == self.running_mean.shape == self.running_var.shape == c) or len(c) != 1:
            raise ShapeError("batch-norm vectors must share one (channels,) shape")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")

    @property
    def channels(self):
        return self.gamma.shape[0]

    @classmethod
    def fresh(cls, channels, dtype=np.float32, **kw):
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype), **kw)


@dataclass
class LinearParams:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"linear weight {self.weight.shape} / bias {self.bias.shape} inconsistent")


class ConvGrads(NamedTuple):
    weight: np.ndarray
    bias: np.ndarray


class LinearGrads(NamedTuple):
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class ConvSaved:
    x: np.ndarray
    pad_left: int
    stride: int
    squeeze: bool


def conv1d_forward(x: FeatureMap, p: ConvParams, padding: str = "same"):
    if padding != "same":
        raise ValueError(f"only SAME-ceil padding is supported, got {padding!r}")
    xb, squeeze = _as_batch(x, "conv1d")
    if xb.shape[2] != p.in_channels:
        raise ShapeError(f"conv1d: input {xb.shape} has {xb.shape[2]} channels, kernel {p.weight.shape} expects {p.in_channels}")
    xb = np.ascontiguousarray(xb, dtype=p.weight.dtype)
    out_len, pad_left = same_ceil(xb.shape[1], p.kernel_size, p.stride)
    y = kernels.active.conv1d_forward(xb, p.weight, p.bias, p.stride, pad_left, out_len)
    return _unbatch(y, squeeze), ConvSaved(xb, pad_left, p.stride, squeeze)


def conv1d_backward(grad_out: FeatureMap, saved: ConvSaved, p: ConvParams):
    if saved is None or saved.x is None:
        raise ValueError("conv1d_backward needs the activations saved by conv1d_forward")
    g, _ = _as_batch(grad_out, "conv1d_backward")
    out_len, _ = same_ceil(saved.x.shape[1], p.kernel_size, saved.stride)
    expected = (saved.x.shape[0], out_len, p.out_channels)
    if g.shape != expected:
        raise ShapeError(f"conv1d_backward: grad {g.shape} does not match forward output {expected}")
    g = np.ascontiguousarray(g, dtype=p.weight.dtype)
    gx, gw, gb = kernels.active.conv1d_backward(g, saved.x, p.weight, saved.stride, saved.pad_left)
    return _unbatch(gx, saved.squeeze), ConvGrads(gw, gb)


@dataclass
class PoolSaved:
    length: int
    window: int
    stride: int
    pad_left: int
    squeeze: bool


def avgpool1d(x: FeatureMap, window: int, stride: int):
    if window < 1 or stride < 1:
        raise ValueError(f"pool window and stride must be >= 1, got {window}, {stride}")
    xb, squeeze = _as_batch(x, "avgpool1d")
    xb = np.ascontiguousarray(xb)
    out_len, pad_left = same_ceil(xb.shape[1], window, stride)
    y = kernels.active.avgpool1d_forward(xb, window, stride, pad_left, out_len)
    return _unbatch(y, squeeze), PoolSaved(xb.shape[1], window, stride, pad_left, squeeze)


def avgpool1d_backward(grad_out: FeatureMap, saved: PoolSaved):
    g, _ = _as_batch(grad_out, "avgpool1d_backward")
    out_len, _ = same_ceil(saved.length, saved.window, saved.stride)
    if g.shape[1] != out_len:
        raise ShapeError(f"avgpool1d_backward: grad length {g.shape[1]} != forward output length {out_len}")
    gx = kernels.active.avgpool1d_backward(np.ascontiguousarray(g), saved.length, saved.window,
                                           saved.stride, saved.pad_left)
    return _unbatch(gx, saved.squeeze)


@dataclass
class GlobalPoolSaved:
    length: int


def global_avgpool(x: FeatureMap):
    """Mean over every timestamp: ``(batch, length, c) -> (batch, c)``."""
    xb, _ = _as_batch(x, "global_avgpool")
    return xb.mean(axis=1), GlobalPoolSaved(xb.shape[1])


def global_avgpool_backward(grad_out, saved: GlobalPoolSaved):
    g = np.asarray(grad_out)
    return np.repeat((g / saved.length)[:, None, :], saved.length, axis=1)


@dataclass
class BatchNormSaved:
    mode: Mode
    x_hat: np.ndarray
    inv_std: np.ndarray
    squeeze: bool


def batchnorm_forward(x: FeatureMap, p: BatchNormParams, mode: Mode = Mode.TRAIN, update_stats: bool = True):
    """Per-channel normalisation over the (batch, time) axes.

    In train mode the batch statistics normalise the input and, unless
    ``update_stats`` is false, fold into the running statistics:
    ``running = momentum * running + (1 - momentum) * batch``. The first
    update copies the batch statistics outright.
    """
    mode = Mode(mode)
    xb, squeeze = _as_batch(x, "batchnorm")
    if xb.shape[2] != p.channels:
        raise ShapeError(f"batchnorm: input has {xb.shape[2]} channels, params have {p.channels}")
    xb = np.ascontiguousarray(xb, dtype=p.gamma.dtype)
    k = kernels.active
    if mode is Mode.TRAIN:
        if xb.shape[0] * xb.shape[1] < 2:
            raise ValueError("batchnorm in train mode needs at least 2 elements per channel")
        y, x_hat, mean, var, inv_std = k.batchnorm_train_forward(xb, p.gamma, p.beta, p.eps)
        if update_stats:
            if p.initialized:
                p.running_mean *= p.momentum
                p.running_mean += (1 - p.momentum) * mean
                p.running_var *= p.momentum
                p.running_var += (1 - p.momentum) * var
            else:
                p.running_mean[...] = mean
                p.running_var[...] = var
                p.initialized = True
        return _unbatch(y, squeeze), BatchNormSaved(mode, x_hat, inv_std, squeeze)
    if not p.initialized:
        raise BatchNormStateError("batchnorm inference before any training update; load running statistics first")
    y = k.batchnorm_infer_forward(xb, p.gamma, p.beta, p.running_mean, p.running_var, p.eps)
    inv_std = (1.0 / np.sqrt(p.running_var + p.eps)).astype(xb.dtype)
    x_hat = (xb - p.running_mean) * inv_std
    return _unbatch(y, squeeze), BatchNormSaved(mode, x_hat, inv_std, squeeze)


def batchnorm_backward(grad_out: FeatureMap, saved: BatchNormSaved, p: BatchNormParams):
    g, _ = _as_batch(grad_out, "batchnorm_backward")
    if g.shape != saved.x_hat.shape:
        raise ShapeError(f"batchnorm_backward: grad {g.shape} != forward output {saved.x_hat.shape}")
    g = np.ascontiguousarray(g, dtype=p.gamma.dtype)
    if saved.mode is Mode.TRAIN:
        gx, ggamma, gbeta = kernels.active.batchnorm_train_backward(g, saved.x_hat, p.gamma, saved.inv_std)
    else:
        gbeta = g.sum(axis=(0, 1))
        ggamma = (g * saved.x_hat).sum(axis=(0, 1))
        gx = g * (p.gamma * saved.inv_std)
    return _unbatch(gx, saved.squeeze), ggamma, gbeta


@dataclass
class ReluSaved:
    x: np.ndarray


def relu(x: FeatureMap):
    x = np.ascontiguousarray(x)
    xb, squeeze = _as_batch(x, "relu")
    y = kernels.active.relu_forward(xb)
    return _unbatch(y, squeeze), ReluSaved(x)


def relu_backward(grad_out, saved: ReluSaved):
    g = np.asarray(grad_out)
    if g.shape != saved.x.shape:
        raise ShapeError(f"relu_backward: grad {g.shape} != input {saved.x.shape}")
    gb, squeeze = _as_batch(np.ascontiguousarray(g, dtype=saved.x.dtype), "relu_backward")
    xb, _ = _as_batch(saved.x, "relu_backward")
    return _unbatch(kernels.active.relu_backward(gb, xb), squeeze)


def concat_channels(xs: list[FeatureMap]) -> FeatureMap:
    """Stack feature maps along the channel axis, in argument order."""
    if not xs:
        raise ValueError("concat_channels needs at least one feature map")
    if len({x.shape[:-1] for x in xs}) != 1:
        raise ShapeError(f"concat_channels: length/batch mismatch {[x.shape for x in xs]}")
    if len(xs) == 1:
        return xs[0]
    return np.concatenate(xs, axis=-1)


def split_channels(grad: FeatureMap, sizes: list[int]) -> list[FeatureMap]:
    """Inverse of :func:`concat_channels` for gradients."""
    if sum(sizes) != grad.shape[-1]:
        raise ShapeError(f"split sizes {sizes} do not sum to {grad.shape[-1]} channels")
    return np.split(grad, np.cumsum(sizes)[:-1], axis=-1)


@dataclass
class LinearSaved:
    x: np.ndarray
    squeeze: bool = field(default=False)


def linear_forward(x, p: LinearParams):
    x = np.asarray(x, dtype=p.weight.dtype)
    squeeze = x.ndim == 1
    xb = x[None] if squeeze else x
    if xb.ndim != 2 or xb.shape[1] != p.weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {p.weight.shape}")
    y = xb @ p.weight.T + p.bias
    return (y[0] if squeeze else y), LinearSaved(xb, squeeze)


def linear_backward(grad_out, saved: LinearSaved, p: LinearParams):
    g = np.asarray(grad_out, dtype=p.weight.dtype)
    gb = g[None] if saved.squeeze else g
    if gb.shape != (saved.x.shape[0], p.weight.shape[0]):
        raise ShapeError(f"linear_backward: grad {g.shape} does not match output")
    gx = gb @ p.weight
    return (gx[0] if saved.squeeze else gx), LinearGrads(gb.T @ saved.x, gb.sum(axis=0))

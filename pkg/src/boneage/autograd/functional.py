"""Differentiable operations on :class:`Tensor`.

Layout for feature maps is NCHW. Every op accepts and returns tensors and keeps
the dtype of its inputs.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Function, ShapeError, Tensor


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    # numpy semantics: trailing-aligned, each pair equal or one of them 1
    for da, db in zip(reversed(a.shape), reversed(b.shape)):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}")


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting expanded to reach ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------


class Add(Function):
    def forward(self, a, b):
        _check_broadcast(a, b)
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, grad):
        sa, sb = self.shapes
        return unbroadcast(grad, sa), unbroadcast(grad, sb)


class Sub(Function):
    def forward(self, a, b):
        _check_broadcast(a, b)
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, grad):
        sa, sb = self.shapes
        return unbroadcast(grad, sa), unbroadcast(-grad, sb)


class Hadamard(Function):
    def forward(self, a, b):
        _check_broadcast(a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (
            unbroadcast(grad * self.b, self.a.shape),
            unbroadcast(grad * self.a, self.b.shape),
        )


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product, ``b`` may broadcast over ``a``."""
    return Hadamard.apply(a, b)


def zip_elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "hadamard":
        return hadamard(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        # keep the open interval (0, 1) even where the float type saturates
        fi = np.finfo(x.dtype)
        np.clip(out, fi.tiny, 1.0 - fi.epsneg, out=out)
        self.out = out
        return out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Affine(Function):
    def forward(self, x, alpha=1.0, beta=0.0):
        self.alpha = alpha
        return (alpha * x + beta).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.alpha,)


class Abs(Function):
    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)


class Square(Function):
    def forward(self, x):
        self.x = x
        return x * x

    def backward(self, grad):
        return (2.0 * grad * self.x,)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def affine(x: Tensor, alpha: float, beta: float) -> Tensor:
    """``alpha * x + beta`` with constant scalars."""
    return Affine.apply(x, alpha=alpha, beta=beta)


def absolute(x: Tensor) -> Tensor:
    """|x|; the subgradient at 0 is 0."""
    return Abs.apply(x)


def square(x: Tensor) -> Tensor:
    return Square.apply(x)


def map_elementwise(x: Tensor, kind: str, alpha: float = 1.0, beta: float = 0.0) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "affine":
        return affine(x, alpha, beta)
    raise ValueError(f"unknown map kind {kind!r}")


# -- linear algebra and shape --------------------------------------------------


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


class Reshape(Function):
    def forward(self, x, shape=()):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


class Concat(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
            raise ShapeError(f"cannot concatenate features of shapes {a.shape} and {b.shape}")
        self.split = a.shape[1]
        return np.concatenate([a, b], axis=1)

    def backward(self, grad):
        return grad[:, : self.split], grad[:, self.split :]


def concat_features(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate ``[N, F]`` and ``[N, G]`` along the feature axis."""
    return Concat.apply(a, b)


def _norm_axes(axes: Optional[Sequence[int]], ndim: int) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    if not axes and ndim:
        raise ValueError("empty reduction set")
    for a in axes:
        if not -ndim <= a < ndim:
            raise ValueError(f"axis {a} out of range for rank {ndim}")
    return tuple(sorted({a % ndim for a in axes}))


class ReduceSum(Function):
    def forward(self, x, axes=()):
        self.in_shape = x.shape
        self.axes = axes
        return x.sum(axis=axes)

    def backward(self, grad):
        g = np.expand_dims(grad, self.axes) if self.axes else grad
        return (np.broadcast_to(g, self.in_shape).copy(),)


class ReduceMean(Function):
    def forward(self, x, axes=()):
        self.in_shape = x.shape
        self.axes = axes
        self.count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
        return x.mean(axis=axes)

    def backward(self, grad):
        g = np.expand_dims(grad, self.axes) if self.axes else grad
        return (np.broadcast_to(g / self.count, self.in_shape).copy(),)


def reduce_sum(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    return ReduceSum.apply(x, axes=_norm_axes(axes, x.ndim))


def reduce_mean(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Arithmetic mean over ``axes`` (all axes when None)."""
    if x.size == 0:
        raise ValueError("mean of an empty tensor")
    return ReduceMean.apply(x, axes=_norm_axes(axes, x.ndim))


# -- convolution, pooling, resampling ----------------------------------------


def _pad_hw(x: np.ndarray, pad: int, value: float = 0.0) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


class Conv2d(Function):
    def forward(self, x, w, b, stride=1, padding=0):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv2d input {x.shape} incompatible with weight {w.shape}")
        kh, kw = w.shape[2:]
        H, W = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
        if kh > H or kw > W:
            raise ShapeError(f"kernel {(kh, kw)} larger than padded input {(H, W)}")
        xp = _pad_hw(x, padding)
        # (N, C, Ho, Wo, kh, kw) view, strided
        cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        self.cols = cols
        self.x_shape, self.w = x.shape, w
        self.stride, self.padding = stride, padding
        out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, F
        out = out.transpose(0, 3, 1, 2) + b.reshape(1, -1, 1, 1)
        return np.ascontiguousarray(out)

    def backward(self, grad):
        w, s, p = self.w, self.stride, self.padding
        kh, kw = w.shape[2:]
        N, C, H, W = self.x_shape
        Ho, Wo = grad.shape[2:]
        gb = grad.sum(axis=(0, 2, 3))
        gw = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 2, 3]))  # F, C, kh, kw
        dcols = np.tensordot(grad, w, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
        dxp = np.zeros((N, C, H + 2 * p, W + 2 * p), dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += dcols[..., i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p : p + H, p : p + W] if p else dxp
        return dx, gw.astype(w.dtype, copy=False), gb


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) with zero padding."""
    return Conv2d.apply(x, w, b, stride=stride, padding=padding)


class MaxPool2d(Function):
    def forward(self, x, window=2, stride=2, padding=0):
        kh = kw = window
        H, W = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
        if kh > H or kw > W:
            raise ShapeError(f"pool window {window} exceeds input {x.shape[2:]} (padding {padding})")
        xp = _pad_hw(x, padding, -np.inf)
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        flat = win.reshape(win.shape[:4] + (kh * kw,))
        # argmax returns the first maximum in row-major window order
        idx = flat.argmax(axis=-1)
        self.idx, self.xp_shape, self.x_shape = idx, xp.shape, x.shape
        self.window, self.stride, self.padding = window, stride, padding
        return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        k, s, p = self.window, self.stride, self.padding
        Ho, Wo = grad.shape[2:]
        dxp = np.zeros(self.xp_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                hit = self.idx == i * k + j
                dxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += grad * hit
        H, W = self.x_shape[2:]
        return (dxp[:, :, p : p + H, p : p + W],)


def maxpool2d(x: Tensor, window: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling; padded cells never win. Gradient goes to the first
    maximum of each window in row-major order."""
    return MaxPool2d.apply(x, window=window, stride=stride, padding=padding)


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Corner-aligned linear interpolation weights, shape ``(n_out, n_in)``.

    Output index ``o`` samples source coordinate ``o * (n_in - 1) / (n_out - 1)``;
    a single output samples index 0.
    """
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_out == 1 or n_in == 1:
        m[:, 0] = 1.0
        return m
    src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(src).astype(int), n_in - 2)
    frac = src - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


class UpsampleBilinear(Function):
    def forward(self, x, out_h=1, out_w=1):
        if out_h < 1 or out_w < 1:
            raise ValueError(f"output size must be positive, got {(out_h, out_w)}")
        H, W = x.shape[-2:]
        if (H, W) == (out_h, out_w):
            self.ah = self.aw = None
            return x.copy()
        self.ah = interp_matrix(H, out_h, x.dtype)
        self.aw = interp_matrix(W, out_w, x.dtype)
        return np.matmul(np.matmul(self.ah, x), self.aw.T)

    def backward(self, grad):
        if self.ah is None:
            return (grad,)
        return (np.matmul(np.matmul(self.ah.T, grad), self.aw),)


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    return UpsampleBilinear.apply(x, out_h=out_h, out_w=out_w)


# -- normalization -------------------------------------------------------------


BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class BatchNorm2d(Function):
    def forward(self, x, gamma, beta, running_mean=None, running_var=None, training=True,
                momentum=BN_MOMENTUM, eps=BN_EPS):
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            if running_mean is not None:
                running_mean *= 1.0 - momentum
                running_mean += momentum * mean
                running_var *= 1.0 - momentum
                running_var += momentum * var
        else:
            mean, var = running_mean, running_var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        self.training, self.xhat, self.inv_std, self.gamma = training, xhat, inv_std, gamma
        out = xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)
        return out.astype(x.dtype, copy=False)

    def backward(self, grad):
        gamma = self.gamma.reshape(1, -1, 1, 1)
        inv_std = self.inv_std.reshape(1, -1, 1, 1)
        xhat = self.xhat
        g_gamma = (grad * xhat).sum(axis=(0, 2, 3))
        g_beta = grad.sum(axis=(0, 2, 3))
        gxhat = grad * gamma
        if self.training:
            m = grad.shape[0] * grad.shape[2] * grad.shape[3]
            dx = inv_std / m * (
                m * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            dx = gxhat * inv_std
        return dx.astype(grad.dtype, copy=False), g_gamma, g_beta


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: Optional[np.ndarray] = None,
                running_var: Optional[np.ndarray] = None,
                training: bool = True) -> Tensor:
    """Per-channel standardization of an NCHW tensor.

    In training mode batch statistics (biased variance) are used and the
    running buffers, when given, are updated in place with momentum 0.1.
    """
    return BatchNorm2d.apply(x, gamma, beta, running_mean=running_mean,
                             running_var=running_var, training=training)

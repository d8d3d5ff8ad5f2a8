"""RoIAlign and the detection-head losses, as standalone differentiable ops."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .autograd import Function, ShapeError, Tensor
from .autograd import functional as F

DEFAULT_SAMPLES_PER_BIN = 2


@dataclass(frozen=True)
class RoiBox:
    """Box in continuous feature-map coordinates; pixel ``i`` sits at ``i``."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"invalid box {self}: need x2 >= x1 and y2 >= y1")


@dataclass(frozen=True)
class DetectionTarget:
    label: int
    box: RoiBox
    mask: np.ndarray

    def check_resolution(self, size: int) -> None:
        if np.shape(self.mask) != (size, size):
            raise ValueError(f"target mask {np.shape(self.mask)} does not match mask head {size}x{size}")


def _axis_weights(coords: np.ndarray, n: int) -> np.ndarray:
    """Linear-interpolation weights, shape ``(len(coords), n)``, with the
    coordinates clamped onto ``[0, n - 1]``."""
    c = np.clip(coords, 0.0, n - 1)
    lo = np.floor(c).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = c - lo
    w = np.zeros((len(c), n))
    rows = np.arange(len(c))
    np.add.at(w, (rows, lo), 1.0 - frac)
    np.add.at(w, (rows, hi), frac)
    return w


def roi_align_weights(H: int, W: int, roi: RoiBox, out_h: int, out_w: int,
                      samples_per_bin: int = DEFAULT_SAMPLES_PER_BIN) -> np.ndarray:
    """Sparse-in-spirit pooling matrix of shape ``(out_h * out_w, H * W)``.

    Bin ``(i, j)`` averages ``s * s`` bilinear samples on a regular grid inside
    the bin. Bilinear weights are separable, so each bin's weights are the
    outer product of its row and column weights averaged over samples.
    """
    if samples_per_bin < 1:
        raise ValueError("samples_per_bin must be >= 1")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    s = samples_per_bin
    bin_h = (roi.y2 - roi.y1) / out_h
    bin_w = (roi.x2 - roi.x1) / out_w
    offs = (np.arange(s) + 0.5) / s
    ys = roi.y1 + (np.arange(out_h)[:, None] + offs[None, :]) * bin_h  # (out_h, s)
    xs = roi.x1 + (np.arange(out_w)[:, None] + offs[None, :]) * bin_w
    wy = _axis_weights(ys.ravel(), H).reshape(out_h, s, H).mean(axis=1)  # (out_h, H)
    wx = _axis_weights(xs.ravel(), W).reshape(out_w, s, W).mean(axis=1)  # (out_w, W)
    return np.einsum("ah,bw->abhw", wy, wx).reshape(out_h * out_w, H * W)


class RoiAlign(Function):
    def forward(self, feat, roi=None, out_h=1, out_w=1, samples_per_bin=DEFAULT_SAMPLES_PER_BIN):
        if feat.ndim != 3:
            raise ShapeError(f"roi_align expects a [C, H, W] feature map, got {feat.shape}")
        C, H, W = feat.shape
        self.weights = roi_align_weights(H, W, roi, out_h, out_w, samples_per_bin).astype(feat.dtype)
        self.in_shape = feat.shape
        return (feat.reshape(C, H * W) @ self.weights.T).reshape(C, out_h, out_w)

    def backward(self, grad):
        C = grad.shape[0]
        return ((grad.reshape(C, -1) @ self.weights).reshape(self.in_shape),)


def roi_align(feat: Tensor, roi: RoiBox, out_h: int, out_w: int,
              samples_per_bin: int = DEFAULT_SAMPLES_PER_BIN) -> Tensor:
    """Quantization-free region pooling of a ``[C, H, W]`` map.

    Sample points outside the map are clamped to its border. A zero-area box
    samples its single collapsed point.
    """
    return RoiAlign.apply(feat, roi=roi, out_h=out_h, out_w=out_w, samples_per_bin=samples_per_bin)


class SoftmaxCrossEntropy(Function):
    def forward(self, logits, target=0):
        shifted = logits - logits.max()
        log_z = np.log(np.exp(shifted).sum())
        self.probs = np.exp(shifted - log_z)
        self.target = target
        return np.asarray(log_z - shifted[target], dtype=logits.dtype)

    def backward(self, grad):
        g = self.probs.copy()
        g[self.target] -= 1.0
        return (grad * g,)


def cls_loss(logits: Tensor, true_class: int) -> Tensor:
    """Softmax cross-entropy of a ``[K]`` logit vector."""
    if logits.ndim != 1:
        raise ShapeError(f"cls_loss expects [K] logits, got {logits.shape}")
    if not 0 <= true_class < logits.shape[0]:
        raise ValueError(f"class {true_class} out of range for {logits.shape[0]} logits")
    return SoftmaxCrossEntropy.apply(logits, target=int(true_class))


class SmoothL1(Function):
    def forward(self, pred, target):
        if pred.shape != target.shape:
            raise ShapeError(f"box_loss shapes differ: {pred.shape} vs {target.shape}")
        d = pred - target
        ad = np.abs(d)
        self.d, self.n = d, d.size
        return np.asarray(np.where(ad < 1.0, 0.5 * d * d, ad - 0.5).mean(), dtype=pred.dtype)

    def backward(self, grad):
        g = np.where(np.abs(self.d) < 1.0, self.d, np.sign(self.d)) * (grad / self.n)
        return g, -g


def box_loss(pred: Tensor, target: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean smooth-L1 over the box deltas: ``0.5 d^2`` if ``|d| < 1`` else ``|d| - 0.5``."""
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=pred.dtype))
    return SmoothL1.apply(pred, target)


class BinaryCrossEntropyWithLogits(Function):
    def forward(self, logits, target):
        self.x, self.t = logits, target
        loss = np.maximum(logits, 0) - logits * target + np.log1p(np.exp(-np.abs(logits)))
        return np.asarray(loss.mean(), dtype=logits.dtype)

    def backward(self, grad):
        p = 1.0 / (1.0 + np.exp(-self.x))
        return (grad * (p - self.t) / self.x.size, None)


def mask_loss(pred_logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean per-pixel binary cross-entropy on ``sigmoid(pred_logits)``."""
    target = np.asarray(target)
    if pred_logits.shape != target.shape:
        raise ShapeError(f"mask logits {pred_logits.shape} do not match target {target.shape}")
    t = Tensor(target.astype(pred_logits.dtype))
    return BinaryCrossEntropyWithLogits.apply(pred_logits, t)


def _scalar(x: Union[Tensor, float]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(float(x), dtype=np.float64))


def composite_loss(cls: Union[Tensor, float], box: Union[Tensor, float],
                   mask: Union[Tensor, float], reg: Union[Tensor, float]) -> Tensor:
    """Unweighted sum of the four task losses."""
    total = F.add(_scalar(cls), _scalar(box))
    total = F.add(total, _scalar(mask))
    return F.add(total, _scalar(reg))

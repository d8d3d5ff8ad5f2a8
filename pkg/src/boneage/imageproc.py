"""Classical hand segmentation and training-time augmentation.

Images are 2-D ``uint8`` arrays (row-major, height x width); masks are 2-D
``bool`` arrays of the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .autograd.functional import interp_matrix

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class EmptyForeground(ValueError):
    """No foreground could be extracted; the radiograph is unusable."""


def _round_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def histogram_equalize(img: np.ndarray) -> np.ndarray:
    """Classic CDF equalization.

    Each level ``v`` maps to ``round((cdf(v) - cdf_min) / (N - cdf_min) * 255)``,
    where ``cdf_min`` is the CDF at the darkest level present. A constant image
    is returned unchanged.
    """
    img = np.asarray(img, dtype=np.uint8)
    hist = np.bincount(img.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = img.size
    cdf_min = cdf[np.flatnonzero(hist)[0]]
    if cdf_min == n:
        return img.copy()
    lut = _round_u8((cdf - cdf_min) / (n - cdf_min) * 255.0)
    return lut[img]


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


_SOBEL_SMOOTH = np.array([1.0, 2.0, 1.0])
_SOBEL_DIFF = np.array([-1.0, 0.0, 1.0])


def gradients(img: np.ndarray, sigma: float) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian-blurred Sobel derivatives ``(gx, gy)``; x runs along columns,
    y down the rows. Borders replicate the edge pixel."""
    k = gaussian_kernel(sigma)
    f = np.asarray(img, dtype=np.float64)
    f = ndimage.correlate1d(f, k, axis=0, mode="nearest")
    f = ndimage.correlate1d(f, k, axis=1, mode="nearest")
    gx = ndimage.correlate1d(ndimage.correlate1d(f, _SOBEL_SMOOTH, axis=0, mode="nearest"),
                             _SOBEL_DIFF, axis=1, mode="nearest")
    gy = ndimage.correlate1d(ndimage.correlate1d(f, _SOBEL_SMOOTH, axis=1, mode="nearest"),
                             _SOBEL_DIFF, axis=0, mode="nearest")
    return gx, gy


def non_maximum_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Zero every pixel that is not a ridge along its gradient direction.

    Directions are quantized to 0/45/90/135 degrees. A pixel must be >= its
    backward neighbour and > its forward neighbour, so a symmetric ridge two
    pixels wide keeps exactly one of them.
    """
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = np.zeros(mag.shape, dtype=np.int8)  # 0: along x
    sector[(angle >= 22.5) & (angle < 67.5)] = 1  # down-right diagonal
    sector[(angle >= 67.5) & (angle < 112.5)] = 2  # along y
    sector[(angle >= 112.5) & (angle < 157.5)] = 3  # down-left diagonal

    p = np.pad(mag, 1)
    h, w = mag.shape

    def shifted(dr: int, dc: int) -> np.ndarray:
        return p[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]

    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (dr, dc) in offsets.items():
        fwd, back = shifted(dr, dc), shifted(-dr, -dc)
        keep |= (sector == s) & (mag >= back) & (mag > fwd)
    return np.where(keep, mag, 0.0)


def canny(img: np.ndarray, sigma: float = 1.4, low: float = 0.1, high: float = 0.2) -> np.ndarray:
    """Canny edge map.

    ``low`` and ``high`` are fractions of the largest post-blur gradient
    magnitude. Weak pixels survive only when 8-connected to a strong one.
    """
    if low <= 0 or high <= 0 or low > high:
        raise ValueError(f"thresholds must satisfy 0 < low <= high, got low={low}, high={high}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    gx, gy = gradients(img, sigma)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-9:
        return np.zeros(mag.shape, dtype=bool)
    thin = non_maximum_suppression(mag, gx, gy)
    weak = thin >= low * peak
    strong = thin >= high * peak
    labels, _ = ndimage.label(weak, structure=EIGHT_CONNECTED)
    hit = np.unique(labels[strong])
    return np.isin(labels, hit[hit > 0])


def largest_component_mask(edges: np.ndarray, img: Optional[np.ndarray] = None) -> np.ndarray:
    """Hand mask from an edge map.

    A 3x3 dilation closes 1-px gaps and enclosed holes are filled; a matching
    3x3 erosion undoes the dilation's growth. A 3x3 opening then discards open
    contours (lines at most 2 px wide) so they cannot outvote a smaller closed
    region, unless nothing else is left. Of what remains, the 8-connected
    region with the most pixels is kept, holes filled.
    """
    edges = np.asarray(edges, dtype=bool)
    if img is not None and np.shape(img) != edges.shape:
        raise ValueError(f"edge map {edges.shape} does not match image {np.shape(img)}")
    if not edges.any():
        raise EmptyForeground("edge map is empty; no hand foreground found")
    closed = ndimage.binary_dilation(edges, structure=EIGHT_CONNECTED)
    filled = ndimage.binary_fill_holes(closed)
    filled = ndimage.binary_erosion(filled, structure=EIGHT_CONNECTED, border_value=1)
    core = ndimage.binary_erosion(filled, structure=EIGHT_CONNECTED, border_value=1)
    opened = ndimage.binary_dilation(core, structure=EIGHT_CONNECTED) & filled
    region = opened if opened.any() else filled
    labels, count = ndimage.label(region, structure=EIGHT_CONNECTED)
    if count == 0:
        raise EmptyForeground("no foreground region survived gap closing")
    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    sizes[0] = 0
    return ndimage.binary_fill_holes(labels == int(np.argmax(sizes)))


def apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if np.shape(img) != np.shape(mask):
        raise ValueError(f"mask {np.shape(mask)} does not match image {np.shape(img)}")
    return np.where(mask, img, 0).astype(np.uint8)


def hand_mask(img: np.ndarray, sigma: float = 1.4, low: float = 0.1, high: float = 0.2) -> np.ndarray:
    """Equalize, detect edges, and extract the largest filled component."""
    edges = canny(histogram_equalize(img), sigma, low, high)
    return largest_component_mask(edges, img)


def resample_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Corner-aligned bilinear resample as float64 (no rounding)."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    h, w = np.shape(img)
    f = np.asarray(img, dtype=np.float64)
    if (h, w) == (out_h, out_w):
        return f.copy()
    return interp_matrix(h, out_h) @ f @ interp_matrix(w, out_w).T


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Corner-aligned bilinear resize, rounded back to 8 bit."""
    return _round_u8(resample_bilinear(img, out_w, out_h))


def resize_nearest(mask: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Corner-aligned nearest-neighbour resize (keeps masks binary)."""
    h, w = np.shape(mask)

    def src(n_in: int, n_out: int) -> np.ndarray:
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out, dtype=int)
        return np.floor(np.arange(n_out) * (n_in - 1) / (n_out - 1) + 0.5).astype(int)

    return np.asarray(mask)[np.ix_(src(h, out_h), src(w, out_w))]


def mirror(img: np.ndarray) -> np.ndarray:
    """Left-right flip."""
    return np.ascontiguousarray(np.asarray(img)[:, ::-1])


def rotate(img: np.ndarray, degrees: float, order: int) -> np.ndarray:
    """Rotate about the image centre; uncovered pixels become 0.

    ``order=1`` samples bilinearly, ``order=0`` takes the nearest neighbour.
    """
    if degrees == 0.0:
        return np.array(img)
    h, w = np.shape(img)
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    # output (r, c) -> input coordinates: inverse rotation about the centre
    matrix = np.array([[c, s], [-s, c]])
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = centre - matrix @ centre
    src = np.asarray(img, dtype=np.float64)
    out = ndimage.affine_transform(src, matrix, offset=offset, order=order, mode="constant", cval=0.0)
    if np.asarray(img).dtype == bool:
        return out > 0.5
    return _round_u8(out)


@dataclass(frozen=True)
class AugmentParams:
    crop_range: Tuple[float, float] = (0.85, 1.0)
    rotation_deg: float = 20.0
    mirror_prob: float = 0.5
    output_size: int = 64
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.crop_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop fractions must lie in (0, 1], got {self.crop_range}")
        if not 0.0 <= self.mirror_prob <= 1.0:
            raise ValueError(f"mirror probability must lie in [0, 1], got {self.mirror_prob}")
        if self.rotation_deg < 0:
            raise ValueError("rotation range must be non-negative")
        if self.output_size < 1:
            raise ValueError("output size must be positive")


@dataclass(frozen=True)
class AugmentDraw:
    """The random choices made for one augmented sample."""

    top: int
    left: int
    crop_h: int
    crop_w: int
    angle: float
    flip: bool


def draw_augmentation(shape: Tuple[int, int], p: AugmentParams, rng: np.random.Generator) -> AugmentDraw:
    h, w = shape
    frac = rng.uniform(*p.crop_range) if p.crop_range[0] < p.crop_range[1] else p.crop_range[0]
    ch = max(1, min(h, int(round(frac * h))))
    cw = max(1, min(w, int(round(frac * w))))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    angle = float(rng.uniform(-p.rotation_deg, p.rotation_deg)) if p.rotation_deg > 0 else 0.0
    flip = bool(rng.random() < p.mirror_prob)
    return AugmentDraw(top, left, ch, cw, angle, flip)


def apply_augmentation(img: np.ndarray, mask: np.ndarray, d: AugmentDraw, size: int):
    """Crop, rotate, mirror, resize; identical geometry for image and mask."""
    img = np.asarray(img)[d.top : d.top + d.crop_h, d.left : d.left + d.crop_w]
    mask = np.asarray(mask, dtype=bool)[d.top : d.top + d.crop_h, d.left : d.left + d.crop_w]
    img = rotate(img, d.angle, order=1)
    mask = rotate(mask, d.angle, order=0)
    if d.flip:
        img, mask = mirror(img), mirror(mask)
    return resize_bilinear(img, size, size), resize_nearest(mask, size, size)


def augment(img: np.ndarray, mask: np.ndarray, p: AugmentParams,
            rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Random crop, rotation and mirroring, then resize to ``p.output_size``.

    Without an explicit generator one is seeded from ``p.seed``.
    """
    if np.shape(img) != np.shape(mask):
        raise ValueError(f"mask {np.shape(mask)} does not match image {np.shape(img)}")
    rng = np.random.default_rng(p.seed) if rng is None else rng
    return apply_augmentation(img, mask, draw_augmentation(np.shape(img), p, rng), p.output_size)

"""Preprocessing shared by training, evaluation and prediction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .imageproc import apply_mask, hand_mask, resize_bilinear


@dataclass(frozen=True)
class PreprocessConfig:
    sigma: float = 1.4
    low: float = 0.1
    high: float = 0.2
    input_size: int = 64


def segment(img: np.ndarray, cfg: PreprocessConfig, enabled: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Masked image and mask. With segmentation disabled the image passes
    through and the mask covers everything."""
    img = np.asarray(img, dtype=np.uint8)
    if not enabled:
        return img, np.ones(img.shape, dtype=bool)
    mask = hand_mask(img, cfg.sigma, cfg.low, cfg.high)
    return apply_mask(img, mask), mask


def to_input(img: np.ndarray, size: int) -> np.ndarray:
    """uint8 image to a ``[1, size, size]`` float32 array in [0, 1]."""
    img = np.asarray(img)
    if img.shape != (size, size):
        img = resize_bilinear(img, size, size)
    return (img.astype(np.float32) / np.float32(255.0))[None]


def preprocess(img: np.ndarray, cfg: PreprocessConfig, segmentation: bool = True,
               mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Network input for one radiograph, as used at train and serve time."""
    if mask is None:
        masked, _ = segment(img, cfg, segmentation)
    else:
        masked = apply_mask(img, mask) if segmentation else np.asarray(img, dtype=np.uint8)
    return to_input(masked, cfg.input_size)

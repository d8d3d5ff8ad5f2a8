"""Render attention captures as color heatmaps."""

from __future__ import annotations

import numpy as np

from ..pnm import write_ppm
from .attention import AttentionCapture


def _color_table() -> np.ndarray:
    # blue -> cyan -> green -> yellow -> red
    anchors = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    rgb = np.array([[0, 0, 255], [0, 255, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]], float)
    t = np.linspace(0.0, 1.0, 256)
    table = np.stack([np.interp(t, anchors, rgb[:, k]) for k in range(3)], axis=1)
    return np.floor(table + 0.5).astype(np.uint8)


COLOR_TABLE = _color_table()
MID_INDEX = 128


def heatmap_indices(capture: AttentionCapture, sample: int = 0) -> np.ndarray:
    """Color-table indices of the channel-mean logits, min-max scaled per map."""
    logits = np.asarray(capture.logits, dtype=np.float64)
    if logits.ndim == 4:
        logits = logits[sample]
    m = logits.mean(axis=0)
    lo, hi = m.min(), m.max()
    if not hi > lo:
        return np.full(m.shape, MID_INDEX, dtype=np.uint8)
    v = (m - lo) / (hi - lo)
    return np.floor(v * 255 + 0.5).astype(np.uint8)


def export_heatmap(capture: AttentionCapture, sample: int = 0) -> np.ndarray:
    """``[h, w, 3]`` uint8 RGB image for one sample of a capture."""
    return COLOR_TABLE[heatmap_indices(capture, sample)]


def save_heatmap(path, capture: AttentionCapture, sample: int = 0) -> None:
    write_ppm(path, export_heatmap(capture, sample))

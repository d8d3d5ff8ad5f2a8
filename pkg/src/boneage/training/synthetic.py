"""Synthetic hand radiographs with label-correlated distractor tags.

Each image holds one bright, roughly elliptical "hand" whose radius encodes the
bone age, an inner brighter "carpal" core, optional bright bars along the
image border, and a few rectangular tags in the corners. In the training split
the tags' brightness and size follow the label; in the validation split they
are drawn independently of it. A model that reads the tags therefore
generalizes badly, while one that only sees the segmented hand does not.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

_SPLIT_CODES = {"train": 0, "val": 1}


@dataclass(frozen=True)
class Sample:
    image_id: str
    male: bool
    age: float  # months

    def __post_init__(self):
        if not np.isfinite(self.age) or self.age < 0:
            raise ValueError(f"age must be finite and non-negative, got {self.age}")


@dataclass(frozen=True)
class SyntheticSpec:
    image_size: int = 64
    radius_range: Tuple[float, float] = (8.0, 16.0)
    age_intercept: float = 12.0
    months_per_pixel: float = 15.0
    gender_offset: float = 12.0
    tag_count: int = 2
    tag_intensity: Tuple[int, int] = (90, 255)
    border_bars: bool = True
    label_noise: float = 1.0
    seed: int = 0

    def age_from_radius(self, radius: float) -> float:
        return self.age_intercept + self.months_per_pixel * (radius - self.radius_range[0])

    @property
    def age_bounds(self) -> Tuple[float, float]:
        lo = self.age_from_radius(self.radius_range[0])
        hi = self.age_from_radius(self.radius_range[1]) + max(self.gender_offset, 0.0)
        return lo, hi


@dataclass
class SyntheticCase:
    image: np.ndarray
    sample: Sample
    hand: np.ndarray  # ground-truth hand pixels
    tags: np.ndarray  # ground-truth tag pixels
    bars: np.ndarray  # ground-truth border-bar pixels
    tag_level: float = field(default=0.0)  # mean tag intensity, for correlation checks


def _disk(size: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    """Anti-aliased ellipse coverage in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    # distance to the boundary in (approximate) pixels
    return np.clip((1.0 - d) * min(ry, rx) + 0.5, 0.0, 1.0)


def _render(spec: SyntheticSpec, rng: np.random.Generator, split: str, idx: int) -> SyntheticCase:
    s = spec.image_size
    r_lo, r_hi = spec.radius_range
    radius = float(rng.uniform(r_lo, r_hi))
    male = bool(rng.random() < 0.5)
    age = spec.age_from_radius(radius) + (spec.gender_offset if male else 0.0)
    age = max(0.0, age + float(rng.normal(0.0, spec.label_noise)) if spec.label_noise > 0 else age)

    img = np.full((s, s), 16.0)
    c = (s - 1) / 2.0
    cy, cx = c + rng.uniform(-2, 2), c + rng.uniform(-2, 2)
    elong = rng.uniform(1.05, 1.2)
    cover = _disk(s, cy, cx, radius * elong, radius)
    core = _disk(s, cy + 0.15 * radius, cx, 0.4 * radius, 0.4 * radius)
    img += cover * 110.0 + core * 60.0
    hand = cover > 0.5

    bars = np.zeros((s, s), dtype=bool)
    if spec.border_bars:
        w = max(2, s // 24)
        # at most two sides: four bars would frame (and so enclose) the whole image
        for side in rng.permutation(4)[: int(rng.integers(0, 3))]:
            if side == 0:
                bars[:w, :] = True
            elif side == 1:
                bars[-w:, :] = True
            elif side == 2:
                bars[:, :w] = True
            else:
                bars[:, -w:] = True
        img[bars] = rng.uniform(150, 230)

    lo, hi = spec.age_bounds
    t = np.clip((age - lo) / max(hi - lo, 1e-9), 0.0, 1.0)
    tags = np.zeros((s, s), dtype=bool)
    levels = []
    margin = max(2, s // 24) + 5
    corner_span = max(4, s // 8)
    corners = rng.permutation(4)[: spec.tag_count]
    for corner in corners:
        if split == "train":
            frac = float(np.clip(t + rng.normal(0.0, 0.03), 0.0, 1.0))
            size_frac = frac
        else:
            frac = float(rng.random())
            size_frac = float(rng.random())
        level = spec.tag_intensity[0] + frac * (spec.tag_intensity[1] - spec.tag_intensity[0])
        th = 3 + int(round(size_frac * (corner_span - 3)))
        tw = 3 + int(round((1 - 0.5 * size_frac) * (corner_span - 3)))
        top = margin if corner in (0, 1) else s - margin - th
        left = margin if corner in (0, 2) else s - margin - tw
        tags[top : top + th, left : left + tw] = True
        img[top : top + th, left : left + tw] = level
        levels.append(level)

    image = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    sample = Sample(f"{split}{idx:05d}", male, age)
    return SyntheticCase(image, sample, hand, tags, bars, float(np.mean(levels)) if levels else 0.0)


def make_synthetic(spec: SyntheticSpec, n: int, split: str = "train") -> List[SyntheticCase]:
    """Generate ``n`` cases for ``split`` ("train" or "val"), fully determined by
    ``spec.seed`` and the split name."""
    if n < 1:
        raise ValueError("need at least one sample")
    if split not in _SPLIT_CODES:
        raise ValueError(f"split must be 'train' or 'val', got {split!r}")
    rng = np.random.default_rng([spec.seed, _SPLIT_CODES[split]])
    return [_render(spec, rng, split, i) for i in range(n)]


def tag_label_correlation(cases: List[SyntheticCase]) -> float:
    levels = np.array([c.tag_level for c in cases])
    ages = np.array([c.sample.age for c in cases])
    if levels.std() == 0 or ages.std() == 0:
        return 0.0
    return float(np.corrcoef(levels, ages)[0, 1])

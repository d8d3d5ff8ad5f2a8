"""Residual attention regression network with gender fusion."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from ..autograd import ShapeError, Tensor
from ..autograd import functional as F
from .layers import BatchNorm2d, Conv2d, Linear, Module, ModuleList, ResidualUnit

MODULE_NAMES: Tuple[str, ...] = ("Att1_1", "Att2_1", "Att2_2", "Att3_1", "Att3_2", "Att3_3")
# modules per stage, fixed
STAGE_LAYOUT = (1, 2, 3)


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 64
    widths: Tuple[int, int, int] = (8, 16, 32)
    trunk_units: int = 2
    mask_depths: Tuple[int, int, int] = (3, 2, 1)
    feature_width: int = 16
    precision: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "mask_depths", tuple(int(d) for d in self.mask_depths))
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ValueError(f"widths must be three positive ints, got {self.widths}")
        if len(self.mask_depths) != 3 or min(self.mask_depths) < 1:
            raise ValueError(f"mask depths must be three ints >= 1, got {self.mask_depths}")
        if self.trunk_units < 1:
            raise ValueError("trunk_units must be >= 1")
        if self.feature_width < 1:
            raise ValueError("feature_width must be >= 1")
        if self.input_size < 16:
            raise ValueError(f"input_size must be >= 16, got {self.input_size}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def stage_sizes(self) -> Tuple[int, int, int]:
        """Spatial side length of the feature maps in each stage."""
        s = _pool_out(_conv_out(self.input_size, 7, 2, 3), 3, 2, 1)
        s2 = _conv_out(s, 3, 2, 1)
        s3 = _conv_out(s2, 3, 2, 1)
        return s, s2, s3


PAPER_SCALE = NetworkConfig(input_size=448, widths=(64, 128, 256), feature_width=256)
TINY_GRADCHECK = NetworkConfig(input_size=16, widths=(2, 2, 2), feature_width=2, precision="float64")


def _conv_out(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


_pool_out = _conv_out


@dataclass
class AttentionCapture:
    name: str
    logits: np.ndarray  # [N, C, h, w], before the sigmoid

    @property
    def spatial(self) -> Tuple[int, int]:
        return self.logits.shape[-2], self.logits.shape[-1]


@dataclass(frozen=True)
class AblationSpec:
    disabled: FrozenSet[str] = field(default_factory=frozenset)
    gender: bool = True
    segmentation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "disabled", frozenset(self.disabled))
        unknown = self.disabled - set(MODULE_NAMES)
        if unknown:
            raise ValueError(f"unknown attention modules {sorted(unknown)}; valid: {MODULE_NAMES}")

    @classmethod
    def parse(cls, text: str) -> "AblationSpec":
        """Parse a comma list such as ``"Att3_2,Att3_3"``, ``"gender"`` or ``"segmentation"``."""
        names, gender, seg = set(), True, True
        for tok in (t.strip() for t in text.split(",")):
            if not tok or tok == "none":
                continue
            if tok == "gender":
                gender = False
            elif tok == "segmentation":
                seg = False
            else:
                names.add(tok)
        return cls(frozenset(names), gender, seg)

    def label(self) -> str:
        parts = sorted(self.disabled)
        if not self.gender:
            parts.append("gender")
        if not self.segmentation:
            parts.append("segmentation")
        return ",".join(parts) or "none"


class AttentionModule(Module):
    """``x' = T(x) * (1 + M(x))`` with an hourglass soft-mask branch."""

    def __init__(self, name: str, channels: int, depth: int, trunk_units: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.name = name
        self.enabled = True
        self.trunk = ModuleList(ResidualUnit(channels, channels, rng, dtype=dtype) for _ in range(trunk_units))
        self.down = ModuleList(ResidualUnit(channels, channels, rng, dtype=dtype) for _ in range(depth))
        self.up = ModuleList(ResidualUnit(channels, channels, rng, dtype=dtype) for _ in range(depth))
        self.head_bn1 = BatchNorm2d(channels, dtype)
        self.head_conv1 = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.head_bn2 = BatchNorm2d(channels, dtype)
        self.head_conv2 = Conv2d(channels, channels, 1, rng, dtype=dtype)

    def trunk_forward(self, x: Tensor) -> Tensor:
        for ru in self.trunk:
            x = ru(x)
        return x

    def mask_logits(self, x: Tensor) -> Tensor:
        m, sizes = x, []
        for ru in self.down:
            sizes.append(m.shape[2:])
            m = ru(F.maxpool2d(m, 3, 2, 1))
        for ru, (h, w) in zip(self.up, reversed(sizes)):
            m = F.upsample_bilinear(ru(m), h, w)
        m = self.head_conv1(F.relu(self.head_bn1(m)))
        return self.head_conv2(F.relu(self.head_bn2(m)))

    def forward(self, x: Tensor, captures: Optional[List[AttentionCapture]] = None) -> Tensor:
        t = self.trunk_forward(x)
        if not self.enabled:
            return t
        logits = self.mask_logits(x)
        if captures is not None:
            captures.append(AttentionCapture(self.name, logits.data.copy()))
        return combine(t, F.sigmoid(logits))


def combine(t: Tensor, m: Tensor) -> Tensor:
    return F.hadamard(t, F.affine(m, 1.0, 1.0))


class AttentionNet(Module):
    def __init__(self, cfg: NetworkConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        dt = cfg.dtype
        rng = np.random.default_rng(seed)
        c1, c2, c3 = cfg.widths
        self.gender_enabled = True
        self.ablation = AblationSpec()
        self.stem_conv = Conv2d(1, c1, 7, rng, stride=2, padding=3, dtype=dt)
        self.stem_bn = BatchNorm2d(c1, dt)
        names = iter(MODULE_NAMES)
        stages = []
        for width, depth, count in zip(cfg.widths, cfg.mask_depths, STAGE_LAYOUT):
            stages.append([AttentionModule(next(names), width, depth, cfg.trunk_units, rng, dt)
                           for _ in range(count)])
        self.stage1 = ModuleList(stages[0])
        self.down1 = ResidualUnit(c1, c2, rng, stride=2, dtype=dt)
        self.stage2 = ModuleList(stages[1])
        self.down2 = ResidualUnit(c2, c3, rng, stride=2, dtype=dt)
        self.stage3 = ModuleList(stages[2])
        self.final_bn = BatchNorm2d(c3, dt)
        self.fc = Linear(c3, cfg.feature_width, rng, dt)
        self.out = Linear(cfg.feature_width + 1, 1, rng, dt)
        # regression target is standardized: age = offset + scale * raw
        self.register_buffer("age_offset", np.zeros(1, dtype=dt))
        self.register_buffer("age_scale", np.ones(1, dtype=dt))

    @property
    def attention_modules(self) -> List[AttentionModule]:
        return list(self.stage1) + list(self.stage2) + list(self.stage3)

    def module(self, name: str) -> AttentionModule:
        for m in self.attention_modules:
            if m.name == name:
                return m
        raise KeyError(f"no attention module named {name!r}")

    def set_target_scaling(self, offset: float, scale: float) -> None:
        if not scale > 0:
            raise ValueError("scale must be positive")
        self.age_offset[...] = offset
        self.age_scale[...] = scale

    def features(self, img: Tensor, captures: Optional[List[AttentionCapture]] = None) -> Tensor:
        x = F.relu(self.stem_bn(self.stem_conv(img)))
        x = F.maxpool2d(x, 3, 2, 1)
        for m in self.stage1:
            x = m(x, captures)
        x = self.down1(x)
        for m in self.stage2:
            x = m(x, captures)
        x = self.down2(x)
        for m in self.stage3:
            x = m(x, captures)
        x = F.reduce_mean(F.relu(self.final_bn(x)), axes=(2, 3))
        return F.relu(self.fc(x))

    def forward_raw(self, img, gender, captures: Optional[List[AttentionCapture]] = None) -> Tensor:
        """Standardized prediction ``(age - offset) / scale``, shape ``[N, 1]``."""
        dt = self.cfg.dtype
        img = img if isinstance(img, Tensor) else Tensor(np.asarray(img, dtype=dt))
        if img.dtype != dt:
            img = Tensor(img.data.astype(dt))
        g = np.asarray(gender.data if isinstance(gender, Tensor) else gender, dtype=dt)
        s = self.cfg.input_size
        if img.ndim != 4 or img.shape[1:] != (1, s, s):
            raise ShapeError(f"expected images [N, 1, {s}, {s}], got {img.shape}")
        g = g.reshape(-1, 1)
        if g.shape[0] != img.shape[0]:
            raise ShapeError(f"gender batch {g.shape[0]} does not match image batch {img.shape[0]}")
        if not self.gender_enabled:
            g = np.zeros_like(g)
        feats = self.features(img, captures)
        return self.out(F.concat_features(feats, Tensor(g)))

    def forward(self, img, gender, capture: bool = False):
        """Predicted age in months ``[N, 1]`` and the attention captures."""
        captures: Optional[List[AttentionCapture]] = [] if capture else None
        raw = self.forward_raw(img, gender, captures)
        age = F.affine(raw, float(self.age_scale[0]), float(self.age_offset[0]))
        return age, captures or []


def build_network(cfg: NetworkConfig, seed: int = 0) -> AttentionNet:
    return AttentionNet(cfg, seed)


def set_ablation(net: AttentionNet, spec: AblationSpec) -> AttentionNet:
    """Switch ``net``'s soft-mask branches and gender input in place."""
    for m in net.attention_modules:
        m.enabled = m.name not in spec.disabled
    net.gender_enabled = spec.gender
    net.ablation = spec
    return net


def apply_ablation(net: AttentionNet, spec: AblationSpec) -> AttentionNet:
    """Copy of ``net`` with the named soft-mask branches and/or the gender input
    switched off. The segmentation flag is carried on ``net.ablation`` for the
    data pipeline."""
    return set_ablation(copy.deepcopy(net), spec)


def parameter_count(cfg: NetworkConfig) -> int:
    """Closed-form number of trainable scalars in ``build_network(cfg)``."""

    def conv(i, o, k):
        return i * o * k * k + o

    def bn(c):
        return 2 * c

    def ru(i, o, stride=1):
        n = bn(i) + conv(i, o, 3) + bn(o) + conv(o, o, 3)
        return n + (conv(i, o, 1) if (i != o or stride != 1) else 0)

    def att(c, d):
        return (cfg.trunk_units + 2 * d) * ru(c, c) + 2 * (bn(c) + conv(c, c, 1))

    c1, c2, c3 = cfg.widths
    d1, d2, d3 = cfg.mask_depths
    f = cfg.feature_width
    return (conv(1, c1, 7) + bn(c1) + att(c1, d1) + ru(c1, c2, 2) + 2 * att(c2, d2)
            + ru(c2, c3, 2) + 3 * att(c3, d3) + bn(c3) + (c3 * f + f) + (f + 1 + 1))

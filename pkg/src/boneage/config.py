"""Plain-text ``key=value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple

from .imageproc import AugmentParams
from .nn import NetworkConfig
from .pipeline import PreprocessConfig
from .training import TrainConfig
from .training.synthetic import SyntheticSpec


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class _Key:
    default: Any
    parse: Callable[[str], Any]
    check: Callable[[Any], bool]
    rule: str


def _positive(v):
    return v > 0


def _unit(v):
    return 0 < v <= 1


SCHEMA: Dict[str, _Key] = {
    "canny.sigma": _Key(1.4, float, _positive, "> 0"),
    "canny.low": _Key(0.1, float, _unit, "in (0, 1]"),
    "canny.high": _Key(0.2, float, _unit, "in (0, 1]"),
    "net.input_size": _Key(64, int, lambda v: v >= 16, ">= 16"),
    "net.widths": _Key((8, 16, 32), _ints, lambda v: len(v) == 3 and min(v) >= 1, "three ints >= 1"),
    "net.mask_depths": _Key((3, 2, 1), _ints, lambda v: len(v) == 3 and min(v) >= 1, "three ints >= 1"),
    "net.trunk_units": _Key(2, int, lambda v: v >= 1, ">= 1"),
    "net.feature_width": _Key(16, int, lambda v: v >= 1, ">= 1"),
    "net.precision": _Key("float32", str, lambda v: v in ("float32", "float64"), "float32 or float64"),
    "train.lr": _Key(0.01, float, lambda v: v >= 0, ">= 0"),
    "train.momentum": _Key(0.9, float, lambda v: 0 <= v < 1, "in [0, 1)"),
    "train.weight_decay": _Key(1e-4, float, lambda v: v >= 0, ">= 0"),
    "train.patience": _Key(5, int, lambda v: v >= 1, ">= 1"),
    "train.factor": _Key(10.0, float, lambda v: v > 1, "> 1"),
    "train.min_delta": _Key(1e-4, float, lambda v: v >= 0, ">= 0"),
    "train.batch_size": _Key(8, int, lambda v: v >= 1, ">= 1"),
    "train.epochs": _Key(30, int, lambda v: v >= 0, ">= 0"),
    "train.seed": _Key(0, int, lambda v: v >= 0, ">= 0"),
    "loss.reg_variant": _Key("mae", str, lambda v: v in ("mae", "mse"), "mae or mse"),
    "augment.enabled": _Key(True, _bool, lambda v: True, "true or false"),
    "augment.crop_min": _Key(0.85, float, _unit, "in (0, 1]"),
    "augment.crop_max": _Key(1.0, float, _unit, "in (0, 1]"),
    "augment.rotation_deg": _Key(20.0, float, lambda v: 0 <= v <= 180, "in [0, 180]"),
    "augment.mirror_prob": _Key(0.5, float, lambda v: 0 <= v <= 1, "in [0, 1]"),
    "synthetic.n_train": _Key(240, int, lambda v: v >= 1, ">= 1"),
    "synthetic.n_val": _Key(60, int, lambda v: v >= 1, ">= 1"),
    "synthetic.image_size": _Key(64, int, lambda v: v >= 64, ">= 64"),
    "synthetic.gender_offset": _Key(12.0, float, lambda v: v >= 0, ">= 0"),
    "synthetic.tag_count": _Key(2, int, lambda v: 0 <= v <= 4, "in [0, 4]"),
    "synthetic.label_noise": _Key(1.0, float, lambda v: v >= 0, ">= 0"),
    "synthetic.border_bars": _Key(True, _bool, lambda v: True, "true or false"),
}


class RunConfig:
    """Validated settings; every key has a default and unknown keys are errors."""

    def __init__(self, values: Optional[Dict[str, Any]] = None):
        self.values: Dict[str, Any] = {k: spec.default for k, spec in SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)
        self._check_cross()

    def set(self, key: str, value: Any) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        spec = SCHEMA[key]
        try:
            parsed = spec.parse(value) if isinstance(value, str) else spec.parse(_fmt(value))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: cannot parse {value!r}: {exc}") from None
        if not spec.check(parsed):
            raise ConfigError(f"{key}={_fmt(parsed)} out of range; must be {spec.rule}")
        self.values[key] = parsed

    def _check_cross(self) -> None:
        if self.values["canny.low"] > self.values["canny.high"]:
            raise ConfigError("canny.low must not exceed canny.high")
        if self.values["augment.crop_min"] > self.values["augment.crop_max"]:
            raise ConfigError("augment.crop_min must not exceed augment.crop_max")

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        values: Dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = value
        return cls(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.values.items())

    def with_overrides(self, **kv) -> "RunConfig":
        vals = dict(self.values)
        vals.update({k.replace("__", "."): v for k, v in kv.items()})
        return RunConfig(vals)

    def network_config(self) -> NetworkConfig:
        v = self.values
        return NetworkConfig(v["net.input_size"], v["net.widths"], v["net.trunk_units"],
                             v["net.mask_depths"], v["net.feature_width"], v["net.precision"])

    def preprocess_config(self) -> PreprocessConfig:
        v = self.values
        return PreprocessConfig(v["canny.sigma"], v["canny.low"], v["canny.high"], v["net.input_size"])

    def augment_params(self) -> Optional[AugmentParams]:
        v = self.values
        if not v["augment.enabled"]:
            return None
        return AugmentParams((v["augment.crop_min"], v["augment.crop_max"]), v["augment.rotation_deg"],
                             v["augment.mirror_prob"], v["net.input_size"], v["train.seed"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(v["train.lr"], v["train.momentum"], v["train.weight_decay"], v["train.patience"],
                           v["train.factor"], v["train.min_delta"], v["train.batch_size"], v["train.epochs"],
                           v["train.seed"], v["loss.reg_variant"], self.augment_params())

    def synthetic_spec(self) -> SyntheticSpec:
        v = self.values
        return SyntheticSpec(image_size=v["synthetic.image_size"], gender_offset=v["synthetic.gender_offset"],
                             tag_count=v["synthetic.tag_count"], label_noise=v["synthetic.label_noise"],
                             border_bars=v["synthetic.border_bars"], seed=v["train.seed"])

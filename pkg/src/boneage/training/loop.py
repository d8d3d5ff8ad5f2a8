"""Epoch loop, evaluation and dataset splitting."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..autograd import Tensor
from ..autograd import functional as F
from ..imageproc import AugmentParams, EmptyForeground, augment
from ..nn import AblationSpec, AttentionNet, set_ablation
from ..pipeline import PreprocessConfig, preprocess, segment
from .optim import NesterovSGD, PlateauScheduler

log = logging.getLogger(__name__)

LOG_HEADER = "epoch,train_loss,val_mae_months,lr"


class DivergenceError(RuntimeError):
    pass


def regression_loss(pred: Tensor, truth, variant: str = "mae") -> Tensor:
    """Mean absolute error (or mean squared error with ``variant="mse"``)."""
    if not isinstance(truth, Tensor):
        truth = Tensor(np.asarray(truth, dtype=pred.dtype))
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
    if pred.size == 0:
        raise ValueError("empty batch")
    diff = F.sub(pred, truth)
    if variant == "mae":
        return F.reduce_mean(F.absolute(diff))
    if variant == "mse":
        return F.reduce_mean(F.square(diff))
    raise ValueError(f"unknown loss variant {variant!r}")


@dataclass
class Example:
    """One radiograph with its label. ``mask`` is ``None`` until segmented."""

    image_id: str
    image: np.ndarray
    male: bool
    age: float
    mask: Optional[np.ndarray] = None


def prepare_examples(items: Sequence[Tuple[str, np.ndarray, bool, float]], pcfg: PreprocessConfig,
                     segmentation: bool = True) -> Tuple[List[Example], List[str]]:
    """Build examples, segmenting each image once. Returns the examples and
    the ids whose segmentation found no foreground."""
    out, failed = [], []
    for image_id, img, male, age in items:
        img = np.asarray(img, dtype=np.uint8)
        if segmentation:
            try:
                _, mask = segment(img, pcfg)
            except EmptyForeground:
                failed.append(image_id)
                continue
        else:
            mask = None
        out.append(Example(image_id, img, bool(male), float(age), mask))
    return out, failed


def split_dataset(samples: Sequence, seed: int = 0, train_fraction: float = 0.9):
    """Seeded shuffle, then the first 90% train and the rest validation."""
    n = len(samples)
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    return [samples[i] for i in order[:cut]], [samples[i] for i in order[cut:]]


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    patience: int = 5
    factor: float = 10.0
    min_delta: float = 1e-4
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    reg_variant: str = "mae"
    augment: Optional[AugmentParams] = field(default_factory=AugmentParams)

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.reg_variant not in ("mae", "mse"):
            raise ValueError(f"reg_variant must be mae or mse, got {self.reg_variant!r}")


@dataclass
class TrainingLog:
    rows: List[Tuple[int, float, float, float]] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(LOG_HEADER + "\n")
        for epoch, loss, mae, lr in self.rows:
            buf.write(f"{epoch},{loss!r},{mae!r},{lr!r}\n")
        return buf.getvalue()


def _inputs(examples: Sequence[Example], size: int, segmentation: bool,
            aug: Optional[AugmentParams], rng: Optional[np.random.Generator]) -> np.ndarray:
    batch = []
    for ex in examples:
        if aug is None:
            batch.append(preprocess(ex.image, PreprocessConfig(input_size=size), segmentation, ex.mask
                                    if ex.mask is not None else np.ones(ex.image.shape, bool)))
            continue
        mask = ex.mask if (segmentation and ex.mask is not None) else np.ones(ex.image.shape, bool)
        img = np.where(mask, ex.image, 0).astype(np.uint8) if segmentation else ex.image
        img, _ = augment(img, mask, AugmentParams(aug.crop_range, aug.rotation_deg, aug.mirror_prob,
                                                  size, aug.seed), rng)
        batch.append((img.astype(np.float32) / np.float32(255.0))[None])
    return np.stack(batch)


def _genders(examples: Sequence[Example]) -> np.ndarray:
    return np.array([[1.0 if ex.male else 0.0] for ex in examples])


def _ages(examples: Sequence[Example]) -> np.ndarray:
    return np.array([[ex.age] for ex in examples])


def predict(net: AttentionNet, examples: Sequence[Example], segmentation: bool = True,
            batch_size: int = 32) -> np.ndarray:
    """Ages in months, ``[N]``, in eval mode and without augmentation."""
    was_training = net.training
    net.eval()
    try:
        out = []
        for i in range(0, len(examples), batch_size):
            chunk = examples[i : i + batch_size]
            x = _inputs(chunk, net.cfg.input_size, segmentation, None, None)
            age, _ = net(x, _genders(chunk))
            out.append(age.data[:, 0].astype(np.float64))
        return np.concatenate(out)
    finally:
        net.train(was_training)


def evaluate(net: AttentionNet, examples: Sequence[Example], segmentation: bool = True) -> float:
    """Mean absolute error in months."""
    if len(examples) == 0:
        raise ValueError("cannot evaluate on an empty set")
    return float(np.mean(np.abs(predict(net, examples, segmentation) - _ages(examples)[:, 0])))


def train(net: AttentionNet, train_set: Sequence[Example], val_set: Sequence[Example], cfg: TrainConfig,
          ablation: Optional[AblationSpec] = None, optimizer: Optional[NesterovSGD] = None,
          scheduler: Optional[PlateauScheduler] = None, start_epoch: int = 0,
          on_epoch: Optional[Callable[[int, AttentionNet], None]] = None) -> Tuple[TrainingLog, AttentionNet]:
    """Train for ``cfg.epochs`` epochs and return the log and the trained net.

    The ablation's module and gender switches are set on ``net`` in place;
    its segmentation switch chooses between masked and raw images. Every
    epoch's shuffling and augmentation draw from a generator seeded by
    ``(cfg.seed, epoch)``, so a run can resume from any epoch boundary.
    """
    history = TrainingLog()
    if cfg.epochs == 0:
        return history, net
    if len(train_set) == 0:
        raise ValueError("empty training set")
    ablation = ablation or AblationSpec()
    set_ablation(net, ablation)
    seg = ablation.segmentation
    if start_epoch == 0:
        ages = _ages(train_set)
        net.set_target_scaling(float(ages.mean()), float(max(ages.std(), 1.0)))
    offset, scale = float(net.age_offset[0]), float(net.age_scale[0])
    optimizer = optimizer or NesterovSGD(net.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    scheduler = scheduler or PlateauScheduler(optimizer, patience=cfg.patience, factor=cfg.factor,
                                              min_delta=cfg.min_delta)
    size = net.cfg.input_size
    net.train()
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(train_set))
        total, count = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            chunk = [train_set[j] for j in order[i : i + cfg.batch_size]]
            x = _inputs(chunk, size, seg, cfg.augment, rng)
            truth = (_ages(chunk) - offset) / scale
            optimizer.zero_grad()
            loss = regression_loss(net.forward_raw(x, _genders(chunk)), truth, cfg.reg_variant)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}, batch {i // cfg.batch_size}")
            loss.backward()
            optimizer.step()
            total += value * len(chunk)
            count += len(chunk)
        unit = scale if cfg.reg_variant == "mae" else scale * scale
        train_loss = total / count * unit
        val_mae = evaluate(net, val_set, seg) if len(val_set) else float("nan")
        lr_used = optimizer.lr
        scheduler.step(val_mae if len(val_set) else train_loss)
        history.rows.append((epoch + 1, train_loss, val_mae, lr_used))
        log.info("epoch %d train_loss %.4f val_mae %.4f lr %g", epoch + 1, train_loss, val_mae, lr_used)
        if on_epoch is not None:
            on_epoch(epoch + 1, net)
    return history, net

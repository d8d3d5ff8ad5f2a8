"""Seeded ablation runs on the synthetic distractor dataset."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .imageproc import AugmentParams
from .nn import AblationSpec, NetworkConfig, build_network
from .pipeline import PreprocessConfig
from .training import DivergenceError, TrainConfig, evaluate, make_synthetic, prepare_examples, train
from .training.synthetic import SyntheticSpec

log = logging.getLogger(__name__)

VARIANTS: Dict[str, AblationSpec] = {
    "full": AblationSpec(),
    "no-segmentation": AblationSpec(segmentation=False),
    "no-Att3_2,Att3_3": AblationSpec(frozenset({"Att3_2", "Att3_3"})),
    "no-gender": AblationSpec(gender=False),
}

# The synthetic label is the blob's absolute size, so crops that rescale the
# image would corrupt it; only rotation and mirroring are used.
SYNTHETIC_AUGMENT = AugmentParams(crop_range=(1.0, 1.0), rotation_deg=20.0, mirror_prob=0.5)


@dataclass(frozen=True)
class SuiteConfig:
    n_train: int = 240
    n_val: int = 60
    net: NetworkConfig = NetworkConfig()
    train: TrainConfig = TrainConfig(epochs=40, batch_size=8, augment=SYNTHETIC_AUGMENT)
    preprocess: PreprocessConfig = PreprocessConfig()


def synthetic_examples(spec: SyntheticSpec, n_train: int, n_val: int, pcfg: PreprocessConfig,
                       segmentation: bool = True):
    def items(split, n):
        return [(c.sample.image_id, c.image, c.sample.male, c.sample.age) for c in make_synthetic(spec, n, split)]

    tr, f1 = prepare_examples(items("train", n_train), pcfg, segmentation)
    va, f2 = prepare_examples(items("val", n_val), pcfg, segmentation)
    if f1 or f2:
        log.warning("segmentation failed for %d samples", len(f1) + len(f2))
    return tr, va


def run_variant(spec: SyntheticSpec, ablation: AblationSpec, seed: int, suite: SuiteConfig) -> float:
    """Validation MAE (months) of one variant trained with ``seed``."""
    spec = dataclasses.replace(spec, seed=seed)
    tr, va = synthetic_examples(spec, suite.n_train, suite.n_val, suite.preprocess, ablation.segmentation)
    tcfg = dataclasses.replace(suite.train, seed=seed)
    net = build_network(suite.net, seed)
    _, net = train(net, tr, va, tcfg, ablation)
    return evaluate(net, va, ablation.segmentation)


def ablation_table(spec: SyntheticSpec, seeds: Sequence[int], suite: SuiteConfig,
                   variants: Optional[Sequence[str]] = None) -> Dict[str, List[float]]:
    """Validation MAE per variant and seed; a diverged cell is ``nan``."""
    table: Dict[str, List[float]] = {}
    for name in variants or list(VARIANTS):
        row = []
        for seed in seeds:
            try:
                row.append(run_variant(spec, VARIANTS[name], seed, suite))
            except DivergenceError as exc:
                log.error("%s seed %d diverged: %s", name, seed, exc)
                row.append(float("nan"))
            log.info("%s seed %d val MAE %.3f", name, seed, row[-1])
        table[name] = row
    return table


def format_table(table: Dict[str, List[float]], seeds: Sequence[int]) -> str:
    head = ["variant"] + [f"seed{s}" for s in seeds] + ["mean", "delta_vs_full"]
    lines = ["\t".join(head)]
    base = float(np.nanmean(table["full"])) if "full" in table else float("nan")
    for name, row in table.items():
        mean = float(np.nanmean(row)) if not all(np.isnan(row)) else float("nan")
        cells = [name] + [f"{v:.3f}" for v in row] + [f"{mean:.3f}", f"{mean - base:+.3f}"]
        lines.append("\t".join(cells))
    return "\n".join(lines)

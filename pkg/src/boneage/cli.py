"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import checkpoint as ckpt
from .config import ConfigError, RunConfig
from .dataset import DataError, load_image, read_index, write_index
from .experiments import SuiteConfig, ablation_table, format_table, VARIANTS
from .imageproc import EmptyForeground, resize_bilinear, resize_nearest
from .nn import AblationSpec, build_network, save_heatmap
from .pipeline import preprocess, segment
from .pnm import ImageFormatError, read_gray, write_mask_pgm, write_pgm
from .training import (
    DivergenceError,
    NesterovSGD,
    PlateauScheduler,
    evaluate,
    make_synthetic,
    prepare_examples,
    split_dataset,
    train,
)

log = logging.getLogger("boneage")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(path: Optional[str]) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _index_items(index: str, images: str):
    rows = read_index(index, images)
    return [(r.image_id, load_image(r), r.male, r.age) for r in rows]


def _synthetic_items(cfg: RunConfig, split: str, n: int):
    return [(c.sample.image_id, c.image, c.sample.male, c.sample.age)
            for c in make_synthetic(cfg.synthetic_spec(), n, split)]


def cmd_synth(args) -> int:
    cfg = _config(args.config)
    n = args.n if args.n is not None else cfg[f"synthetic.n_{args.split}"]
    out = Path(args.out)
    write_index(out / "index.csv", out / "images", _synthetic_items(cfg, args.split, n))
    print(f"wrote {n} {args.split} images to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _config(args.config)
    pcfg = cfg.preprocess_config()
    rows = read_index(args.index, args.images)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    size = pcfg.input_size
    failures: List[str] = []
    for row in rows:
        try:
            masked, mask = segment(load_image(row), pcfg)
        except EmptyForeground as exc:
            failures.append(f"{row.image_id}\tEmptyForeground: {exc}")
            continue
        except DataError as exc:
            failures.append(f"{row.image_id}\tunreadable: {exc}")
            continue
        write_pgm(out / f"{row.image_id}.pgm", resize_bilinear(masked, size, size))
        write_mask_pgm(out / f"{row.image_id}_mask.pgm", resize_nearest(mask, size, size))
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(f"processed {len(rows) - len(failures)} of {len(rows)}\n")
        fh.writelines(line + "\n" for line in failures)
    for line in failures:
        log.warning("%s", line)
    print(f"processed {len(rows) - len(failures)} of {len(rows)}; {len(failures)} failed")
    return EXIT_OK


def _ablation(text: Optional[str]) -> AblationSpec:
    try:
        return AblationSpec.parse(text or "")
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    cfg = _config(args.config)
    ablation = _ablation(args.ablate)
    pcfg = cfg.preprocess_config()
    if args.synthetic:
        tr_items = _synthetic_items(cfg, "train", cfg["synthetic.n_train"])
        va_items = _synthetic_items(cfg, "val", cfg["synthetic.n_val"])
    else:
        if not (args.index and args.images):
            raise UsageError("train needs --synthetic or both --index and --images")
        tr_items, va_items = split_dataset(_index_items(args.index, args.images), cfg["train.seed"])
    train_set, f1 = prepare_examples(tr_items, pcfg, ablation.segmentation)
    val_set, f2 = prepare_examples(va_items, pcfg, ablation.segmentation)
    for image_id in f1 + f2:
        log.warning("skipping %s: no foreground found", image_id)
    if not train_set:
        raise DataError("no usable training samples")
    tcfg = cfg.train_config()
    net = build_network(cfg.network_config(), tcfg.seed)
    optimizer = NesterovSGD(net.parameters(), tcfg.lr, tcfg.momentum, tcfg.weight_decay)
    scheduler = PlateauScheduler(optimizer, patience=tcfg.patience, factor=tcfg.factor, min_delta=tcfg.min_delta)
    history, net = train(net, train_set, val_set, tcfg, ablation, optimizer, scheduler)
    if args.log:
        Path(args.log).write_text(history.to_csv(), encoding="utf-8")
    if args.out_checkpoint:
        cp = ckpt.from_training(net, optimizer, scheduler, rng={"seed": tcfg.seed, "next_epoch": tcfg.epochs},
                                meta={"epoch": tcfg.epochs})
        ckpt.save(args.out_checkpoint, cp)
    if history.rows:
        epoch, loss, mae, lr = history.rows[-1]
        print(f"epoch {epoch}: train_loss {loss:.4f} val_mae_months {mae:.4f} lr {lr:g}")
    return EXIT_OK


def _load_checkpoint(path: str, cfg: Optional[RunConfig]) -> ckpt.Checkpoint:
    if not Path(path).is_file():
        raise DataError(f"checkpoint not found: {path}")
    return ckpt.load(path, cfg.network_config() if cfg is not None else None)


def cmd_eval(args) -> int:
    cfg = _config(args.config)
    cp = _load_checkpoint(args.checkpoint, cfg if args.config else None)
    net = cp.build()
    seg = cp.ablation.segmentation
    examples, failed = prepare_examples(_index_items(args.index, args.images), cfg.preprocess_config(), seg)
    for image_id in failed:
        log.warning("skipping %s: no foreground found", image_id)
    if not examples:
        raise DataError("evaluation set is empty")
    print(f"{evaluate(net, examples, seg):.6f}")
    return EXIT_OK


def _gender(text: str) -> float:
    t = text.strip().lower()
    if t in ("male", "m", "1", "true"):
        return 1.0
    if t in ("female", "f", "0", "false"):
        return 0.0
    raise UsageError(f"--gender must be male or female, got {text!r}")


def cmd_predict(args) -> int:
    cfg = _config(args.config)
    cp = _load_checkpoint(args.checkpoint, cfg if args.config else None)
    net = cp.build()
    net.eval()
    gender = _gender(args.gender)
    if not Path(args.image).is_file():
        raise DataError(f"image not found: {args.image}")
    try:
        img = read_gray(args.image)
    except (OSError, ImageFormatError) as exc:
        raise DataError(f"cannot read {args.image}: {exc}") from None
    pcfg = dataclasses.replace(cfg.preprocess_config(), input_size=net.cfg.input_size)
    x = preprocess(img, pcfg, cp.ablation.segmentation)[None]
    age, caps = net(x, np.array([[gender]]), capture=bool(args.attention))
    if args.attention:
        out = Path(args.attention)
        out.mkdir(parents=True, exist_ok=True)
        for cap in caps:
            save_heatmap(out / f"{cap.name}.ppm", cap)
    print(f"{float(age.data[0, 0]):.6f}")
    return EXIT_OK


def cmd_ablate_suite(args) -> int:
    cfg = _config(args.config)
    if args.synthetic_spec:
        extra = RunConfig.load(args.synthetic_spec)
        merged = dict(cfg.values)
        merged.update({k: v for k, v in extra.values.items() if k.startswith("synthetic.")
                       and v != RunConfig().values[k]})
        cfg = RunConfig(merged)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    variants = args.variants.split(";") if args.variants else list(VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}; choose from {list(VARIANTS)}")
    suite = SuiteConfig(cfg["synthetic.n_train"], cfg["synthetic.n_val"], cfg.network_config(),
                        cfg.train_config(), cfg.preprocess_config())
    seeds = list(range(args.seeds))
    table = ablation_table(cfg.synthetic_spec(), seeds, suite, variants)
    print(format_table(table, seeds))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="boneage", description="Bone age regression with residual attention.")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset (PGM images plus index.csv)")
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=("train", "val"), default="train")
    s.add_argument("--n", type=int)
    s.add_argument("--config")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="segment and resize every image in an index")
    s.add_argument("--index", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a network")
    s.add_argument("--index")
    s.add_argument("--images")
    s.add_argument("--synthetic", action="store_true", help="train on generated data")
    s.add_argument("--config")
    s.add_argument("--ablate", help="comma list of module names, 'gender', 'segmentation'")
    s.add_argument("--out-checkpoint")
    s.add_argument("--log", help="CSV training log path")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="print validation MAE in months")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--index", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="predict one image's bone age in months")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--gender", required=True)
    s.add_argument("--attention", metavar="DIR", help="write one heatmap PPM per attention module")
    s.add_argument("--config")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("ablate-suite", help="train every ablation variant over several seeds")
    s.add_argument("--config")
    s.add_argument("--synthetic-spec", help="key=value file with synthetic.* overrides")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--variants", help="semicolon-separated subset of variant names")
    s.set_defaults(func=cmd_ablate_suite)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ckpt.CheckpointError, ImageFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

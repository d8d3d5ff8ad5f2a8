"""CSV dataset index: ``id,boneage,male`` plus an image directory."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .pnm import ImageFormatError, read_gray, write_pgm

HEADER = ["id", "boneage", "male"]
IMAGE_SUFFIXES = (".pgm", ".png", ".jpg", ".jpeg")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class IndexRow:
    image_id: str
    age: float
    male: bool
    path: Path


def _parse_male(text: str, where: str) -> bool:
    t = text.strip().lower()
    if t == "true":
        return True
    if t == "false":
        return False
    raise DataError(f"{where}: male must be true or false, got {text!r}")


def resolve_image(images: Path, image_id: str) -> Path:
    hits = [images / f"{image_id}{s}" for s in IMAGE_SUFFIXES if (images / f"{image_id}{s}").is_file()]
    if not hits:
        raise DataError(f"no image for id {image_id!r} in {images}")
    if len(hits) > 1:
        raise DataError(f"id {image_id!r} is ambiguous: {[h.name for h in hits]}")
    return hits[0]


def read_index(index_path, images_dir) -> List[IndexRow]:
    index_path, images = Path(index_path), Path(images_dir)
    if not index_path.is_file():
        raise DataError(f"index not found: {index_path}")
    if not images.is_dir():
        raise DataError(f"image directory not found: {images}")
    with open(index_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{index_path}: empty file, expected header {','.join(HEADER)}")
        if [h.strip() for h in header] != HEADER:
            raise DataError(f"{index_path}: header must be {','.join(HEADER)}, got {','.join(header)}")
        rows, seen = [], set()
        for lineno, rec in enumerate(reader, 2):
            if not rec or all(not c.strip() for c in rec):
                continue
            where = f"{index_path}:{lineno}"
            if len(rec) != 3:
                raise DataError(f"{where}: expected 3 fields, got {len(rec)}")
            image_id = rec[0].strip()
            if image_id in seen:
                raise DataError(f"{where}: duplicate id {image_id!r}")
            seen.add(image_id)
            try:
                age = float(rec[1])
            except ValueError:
                raise DataError(f"{where}: boneage is not a number: {rec[1]!r}") from None
            if not np.isfinite(age) or age < 0:
                raise DataError(f"{where}: boneage must be finite and >= 0, got {age}")
            rows.append(IndexRow(image_id, age, _parse_male(rec[2], where), resolve_image(images, image_id)))
    return rows


def load_image(row: IndexRow) -> np.ndarray:
    try:
        return read_gray(row.path)
    except (OSError, ImageFormatError) as exc:
        raise DataError(f"cannot read {row.path}: {exc}") from None


def write_index(index_path, images_dir, items: Sequence) -> None:
    """Write ``(image_id, image, male, age)`` items as PGM files plus an index."""
    images = Path(images_dir)
    images.mkdir(parents=True, exist_ok=True)
    os.makedirs(Path(index_path).parent, exist_ok=True)
    with open(index_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for image_id, img, male, age in items:
            write_pgm(images / f"{image_id}.pgm", img)
            w.writerow([image_id, repr(float(age)), "true" if male else "false"])

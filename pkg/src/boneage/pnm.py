"""Minimal binary PGM (P5) / PPM (P6) reading and writing."""

from __future__ import annotations

import os
from typing import Union

import numpy as np

PathLike = Union[str, "os.PathLike[str]"]


class ImageFormatError(ValueError):
    pass


def _tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.
    Returns the tokens and the offset of the single whitespace byte after the last."""
    out, i, n = [], 0, len(buf)
    while len(out) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i : i + 1].isspace() and buf[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("truncated PNM header")
        out.append(buf[start:i])
    return out, i + 1


def decode_pnm(buf: bytes) -> np.ndarray:
    (magic, w, h, maxval), offset = _tokens(buf, 4)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported PNM magic {magic!r}; only binary P5/P6")
    w, h, maxval = int(w), int(h), int(maxval)
    if w < 1 or h < 1 or not 0 < maxval < 256:
        raise ImageFormatError(f"unsupported PNM geometry {w}x{h} maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    pixels = np.frombuffer(buf, dtype=np.uint8, count=-1, offset=offset)
    if pixels.size < need:
        raise ImageFormatError(f"PNM pixel data truncated: {pixels.size} of {need} bytes")
    pixels = pixels[:need]
    if maxval != 255:
        pixels = np.floor(pixels.astype(np.float64) * 255.0 / maxval + 0.5).astype(np.uint8)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return pixels.reshape(shape).copy()


def read_pgm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        img = decode_pnm(fh.read())
    if img.ndim != 2:
        raise ImageFormatError(f"{path}: expected grayscale P5 image")
    return img


def read_ppm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        img = decode_pnm(fh.read())
    if img.ndim != 3:
        raise ImageFormatError(f"{path}: expected colour P6 image")
    return img


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ImageFormatError(f"PGM needs a 2-D array, got shape {img.shape}")
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.astype(np.uint8).tobytes()


def write_pgm(path: PathLike, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(img))


def write_mask_pgm(path: PathLike, mask: np.ndarray) -> None:
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def write_ppm(path: PathLike, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ImageFormatError(f"PPM needs an HxWx3 array, got shape {rgb.shape}")
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.astype(np.uint8).tobytes())


def read_gray(path: PathLike) -> np.ndarray:
    """Read a PGM, or a PNG/other raster through Pillow when it is installed."""
    if str(path).lower().endswith((".pgm", ".pnm")):
        return read_pgm(path)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ImageFormatError(f"{path}: non-PGM input needs Pillow installed") from exc
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()

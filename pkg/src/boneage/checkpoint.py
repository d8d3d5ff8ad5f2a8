"""Binary checkpoint format.

Layout, all integers little-endian::

    b"ABA1"  u32 version
    u32 len  network config text (key=value lines)
    u32 len  metadata JSON (ablation, epoch)
    u32 n    parameter and buffer blobs
    u32 n    optimizer velocity blobs (0 when absent)
    u32 len  scheduler state JSON ("null" when absent)
    u32 len  RNG state JSON ("null" when absent)

A blob is ``u16 name_len, name, u8 rank, u32 extents[rank], f32 values``.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .nn import AblationSpec, AttentionNet, NetworkConfig, build_network, set_ablation

MAGIC = b"ABA1"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class Truncation(CheckpointError):
    pass


class ConfigMismatch(CheckpointError):
    pass


def network_config_text(cfg: NetworkConfig) -> str:
    return (f"input_size={cfg.input_size}\nwidths={','.join(map(str, cfg.widths))}\n"
            f"trunk_units={cfg.trunk_units}\nmask_depths={','.join(map(str, cfg.mask_depths))}\n"
            f"feature_width={cfg.feature_width}\nprecision={cfg.precision}\n")


def parse_network_config(text: str) -> NetworkConfig:
    kv = dict(line.split("=", 1) for line in text.splitlines() if line)
    try:
        return NetworkConfig(int(kv["input_size"]), tuple(int(v) for v in kv["widths"].split(",")),
                             int(kv["trunk_units"]), tuple(int(v) for v in kv["mask_depths"].split(",")),
                             int(kv["feature_width"]), kv["precision"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad network config in checkpoint: {exc}") from None


@dataclass
class Checkpoint:
    net_config: NetworkConfig
    state: "OrderedDict[str, np.ndarray]"
    velocities: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    scheduler: Optional[Dict[str, Any]] = None
    rng: Optional[Dict[str, Any]] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def ablation(self) -> AblationSpec:
        return AblationSpec.parse(self.meta.get("ablation", "none"))

    def build(self) -> AttentionNet:
        """Network with the stored weights and ablation switches."""
        net = build_network(self.net_config)
        net.load_state_dict(self.state)
        return set_ablation(net, self.ablation)


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _pack_blob(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    arr = np.asarray(arr)
    if arr.ndim > 255:
        raise CheckpointError("rank too large")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f4").tobytes()


def encode(cp: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(network_config_text(cp.net_config)),
             _pack_str(json.dumps(cp.meta, sort_keys=True))]
    parts.append(struct.pack("<I", len(cp.state)))
    parts += [_pack_blob(k, v) for k, v in cp.state.items()]
    parts.append(struct.pack("<I", len(cp.velocities)))
    parts += [_pack_blob(k, v) for k, v in cp.velocities.items()]
    parts.append(_pack_str(json.dumps(cp.scheduler, sort_keys=True)))
    parts.append(_pack_str(json.dumps(cp.rng, sort_keys=True)))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise Truncation(f"checkpoint truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"undecodable text field: {exc}") from None

    def blob(self) -> Tuple[str, np.ndarray]:
        (n,) = self.unpack("<H")
        name = self.take(n).decode("utf-8", errors="strict")
        (rank,) = self.unpack("<B")
        shape = self.unpack(f"<{rank}I")
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
        return name, data.astype(np.float32)

    def blobs(self) -> "OrderedDict[str, np.ndarray]":
        (n,) = self.unpack("<I")
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for _ in range(n):
            k, v = self.blob()
            out[k] = v
        return out


def decode(buf: bytes) -> Checkpoint:
    if len(buf) < 4:
        raise Truncation("file shorter than the magic number")
    if buf[:4] != MAGIC:
        raise BadMagic(f"not a checkpoint: magic {buf[:4]!r}")
    r = _Reader(buf)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, this build reads {VERSION}")
    cfg = parse_network_config(r.string())
    try:
        meta = json.loads(r.string())
        state = r.blobs()
        velocities = r.blobs()
        scheduler = json.loads(r.string())
        rng = json.loads(r.string())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt JSON field: {exc}") from None
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(cfg, state, velocities, scheduler, rng, meta)


def from_training(net: AttentionNet, optimizer=None, scheduler=None, rng: Optional[Dict[str, Any]] = None,
                  meta: Optional[Dict[str, Any]] = None) -> Checkpoint:
    meta = dict(meta or {})
    meta.setdefault("ablation", net.ablation.label())
    velocities: "OrderedDict[str, np.ndarray]" = OrderedDict()
    if optimizer is not None:
        names = [n for n, _ in net.named_parameters()]
        velocities = OrderedDict(zip(names, optimizer.velocities))
    return Checkpoint(net.cfg, OrderedDict((k, v.copy()) for k, v in net.state_dict().items()), velocities,
                      scheduler.state_dict() if scheduler is not None else None, rng, meta)


def save(path, cp: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(cp))


def load(path, expected: Optional[NetworkConfig] = None) -> Checkpoint:
    with open(path, "rb") as fh:
        cp = decode(fh.read())
    if expected is not None and cp.net_config != expected:
        raise ConfigMismatch(f"checkpoint network config {cp.net_config} does not match {expected}")
    return cp

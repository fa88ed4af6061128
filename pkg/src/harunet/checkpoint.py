"""Versioned binary checkpoint files.

Layout (all integers little-endian)::

    b"HARUCKPT"                    magic, 8 bytes
    u32 version                    currently 1
    u32 n, n bytes                 network config, canonical JSON (UTF-8)
    32 bytes                       SHA-256 of that JSON
    u32 n, n bytes                 training state, canonical JSON (may be "{}")
    u32 count                      number of blobs
    count × blob:
        u16 n, n bytes             name (UTF-8)
        u8 ndim, ndim × u32        shape
        prod(shape) × f64          values, C order

Blobs come in a fixed order: parameters in module traversal order, then
buffers, then any optimizer slots (named ``momentum/<parameter name>``).
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import ConfigurationError, DataError
from .network import Network, NetworkConfig

MAGIC = b"HARUCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    config: NetworkConfig
    state: dict = field(default_factory=dict)
    blobs: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def network_state(self) -> Dict[str, np.ndarray]:
        return OrderedDict((k, v) for k, v in self.blobs.items() if not k.startswith("momentum/"))

    def momentum(self) -> Dict[str, np.ndarray]:
        return OrderedDict((k[len("momentum/"):], v) for k, v in self.blobs.items() if k.startswith("momentum/"))


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def encode(ckpt: Checkpoint) -> bytes:
    cfg_json = ckpt.config.canonical_json().encode()
    state_json = _canonical(ckpt.state)
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<I", len(cfg_json)), cfg_json, hashlib.sha256(cfg_json).digest(),
             struct.pack("<I", len(state_json)), state_json,
             struct.pack("<I", len(ckpt.blobs))]
    for name, arr in ckpt.blobs.items():
        raw = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes, expected: Optional[NetworkConfig] = None) -> Checkpoint:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    cfg_json = r.take(n)
    if hashlib.sha256(cfg_json).digest() != r.take(32):
        raise DataError("checkpoint config digest does not match its config")
    config = NetworkConfig.from_dict(json.loads(cfg_json))
    if expected is not None and expected.digest() != config.digest():
        raise ConfigurationError("checkpoint was written for a different network config")
    (n,) = r.unpack("<I")
    state = json.loads(r.take(n))
    (count,) = r.unpack("<I")
    blobs = OrderedDict()
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        blobs[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise DataError("trailing bytes after checkpoint payload")
    return Checkpoint(config, state, blobs)


def save_checkpoint(path, net: Network, state: Optional[dict] = None,
                    momentum: Optional[Dict[str, np.ndarray]] = None) -> None:
    blobs = OrderedDict(net.state_dict())
    for name, v in (momentum or {}).items():
        blobs[f"momentum/{name}"] = v
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(Checkpoint(net.config, state or {}, blobs)))
    tmp.replace(path)


def load_checkpoint(path, expected: Optional[NetworkConfig] = None) -> Checkpoint:
    return decode(Path(path).read_bytes(), expected)


def load_network(path) -> tuple:
    """Rebuild the network stored in a checkpoint; returns ``(net, checkpoint)``."""
    from .network import build

    ckpt = load_checkpoint(path)
    net = build(ckpt.config)
    net.load_state_dict(ckpt.network_state())
    return net, ckpt

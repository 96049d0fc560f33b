"""Bit-exact binary checkpoints.

Layout (all integers little-endian)::

    b"LCBV" | u32 version | u32 header_len | header JSON (utf-8)
    | u32 tensor_count | tensors sorted by name | u32 crc32

Each tensor is ``u32 name_len | name | u32 ndim | u32 dims... | float32 data``.
The header carries ``kind``, ``config`` and ``metadata``.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LCBV"
VERSION = 1
KINDS = ("vae", "crnn")


class CheckpointError(ValueError):
    """Malformed, truncated or mismatched checkpoint."""


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CheckpointError(f"unknown model kind {self.kind!r}")


def _header(ckpt: Checkpoint) -> bytes:
    doc = {"kind": ckpt.kind, "config": ckpt.config, "metadata": ckpt.metadata}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def to_bytes(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    header = _header(ckpt)
    parts += [struct.pack("<I", len(header)), header, struct.pack("<I", len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes(order="C")]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated at offset {self.pos}: need {n} bytes for {what}, "
                                  f"{len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def from_bytes(buf: bytes, kind: str | None = None) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version} at offset 4, expected {VERSION}")
    hlen = r.u32("header length")
    start = r.pos
    try:
        doc = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header at offset {start}: {exc}") from None
    count = r.u32("tensor count")
    tensors = {}
    prev = None
    for _ in range(count):
        at = r.pos
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8", errors="replace")
        if prev is not None and name <= prev:
            raise CheckpointError(f"tensor names not strictly sorted at offset {at}")
        prev = name
        ndim = r.u32("ndim")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, "shape"))
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(nbytes, f"data of {name}"), dtype="<f4").reshape(shape)
        tensors[name] = data.astype(np.float32)
    body_end = r.pos
    crc = r.u32("checksum")
    if crc != zlib.crc32(buf[:body_end]):
        raise CheckpointError(f"checksum mismatch at offset {body_end}")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes at offset {r.pos}")
    ckpt = Checkpoint(doc.get("kind"), doc.get("config", {}), tensors, doc.get("metadata", {}))
    if kind is not None and ckpt.kind != kind:
        raise CheckpointError(f"checkpoint holds a {ckpt.kind!r} model, expected {kind!r}")
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    data = to_bytes(ckpt)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return path


def load_checkpoint(path, kind: str | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), kind)


def model_checkpoint(model, metadata: dict | None = None) -> Checkpoint:
    return Checkpoint(model.kind, model.config.to_dict(), model.tensors(), metadata or {})


def load_model(path, kind: str | None = None):
    """Rebuild an ``LCBVAE`` or ``Crnn`` from a checkpoint file."""
    from .crnn import Crnn, CrnnConfig
    from .vae import LCBVAE, VaeConfig

    ckpt = load_checkpoint(path, kind)
    if ckpt.kind == "vae":
        return LCBVAE.from_tensors(VaeConfig.from_dict(ckpt.config), ckpt.tensors)
    return Crnn.from_tensors(CrnnConfig.from_dict(ckpt.config), ckpt.tensors)

"""Versioned binary container for model parameters, config and SNR statistics.

Layout (little-endian)::

    b"MTMSCKPT" | u32 format | 32-byte sha256 of config text
    u32 len + config text (utf-8)
    u8 has_stats [+ stats record]
    u16 len + params version tag | u64 init seed
    u32 n_tensors, then per tensor:
        u16 name length | name | u8 dtype (0 = f8) | u8 trainable | u8 rank | rank x u32 dims | raw values

A stats file written by ``fit-stats`` is ``b"MTMSSTAT"`` followed by the
same stats record.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ConfigError, FormatError
from .config import ModelConfig
from .model import ModelParams
from .targets import SnrStats

MAGIC = b"MTMSCKPT"
STATS_MAGIC = b"MTMSSTAT"
FORMAT_VERSION = 1
_DTYPES = {0: "<f8"}


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    stats: SnrStats | None


def _pack_str(s: str, fmt: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack(fmt, len(b)) + b


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    text = ckpt.config.to_text()
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION), hashlib.sha256(text.encode()).digest(),
           _pack_str(text, "<I")]
    if ckpt.stats is None:
        out.append(b"\x00")
    else:
        out += [b"\x01", ckpt.stats.to_bytes()]
    out += [_pack_str(ckpt.params.version, "<H"), struct.pack("<Q", ckpt.params.seed)]
    trainable = set(ckpt.params.trainable)
    out.append(struct.pack("<I", len(ckpt.params.tensors)))
    for name, arr in ckpt.params.tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        out += [_pack_str(name, "<H"), struct.pack("<BBB", 0, name in trainable, a.ndim),
                struct.pack(f"<{a.ndim}I", *a.shape), a.tobytes()]
    return b"".join(out)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


class _Reader:
    def __init__(self, buf: bytes, where: str):
        self.buf, self.pos, self.where = buf, 0, where

    def take(self, fmt: str):
        try:
            vals = struct.unpack_from(fmt, self.buf, self.pos)
        except struct.error as exc:
            raise FormatError(f"{self.where}: truncated at byte {self.pos}") from exc
        self.pos += struct.calcsize(fmt)
        return vals

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.where}: truncated at byte {self.pos}")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def string(self, fmt: str) -> str:
        (n,) = self.take(fmt)
        return self.raw(n).decode("utf-8")


def parse_checkpoint(buf: bytes, where: str = "<bytes>", expect: ModelConfig | None = None) -> Checkpoint:
    r = _Reader(buf, where)
    if r.raw(len(MAGIC)) != MAGIC:
        raise FormatError(f"{where}: not a checkpoint (bad magic)")
    (version,) = r.take("<I")
    if version != FORMAT_VERSION:
        raise FormatError(f"{where}: unsupported checkpoint format {version}")
    digest = r.raw(32)
    text = r.string("<I")
    if hashlib.sha256(text.encode()).digest() != digest:
        raise FormatError(f"{where}: config digest does not match embedded config")
    config = ModelConfig.from_text(text)
    if expect is not None and expect.digest() != digest:
        raise ConfigError(f"{where}: checkpoint was trained with a different config")
    (has_stats,) = r.take("<B")
    stats = None
    if has_stats:
        stats, r.pos = SnrStats.from_bytes(buf, r.pos)
    tag = r.string("<H")
    (seed,) = r.take("<Q")
    (n,) = r.take("<I")
    tensors, trainable = {}, []
    for _ in range(n):
        name = r.string("<H")
        code, is_train, rank = r.take("<BBB")
        if code not in _DTYPES:
            raise FormatError(f"{where}: tensor {name!r} has unknown dtype code {code}")
        dims = r.take(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.raw(8 * count), dtype=_DTYPES[code]).astype(np.float64).reshape(dims)
        if is_train:
            trainable.append(name)
    if r.pos != len(buf):
        raise FormatError(f"{where}: {len(buf) - r.pos} trailing bytes")
    return Checkpoint(config, ModelParams(tensors, tuple(trainable), tag, int(seed)), stats)


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> Checkpoint:
    path = Path(path)
    return parse_checkpoint(path.read_bytes(), str(path), expect)


def save_stats(path: str | Path, stats: SnrStats) -> None:
    Path(path).write_bytes(STATS_MAGIC + stats.to_bytes())


def load_stats(path: str | Path) -> SnrStats:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:len(STATS_MAGIC)] != STATS_MAGIC:
        raise FormatError(f"{path}: not a stats file (bad magic)")
    stats, end = SnrStats.from_bytes(buf, len(STATS_MAGIC))
    if end != len(buf):
        raise FormatError(f"{path}: {len(buf) - end} trailing bytes")
    return stats

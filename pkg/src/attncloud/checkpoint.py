"""Binary checkpoint files.

Layout (little-endian):
    magic "AXCK" | u32 version | u32 tensor count |
    per tensor: u16 name length | name (utf-8) | u8 rank | rank x u64 dims |
                float64 values |
    optimizer state in the same tensor encoding (u32 count, then records;
    scalars are rank-0 tensors) |
    u64 epoch |
    loss history: u32 rows | rows x 2 float64 (train, val) |
    config: u32 entries | per entry: u16 key len | key | u16 value len | value

load(save(x)) reproduces x bitwise; loading rejects unknown versions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"AXCK"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict
    optimizer: dict = field(default_factory=dict)  # name -> array, rank-0 for scalars
    epoch: int = 0
    history: list = field(default_factory=list)  # (train_loss, val_loss) pairs
    config: dict = field(default_factory=dict)  # string key -> string value


def _pack_tensors(tensors: dict) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value), dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, path: Path, raw: bytes):
        self.path = path
        self.raw = raw
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.raw):
            raise FormatError(self.path, self.offset, f"truncated {what}")
        out = self.raw[self.offset : self.offset + n]
        self.offset += n
        return out

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def tensors(self, what) -> dict:
        out = {}
        for _ in range(self.u32(f"{what} count")):
            name = self.take(self.u16(f"{what} name length"), f"{what} name").decode("utf-8")
            rank = self.take(1, f"{what} rank")[0]
            dims = struct.unpack(f"<{rank}Q", self.take(8 * rank, f"{what} dims"))
            count = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(self.take(8 * count, f"{what} values"), dtype="<f8")
            out[name] = values.reshape(dims).astype(np.float64)
        return out


def save_checkpoint(path, ckpt: Checkpoint):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(_pack_tensors(ckpt.params))
    parts.append(_pack_tensors(ckpt.optimizer))
    parts.append(struct.pack("<Q", ckpt.epoch))
    parts.append(struct.pack("<I", len(ckpt.history)))
    for train_loss, val_loss in ckpt.history:
        parts.append(struct.pack("<dd", train_loss, val_loss))
    parts.append(struct.pack("<I", len(ckpt.config)))
    for key, value in ckpt.config.items():
        kb, vb = key.encode("utf-8"), str(value).encode("utf-8")
        parts.append(struct.pack("<H", len(kb)) + kb + struct.pack("<H", len(vb)) + vb)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    reader = _Reader(path, path.read_bytes())
    if reader.take(4, "magic") != MAGIC:
        raise FormatError(path, 0, "bad magic, not a checkpoint file")
    version = reader.u32("version")
    if version != VERSION:
        raise FormatError(path, 4, f"unsupported checkpoint version {version}")
    params = reader.tensors("parameter")
    optimizer = reader.tensors("optimizer")
    epoch = reader.u64("epoch")
    history = []
    for _ in range(reader.u32("history length")):
        history.append(struct.unpack("<dd", reader.take(16, "history row")))
    config = {}
    for _ in range(reader.u32("config length")):
        key = reader.take(reader.u16("config key length"), "config key").decode("utf-8")
        value = reader.take(reader.u16("config value length"), "config value").decode("utf-8")
        config[key] = value
    if reader.offset != len(reader.raw):
        raise FormatError(path, reader.offset, "trailing bytes")
    return Checkpoint(params, optimizer, epoch, history, config)

"""Binary checkpoint format.

Layout, all integers little-endian::

    b"SSVAE1"  u32 version
    u32 len, utf-8 config text
    u64 step, u64 optimizer t
    u32 count, then per record:
        u32 len, utf-8 name
        u32 ndim, u64 * ndim shape
        float64 data (little-endian, C order)

Record names are ``param/<name>``, ``adamax.m/<name>`` and ``adamax.u/<name>``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ContractError
from .config import RunConfig
from .optim import AdamaxState

MAGIC = b"SSVAE1"
VERSION = 1


@dataclass
class Checkpoint:
    config: RunConfig
    params: dict[str, np.ndarray]
    optimizer: AdamaxState
    step: int = 0


def _records(ckpt: Checkpoint):
    for prefix, table in (
        ("param/", ckpt.params),
        ("adamax.m/", ckpt.optimizer.m),
        ("adamax.u/", ckpt.optimizer.u),
    ):
        for name in sorted(table):
            yield prefix + name, table[name]


def _put_str(buf, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def to_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _put_str(buf, ckpt.config.to_text())
    buf.write(struct.pack("<QQ", ckpt.step, ckpt.optimizer.t))
    records = list(_records(ckpt))
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        arr = np.asarray(arr, dtype="<f8", order="C")
        _put_str(buf, name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ContractError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise ContractError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    config = RunConfig.from_text(r.string())
    step, t = r.unpack("<QQ")
    (count,) = r.unpack("<I")
    tables = {"param": {}, "adamax.m": {}, "adamax.u": {}}
    for _ in range(count):
        name = r.string()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
        prefix, _, key = name.partition("/")
        if prefix not in tables:
            raise ContractError(f"unknown record {name!r}")
        tables[prefix][key] = arr
    if r.pos != len(data):
        raise ContractError("trailing bytes after checkpoint records")
    opt = AdamaxState(tables["adamax.m"], tables["adamax.u"], t)
    return Checkpoint(config, tables["param"], opt, step)


def save(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)
    return path


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())

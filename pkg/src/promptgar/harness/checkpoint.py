"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PGAR" | u32 version | u32 meta_len | meta (UTF-8 JSON) | u32 n_tensors
    then per tensor: u32 name_len | name | u32 ndim | u64 * ndim shape | float64 LE data

Meta holds the run config, the training-RNG state and anything else the
caller attaches. Frozen Fourier bases are stored as ordinary named tensors
under a ``buffer:`` prefix.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..model import PromptGAR
from .config import RunConfig

MAGIC = b"PGAR"
VERSION = 1
BUFFER_PREFIX = "buffer:"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: PromptGAR, config: RunConfig, meta: dict | None = None) -> "Checkpoint":
        tensors = {name: arr.copy() for name, arr in model.state_dict().items()}
        for name, arr in model.frozen_buffers().items():
            tensors[BUFFER_PREFIX + name] = np.array(arr, dtype=np.float64)
        return cls(config, tensors, dict(meta or {}))

    def build_model(self) -> PromptGAR:
        model = PromptGAR(self.config.model, seed=self.meta.get("model_seed", self.config.train.seed))
        params = {k: v for k, v in self.tensors.items() if not k.startswith(BUFFER_PREFIX)}
        buffers = {k[len(BUFFER_PREFIX):]: v for k, v in self.tensors.items() if k.startswith(BUFFER_PREFIX)}
        model.load_state_dict(params)
        model.load_frozen_buffers(buffers)
        return model


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def dumps_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = dict(ckpt.meta)
    meta["config"] = ckpt.config.to_dict()
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = [MAGIC, _u32(VERSION), _u32(len(meta_bytes)), meta_bytes, _u32(len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f8")
        key = name.encode("utf-8")
        out += [_u32(len(key)), key, _u32(arr.ndim), struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()]
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def loads_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after last tensor")
    config = RunConfig.from_dict(meta.pop("config"))
    return Checkpoint(config, tensors, meta)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())

"""Binary checkpoints.

Layout, all integers little-endian:

    magic "KVMN" | u32 format version | u32 meta length | meta JSON (UTF-8)
    | u64 step | u32 tensor count | tensor records...

Each tensor record is: u32 name length, UTF-8 name, u32 rank, u32 per dim,
then the float64 little-endian row-major data. The meta JSON holds the flat
config dict plus the vocabulary token list, so a checkpoint is enough to
rebuild the model and decode text. Save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .config import Config
from .data import RESERVED_TOKENS, Vocabulary
from .errors import DataError

MAGIC = b"KVMN"
FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    config: Config,
    vocab: Vocabulary,
    step: int,
    tensors: "OrderedDict[str, np.ndarray]",
) -> None:
    meta = {"config": config.to_dict(), "vocab": vocab.id_to_token[len(RESERVED_TOKENS):]}
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<I", len(meta_bytes)))
    parts.append(meta_bytes)
    parts.append(struct.pack("<Q", step))
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(f"checkpoint {self.path} is truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path: str | Path) -> tuple[Config, Vocabulary, int, "OrderedDict[str, np.ndarray]"]:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise DataError(f"checkpoint {path}: bad magic")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise DataError(f"checkpoint {path}: unsupported format version {version}")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
        config = Config.from_dict(meta["config"])
        vocab = Vocabulary(meta["vocab"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint {path}: bad metadata ({exc})") from None
    step = r.u64()
    count = r.u32()
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        size = 1
        for d in dims:
            size *= d
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
        tensors[name] = arr
    if r.pos != len(r.blob):
        raise DataError(f"checkpoint {path}: trailing bytes")
    if len(vocab) != config.vocab_size:
        raise DataError(f"checkpoint {path}: vocabulary size {len(vocab)} does not match config")
    return config, vocab, step, tensors

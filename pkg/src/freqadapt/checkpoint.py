"""Versioned binary checkpoint container.

Layout (little endian):

    magic  b"FACK" | version u32 | meta_len u64 | meta JSON (utf-8)
    n_tensors u32
    per tensor: name_len u32 | name utf-8 | ndim u32 | dims u32... | float64 payload

Tensors are written in sorted name order and the JSON is dumped with
sorted keys, so save -> load -> save is byte identical. The metadata dict
carries everything non-tensor: rng state, scheduler state, epoch counters,
config echo. Python's json keeps arbitrary-precision ints, which the
PCG64 state needs (its counters are 128-bit).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

CKPT_MAGIC = b"FACK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    blobs = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blobs.append(struct.pack("<Q", len(meta_bytes)))
    blobs.append(meta_bytes)
    blobs.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        if arr.ndim:
            arr = np.ascontiguousarray(arr)  # ascontiguousarray would widen 0-d to (1,)
        nb = name.encode("utf-8")
        blobs.append(struct.pack("<I", len(nb)))
        blobs.append(nb)
        blobs.append(struct.pack("<I", arr.ndim))
        blobs.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        blobs.append(arr.astype("<f8").tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(blobs))
    tmp.replace(path)


def _take(buf: bytes, off: int, n: int, what: str) -> tuple[bytes, int]:
    if off + n > len(buf):
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return buf[off:off + n], off + n


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    raw, off = _take(buf, 0, 4, "magic")
    if raw != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {raw!r}")
    raw, off = _take(buf, off, 4, "version")
    version = struct.unpack("<I", raw)[0]
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    raw, off = _take(buf, off, 8, "meta length")
    meta_len = struct.unpack("<Q", raw)[0]
    raw, off = _take(buf, off, meta_len, "metadata")
    meta = json.loads(raw.decode("utf-8"))
    raw, off = _take(buf, off, 4, "tensor count")
    n_tensors = struct.unpack("<I", raw)[0]
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        raw, off = _take(buf, off, 4, "name length")
        name_len = struct.unpack("<I", raw)[0]
        raw, off = _take(buf, off, name_len, "tensor name")
        name = raw.decode("utf-8")
        raw, off = _take(buf, off, 4, "tensor rank")
        ndim = struct.unpack("<I", raw)[0]
        raw, off = _take(buf, off, 4 * ndim, "tensor dims")
        dims = struct.unpack(f"<{ndim}I", raw) if ndim else ()
        count = int(np.prod(dims)) if ndim else 1
        raw, off = _take(buf, off, 8 * count, f"payload of {name}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
        tensors[name] = arr
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes after last tensor")
    return tensors, meta


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)

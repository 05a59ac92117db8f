"""Dense real-valued 2D/3D volumes with min-max normalization and VOLB binary I/O.

VOLB format: magic ``VOLB`` | version u32 | ndim u32 | dims u32 each |
payload as little-endian IEEE-754 float64, row-major. Round trips are
bit-exact, which everything downstream (checkpointing, determinism tests)
relies on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

VOLB_MAGIC = b"VOLB"
VOLB_VERSION = 1

# Below this peak-to-peak range a volume is treated as constant.
_FLAT_RANGE = 1e-12


class VolbError(Exception):
    """Base class for VOLB read failures."""


class VolbMagicError(VolbError):
    """File does not start with the VOLB magic."""


class VolbTruncatedError(VolbError):
    """Header or payload ends early."""


class VolbDataError(VolbError):
    """Payload decodes but violates Volume invariants (non-finite values)."""


@dataclass(frozen=True)
class Volume:
    """Immutable dense grid of float64 intensities, 2D or 3D, row-major."""

    dims: tuple[int, ...]
    values: np.ndarray

    def __init__(self, values, dims=None):
        arr = np.asarray(values, dtype=np.float64)
        if dims is not None:
            arr = arr.reshape(tuple(dims))
        if arr.ndim not in (2, 3):
            raise ValueError(f"volume must be 2D or 3D, got shape {arr.shape}")
        if any(d < 1 for d in arr.shape):
            raise ValueError(f"volume dims must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("volume contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "dims", tuple(arr.shape))
        object.__setattr__(self, "values", arr)

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def allclose(self, other: "Volume", atol: float = 0.0) -> bool:
        return self.dims == other.dims and np.allclose(
            self.values, other.values, rtol=0.0, atol=atol
        )


@dataclass(frozen=True)
class LabeledVolume:
    """A volume with its class index (0/1) and originating domain."""

    volume: Volume
    label: int
    domain_tag: str  # "source" | "target"

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.domain_tag not in ("source", "target"):
            raise ValueError(f"unknown domain tag {self.domain_tag!r}")


def minmax_normalize(v: Volume) -> Volume:
    """Affine-map values to [0, 1]; a constant volume maps to all zeros."""
    lo = float(v.values.min())
    hi = float(v.values.max())
    if hi - lo < _FLAT_RANGE:
        return Volume(np.zeros(v.dims))
    return Volume((v.values - lo) / (hi - lo))


def write_volume(v: Volume, path) -> None:
    header = VOLB_MAGIC + struct.pack("<II", VOLB_VERSION, len(v.dims))
    header += struct.pack(f"<{len(v.dims)}I", *v.dims)
    payload = v.values.astype("<f8", copy=False).tobytes(order="C")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write volume to {path}: {exc}") from exc


def read_volume(path) -> Volume:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read volume from {path}: {exc}") from exc

    if len(raw) < 4 or raw[:4] != VOLB_MAGIC:
        raise VolbMagicError(f"{path}: not a VOLB file")
    if len(raw) < 12:
        raise VolbTruncatedError(f"{path}: truncated header")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != VOLB_VERSION:
        raise VolbError(f"{path}: unsupported VOLB version {version}")
    if ndim not in (2, 3):
        raise VolbError(f"{path}: unsupported ndim {ndim}")
    if len(raw) < 12 + 4 * ndim:
        raise VolbTruncatedError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    if any(d < 1 for d in dims):
        raise VolbError(f"{path}: non-positive dim in {dims}")
    n = int(np.prod(dims))
    start = 12 + 4 * ndim
    if len(raw) < start + 8 * n:
        raise VolbTruncatedError(
            f"{path}: payload holds {(len(raw) - start) // 8} of {n} values"
        )
    data = np.frombuffer(raw, dtype="<f8", count=n, offset=start)
    if not np.all(np.isfinite(data)):
        raise VolbDataError(f"{path}: payload contains non-finite values")
    return Volume(data.reshape(dims))


def write_pgm_slice(v: Volume, path, axis: int = 0, index: int | None = None) -> None:
    """Dump one slice as an 8-bit binary PGM, intensity-stretched to [0, 255]."""
    arr = v.values
    if arr.ndim == 3:
        if index is None:
            index = arr.shape[axis] // 2
        arr = np.take(arr, index, axis=axis)
    lo, hi = float(arr.min()), float(arr.max())
    if hi - lo < _FLAT_RANGE:
        img = np.zeros(arr.shape, dtype=np.uint8)
    else:
        img = np.clip(np.rint((arr - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes(order="C"))

"""Spatial-domain augmentation baselines: mixup, cutout, cutmix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import Volume


@dataclass(frozen=True)
class PatchBox:
    """Axis-aligned box given by per-axis start and extent, in voxels."""

    starts: tuple[int, ...]
    extents: tuple[int, ...]

    def __post_init__(self):
        if len(self.starts) != len(self.extents):
            raise ValueError("starts and extents must have equal length")
        if any(e < 1 for e in self.extents):
            raise ValueError(f"box extents must be >= 1, got {self.extents}")
        if any(s < 0 for s in self.starts):
            raise ValueError(f"box starts must be >= 0, got {self.starts}")

    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(s, s + e) for s, e in zip(self.starts, self.extents))

    def volume(self) -> int:
        return int(np.prod(self.extents))

    def check_inside(self, dims: tuple[int, ...]) -> None:
        if len(self.starts) != len(dims):
            raise ValueError(f"box rank {len(self.starts)} vs volume rank {len(dims)}")
        for s, e, d in zip(self.starts, self.extents, dims):
            if s + e > d:
                raise ValueError(f"box [{s}, {s + e}) overflows axis of size {d}")


def mixup_images(a: Volume, b: Volume, lam: float) -> Volume:
    """Elementwise (1-lam)*a + lam*b."""
    if a.dims != b.dims:
        raise ValueError(f"dim mismatch: {a.dims} vs {b.dims}")
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return Volume((1.0 - lam) * a.values + lam * b.values)


def cutout(v: Volume, box: PatchBox, fill: float = 0.0) -> Volume:
    """Replace the box region with a constant fill value."""
    box.check_inside(v.dims)
    out = v.values.copy()
    out[box.slices()] = fill
    return Volume(out)


def cutmix(a: Volume, b: Volume, box: PatchBox) -> tuple[Volume, float]:
    """Paste b's box region into a; also return the pasted volume fraction.

    The fraction is the weight of b's label when interpolating labels.
    """
    if a.dims != b.dims:
        raise ValueError(f"dim mismatch: {a.dims} vs {b.dims}")
    box.check_inside(a.dims)
    out = a.values.copy()
    sl = box.slices()
    out[sl] = b.values[sl]
    return Volume(out), box.volume() / a.size


def sample_box(
    dims: tuple[int, ...],
    rng: np.random.Generator,
    min_frac: float = 0.2,
    max_frac: float = 0.5,
) -> PatchBox:
    """Random box: per-axis extent fraction ~ U(min_frac, max_frac), uniform start."""
    starts, extents = [], []
    for d in dims:
        frac = rng.uniform(min_frac, max_frac)
        e = max(1, min(d, int(round(frac * d))))
        s = int(rng.integers(0, d - e + 1))
        starts.append(s)
        extents.append(e)
    return PatchBox(tuple(starts), tuple(extents))

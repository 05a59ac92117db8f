"""Frequency-space data manipulations.

Everything here is a pure function of its inputs plus an explicit seed:
multiplicative bias-field intensity shifts, amplitude-phase recombination,
the centered region mask parameterized by a fraction ``beta``, amplitude
mixup of a source/target pair inside that region, and the hard
low-frequency amplitude swap baseline.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .spectral import Spectrum, fft_forward, fft_inverse_with_residue, recombine
from .volume import Volume


@dataclass(frozen=True)
class RegionMask:
    """Centered hyper-rectangle covering a ``beta`` fraction of each axis."""

    dims: tuple[int, ...]
    beta: float
    flags: np.ndarray

    def __post_init__(self):
        self.flags.flags.writeable = False


@dataclass(frozen=True)
class BiasFieldParams:
    order: int = 3
    sigma: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.order < 0:
            raise ValueError(f"polynomial order must be >= 0, got {self.order}")
        if self.sigma <= 0:
            raise ValueError(f"coefficient scale must be > 0, got {self.sigma}")


def _check_fraction(name: str, x: float) -> None:
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {x}")


def region_mask(dims, beta: float) -> RegionMask:
    """Boolean mask, true inside the centered block of side round(beta*dim).

    Rounding is half-up per axis; the block starts at floor((dim - side)/2),
    which keeps masks nested as beta grows.
    """
    _check_fraction("beta", beta)
    dims = tuple(int(d) for d in dims)
    flags = np.zeros(dims, dtype=bool)
    slices = []
    for d in dims:
        side = int(math.floor(beta * d + 0.5))
        start = (d - side) // 2
        slices.append(slice(start, start + side))
    if all(s.stop > s.start for s in slices):
        flags[tuple(slices)] = True
    return RegionMask(dims, float(beta), flags)


def _polynomial_field(dims, order: int, coeffs: np.ndarray) -> np.ndarray:
    """Sum of monomials of total degree <= order over [-1, 1]^ndim coordinates."""
    axes = [np.linspace(-1.0, 1.0, d) if d > 1 else np.zeros(1) for d in dims]
    grids = np.meshgrid(*axes, indexing="ij")
    field = np.zeros(dims, dtype=np.float64)
    k = 0
    for powers in itertools.product(range(order + 1), repeat=len(dims)):
        if sum(powers) > order:
            continue
        term = coeffs[k]
        mono = np.ones(dims, dtype=np.float64) * term
        for g, p in zip(grids, powers):
            if p:
                mono = mono * g**p
        field += mono
        k += 1
    return field


def num_bias_coeffs(ndim: int, order: int) -> int:
    return sum(
        1
        for powers in itertools.product(range(order + 1), repeat=ndim)
        if sum(powers) <= order
    )


def random_bias_field(v: Volume, p: BiasFieldParams) -> Volume:
    """Multiply ``v`` by exp(B) for a random low-order polynomial field B.

    Coefficients are ``sigma`` times standard normals from the seeded rng,
    enumerated in a fixed monomial order, so a given (volume dims, params)
    pair always produces the same field. Output is clamped at zero.
    """
    rng = np.random.default_rng(p.seed)
    n = num_bias_coeffs(len(v.dims), p.order)
    coeffs = p.sigma * rng.standard_normal(n)
    field = np.exp(_polynomial_field(v.dims, p.order, coeffs))
    return Volume(np.maximum(v.values * field, 0.0))


def apr_recombine(original: Volume, transformed: Volume) -> Volume:
    """Rebuild an image from the transformed input's amplitude and the original's phase."""
    if original.dims != transformed.dims:
        raise ValueError(f"dim mismatch: {original.dims} vs {transformed.dims}")
    return recombine(fft_forward(transformed), fft_forward(original))


def _mix_spectra(
    amp_source: np.ndarray,
    spec_target: Spectrum,
    mask: RegionMask,
    lam: float,
) -> Volume:
    amp_mix = np.where(
        mask.flags,
        (1.0 - lam) * amp_source + lam * spec_target.amplitude,
        spec_target.amplitude,
    )
    vol, _ = fft_inverse_with_residue(Spectrum(amp_mix, spec_target.phase))
    return vol


def amplitude_mixup(source: Volume, target: Volume, beta: float, lam: float) -> Volume:
    """Blend source/target amplitudes inside the centered beta-region.

    Inside the region the amplitude is (1-lam)*A(source) + lam*A(target);
    outside it stays the target's. The target's phase is kept everywhere,
    so the result is an amplitude-mixed version of the target image.
    """
    if source.dims != target.dims:
        raise ValueError(f"dim mismatch: {source.dims} vs {target.dims}")
    _check_fraction("beta", beta)
    _check_fraction("lambda", lam)
    spec_s = fft_forward(source)
    spec_t = fft_forward(target)
    return _mix_spectra(spec_s.amplitude, spec_t, region_mask(target.dims, beta), lam)


def fda_transfer(source: Volume, target: Volume, beta: float) -> Volume:
    """Hard-swap the centered beta-region of the target's amplitude with the source's."""
    if source.dims != target.dims:
        raise ValueError(f"dim mismatch: {source.dims} vs {target.dims}")
    _check_fraction("beta", beta)
    spec_s = fft_forward(source)
    spec_t = fft_forward(target)
    return _mix_spectra(spec_s.amplitude, spec_t, region_mask(target.dims, beta), 0.0)

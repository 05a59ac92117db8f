"""Centered discrete Fourier analysis for volumes.

The spectrum of a volume is stored as an (amplitude, phase) pair with the
zero-frequency bin moved to the grid center (index ``dim // 2`` per axis)
by index remapping, so low frequencies sit in the middle of the array.
Recombining the amplitude of one real volume with the phase of another
generally yields a non-conjugate-symmetric spectrum; the inverse transform
then takes the real part and reports the imaginary residue instead of
hiding it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import Volume

# Bins whose real and imaginary parts are both below this get phase 0,
# so the phase of numerically-dead bins is deterministic.
_DEAD_BIN = 1e-300

# Default ceiling on |imag| after inverting a spectrum that is expected to
# be conjugate-symmetric (i.e. one produced by fft_forward).
ROUNDTRIP_RESIDUE_TOL = 1e-6


class SpectralConsistencyError(Exception):
    """Inverse transform of a supposedly symmetric spectrum had large imaginary part."""


@dataclass(frozen=True)
class Spectrum:
    """Centered amplitude/phase representation of a real volume."""

    dims: tuple[int, ...]
    amplitude: np.ndarray
    phase: np.ndarray

    def __init__(self, amplitude, phase):
        amp = np.asarray(amplitude, dtype=np.float64)
        pha = np.asarray(phase, dtype=np.float64)
        if amp.shape != pha.shape:
            raise ValueError(f"amplitude {amp.shape} vs phase {pha.shape} shape mismatch")
        if amp.ndim not in (2, 3):
            raise ValueError(f"spectrum must be 2D or 3D, got shape {amp.shape}")
        if np.any(amp < 0):
            raise ValueError("amplitude must be non-negative")
        if np.any(pha <= -np.pi) or np.any(pha > np.pi):
            raise ValueError("phase must lie in (-pi, pi]")
        amp = np.ascontiguousarray(amp)
        pha = np.ascontiguousarray(pha)
        amp.flags.writeable = False
        pha.flags.writeable = False
        object.__setattr__(self, "dims", tuple(amp.shape))
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "phase", pha)


def _amplitude_phase(f_centered: np.ndarray) -> Spectrum:
    amp = np.abs(f_centered)
    pha = np.arctan2(f_centered.imag, f_centered.real)
    dead = (np.abs(f_centered.real) < _DEAD_BIN) & (np.abs(f_centered.imag) < _DEAD_BIN)
    pha = np.where(dead, 0.0, pha)
    # arctan2 can return exactly -pi; (-pi, pi] wants +pi for that angle.
    pha = np.where(pha == -np.pi, np.pi, pha)
    return Spectrum(amp, pha)


def fft_forward(v: Volume) -> Spectrum:
    """Forward transform with the DC bin centered at ``dim // 2`` per axis."""
    f = np.fft.fftshift(np.fft.fftn(v.values))
    return _amplitude_phase(f)


def fft_inverse_with_residue(s: Spectrum) -> tuple[Volume, float]:
    """Invert a spectrum, returning the real part and the max |imag| residue."""
    f = s.amplitude * np.exp(1j * s.phase)
    x = np.fft.ifftn(np.fft.ifftshift(f))
    residue = float(np.abs(x.imag).max())
    return Volume(x.real), residue


def fft_inverse(s: Spectrum, max_imag_residue: float | None = ROUNDTRIP_RESIDUE_TOL) -> Volume:
    """Invert a spectrum produced by :func:`fft_forward`.

    ``max_imag_residue`` guards against inverting a spectrum that is not
    conjugate-symmetric; pass ``None`` (or use
    :func:`fft_inverse_with_residue`) for deliberately mixed spectra.
    """
    vol, residue = fft_inverse_with_residue(s)
    if max_imag_residue is not None and residue > max_imag_residue:
        raise SpectralConsistencyError(
            f"imaginary residue {residue:g} exceeds {max_imag_residue:g}; "
            "spectrum is not conjugate-symmetric"
        )
    return vol


def recombine_with_residue(amplitude_src: Spectrum, phase_src: Spectrum) -> tuple[Volume, float]:
    """Amplitude of one spectrum + phase of another, inverted to a real volume."""
    if amplitude_src.dims != phase_src.dims:
        raise ValueError(
            f"dim mismatch: amplitude {amplitude_src.dims} vs phase {phase_src.dims}"
        )
    mixed = Spectrum(amplitude_src.amplitude, phase_src.phase)
    return fft_inverse_with_residue(mixed)


def recombine(amplitude_src: Spectrum, phase_src: Spectrum) -> Volume:
    vol, _ = recombine_with_residue(amplitude_src, phase_src)
    return vol

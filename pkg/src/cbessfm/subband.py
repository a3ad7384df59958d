"""Contiguous-bin subband split of a block spectrum and the per-band dispersion step.

Band ``i`` takes ``M = N / n_sb`` adjacent bins of the centered spectrum,
bands ordered from most negative to most positive frequency.  Chunks are
scaled by ``1/n_sb`` so that the inverse DFT of a chunk gives the band's
time-domain field at the band rate ``F_s / n_sb`` with physical amplitude,
i.e. band powers add up to the full-band power.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .channel import gvd_response
from .dsp import angular_frequencies
from .nlpr import NlprCoefficients, apply_nlpr


def band_offsets(block_size: int, n_sb: int, sample_rate: float) -> np.ndarray:
    """Angular center frequency of each band (rad/s)."""
    m = block_size // n_sb
    centers = -block_size // 2 + np.arange(n_sb) * m + m // 2
    return 2 * np.pi * centers * sample_rate / block_size


def split_spectrum(spec: np.ndarray, n_sb: int) -> np.ndarray:
    """``(..., N)`` full-band spectrum to ``(..., n_sb, M)`` band spectra in DFT order."""
    n = spec.shape[-1]
    if n % n_sb:
        raise ValueError(f"block length {n} is not divisible by {n_sb} subbands")
    if n_sb == 1:
        return spec[..., None, :]
    chunks = sfft.fftshift(spec, axes=-1).reshape(spec.shape[:-1] + (n_sb, n // n_sb))
    return sfft.ifftshift(chunks, axes=-1) / n_sb


def merge_spectrum(chunks: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`split_spectrum`."""
    n_sb, m = chunks.shape[-2:]
    if n_sb == 1:
        return chunks[..., 0, :]
    centered = sfft.fftshift(chunks, axes=-1).reshape(chunks.shape[:-2] + (n_sb * m,))
    return sfft.ifftshift(centered, axes=-1) * n_sb


@dataclass(frozen=True, eq=False)
class SubbandSet:
    """Time-domain subbands, laid out ``(..., 2, n_sb, M)`` (polarization, band, time)."""

    bands: np.ndarray
    center_offsets: np.ndarray
    subband_sample_rate: float

    @property
    def num_subbands(self) -> int:
        return self.bands.shape[-2]

    def energy(self) -> float:
        return float(np.sum(np.abs(self.bands) ** 2)) / self.subband_sample_rate


def subband_demux(block_spectrum: np.ndarray, n_sb: int, sample_rate: float) -> SubbandSet:
    """Split a ``(2, N)`` (or batched) block spectrum into ``n_sb`` time-domain subbands."""
    n = block_spectrum.shape[-1]
    chunks = split_spectrum(block_spectrum, n_sb)
    return SubbandSet(sfft.ifft(chunks, axis=-1), band_offsets(n, n_sb, sample_rate), sample_rate / n_sb)


def subband_mux(bands: SubbandSet) -> np.ndarray:
    """Block spectrum rebuilt from time-domain subbands."""
    return merge_spectrum(sfft.fft(bands.bands, axis=-1))


def subband_responses(
    n_sb: int, m: int, band_rate: float, offsets: np.ndarray, beta2: float, length_km: float, sign: int = -1
) -> np.ndarray:
    """Per-band dispersion responses ``(n_sb, M)`` on each band's own grid.

    ``exp(sign j beta2/2 (w + W_i)^2 L)`` keeps the intra-band quadratic term,
    the walk-off term linear in ``w`` and the constant band phase, so the
    bands together reproduce the full-band operator exactly.
    """
    omega = angular_frequencies(m, band_rate)
    return np.stack([gvd_response(omega + off, beta2, length_km, sign) for off in offsets[:n_sb]])


def subband_linear_step(
    bands: SubbandSet, beta2: float, length_km: float, sign: int = -1
) -> SubbandSet:
    """Dispersion step applied independently on every band in the frequency domain."""
    n_sb, m = bands.bands.shape[-2:]
    h = subband_responses(n_sb, m, bands.subband_sample_rate, bands.center_offsets, beta2, length_km, sign)
    out = sfft.ifft(sfft.fft(bands.bands, axis=-1) * h, axis=-1)
    return SubbandSet(out, bands.center_offsets, bands.subband_sample_rate)


def nlpr_step(bands: SubbandSet, coeffs: NlprCoefficients) -> SubbandSet:
    """Nonlinear phase rotation of every band from the MIMO-filtered band powers."""
    if coeffs.num_subbands != bands.num_subbands:
        raise ValueError(f"coefficients are for {coeffs.num_subbands} bands, signal has {bands.num_subbands}")
    out = apply_nlpr(bands.bands, coeffs.kernel(bands.bands.shape[-1]))
    return SubbandSet(out, bands.center_offsets, bands.subband_sample_rate)

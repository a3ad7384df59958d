"""Waveform containers and the elementary DSP shared by transmitter, link and receiver.

Arrays follow one layout everywhere: time runs along the last axis and the
polarization axis (x, y) comes right before it, so ``(2, N)`` for a plain
waveform and ``(..., 2, N)`` when extra batch axes are present.  All
filtering here is circular: simulated records are periodic.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import ceil

import numpy as np
import scipy.fft as sfft
import scipy.signal

SUPPORTED_QAM_ORDERS = (4, 16, 64, 256)


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def as_fraction(value, max_denominator: int = 4096) -> Fraction:
    """Exact rational for a sample-per-symbol figure given as int, str, float or Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    return Fraction(value).limit_denominator(max_denominator)


@dataclass(frozen=True, eq=False)
class DualPolWaveform:
    """Two aligned complex sample streams (X and Y polarization).

    ``|x|**2 + |y|**2`` is the instantaneous power in W.
    """

    x: np.ndarray
    y: np.ndarray
    sample_rate: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=complex)
        y = np.asarray(self.y, dtype=complex)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError(f"polarizations must be 1-D and equal length, got {x.shape} and {y.shape}")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_array(cls, samples: np.ndarray, sample_rate: float) -> "DualPolWaveform":
        samples = np.asarray(samples)
        if samples.shape[0] != 2 or samples.ndim != 2:
            raise ValueError(f"expected shape (2, N), got {samples.shape}")
        return cls(samples[0], samples[1], sample_rate)

    @property
    def samples(self) -> np.ndarray:
        return np.stack([self.x, self.y])

    def __len__(self) -> int:
        return self.x.size

    def power(self) -> float:
        """Mean joint power over both polarizations (W)."""
        return float(np.mean(np.abs(self.x) ** 2 + np.abs(self.y) ** 2))

    def energy(self) -> float:
        """Record energy in J (sample-period weighted)."""
        return float(np.sum(np.abs(self.x) ** 2 + np.abs(self.y) ** 2)) / self.sample_rate


@dataclass(frozen=True, eq=False)
class SymbolFrame:
    """Dual-polarization symbol sequences.

    Transmitted frames come from :func:`qam_map` and have unit mean energy per
    polarization; received frames reuse the type without that normalization.
    """

    x_syms: np.ndarray
    y_syms: np.ndarray
    symbol_rate: float

    def __post_init__(self):
        x = np.asarray(self.x_syms, dtype=complex)
        y = np.asarray(self.y_syms, dtype=complex)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("symbol polarizations must be 1-D and equal length")
        object.__setattr__(self, "x_syms", x)
        object.__setattr__(self, "y_syms", y)

    @classmethod
    def from_array(cls, symbols: np.ndarray, symbol_rate: float) -> "SymbolFrame":
        return cls(symbols[0], symbols[1], symbol_rate)

    @property
    def symbols(self) -> np.ndarray:
        return np.stack([self.x_syms, self.y_syms])

    def __len__(self) -> int:
        return self.x_syms.size


@dataclass(frozen=True)
class BlockingConfig:
    """Overlap-save geometry: block length, overlap and samples per symbol."""

    block_size: int
    overlap: int
    sps: Fraction = Fraction(9, 8)

    def __post_init__(self):
        object.__setattr__(self, "sps", as_fraction(self.sps))
        if not is_power_of_two(self.block_size):
            raise ValueError(f"block_size must be a power of two, got {self.block_size}")
        if not 0 <= self.overlap < self.block_size:
            raise ValueError(f"overlap must satisfy 0 <= overlap < block_size, got {self.overlap}")
        if self.overlap % 2:
            raise ValueError("overlap must be even (half is discarded on each block edge)")
        if self.sps < 1:
            raise ValueError("sps must be at least 1")

    @property
    def stride(self) -> int:
        return self.block_size - self.overlap

    def check_rolloff(self, rolloff: float) -> None:
        if self.sps < 1 + rolloff:
            raise ValueError(f"sps={self.sps} aliases a signal with rolloff {rolloff}")


# --- modulation -------------------------------------------------------------------


def _gray_to_binary(g: np.ndarray) -> np.ndarray:
    b = g.copy()
    shift = g >> 1
    while np.any(shift):
        b ^= shift
        shift >>= 1
    return b


def qam_constellation(order: int) -> np.ndarray:
    """Unit-energy square QAM points indexed by their Gray label."""
    if order not in SUPPORTED_QAM_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; choose from {SUPPORTED_QAM_ORDERS}")
    bits_per_dim = int(np.log2(order)) // 2
    side = 1 << bits_per_dim
    labels = np.arange(order)
    i_label = labels >> bits_per_dim
    q_label = labels & (side - 1)
    levels = 2 * np.arange(side) - (side - 1)
    points = levels[_gray_to_binary(i_label)] + 1j * levels[_gray_to_binary(q_label)]
    return points / np.sqrt(2 * (order - 1) / 3)


def qam_map(bits, order: int) -> np.ndarray:
    """Gray-mapped square QAM, most significant bit first within each label."""
    if order not in SUPPORTED_QAM_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; choose from {SUPPORTED_QAM_ORDERS}")
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = int(np.log2(order))
    if bits.size % k:
        raise ValueError(f"bit count {bits.size} is not a multiple of {k}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    labels = bits.reshape(-1, k) @ (1 << np.arange(k - 1, -1, -1))
    return qam_constellation(order)[labels]


def random_symbols(rng: np.random.Generator, count: int, order: int) -> np.ndarray:
    """``(2, count)`` dual-polarization QAM symbols from uniform random bits."""
    k = int(np.log2(order))
    bits = rng.integers(0, 2, size=2 * count * k)
    return qam_map(bits, order).reshape(2, count)


# --- pulse shaping ----------------------------------------------------------------


def rrc_taps(sps: int, rolloff: float, span_symbols: int) -> np.ndarray:
    """Root-raised-cosine taps sampled at ``sps`` per symbol, centered on the middle tap.

    Normalized so that ``sum(h**2) / sps == 1``: a unit symbol shaped and then
    matched-filtered comes back with unit gain.
    """
    if not 0 < rolloff <= 1:
        raise ValueError(f"rolloff must be in (0, 1], got {rolloff}")
    if span_symbols % 2 or span_symbols < 2:
        raise ValueError("span_symbols must be an even positive integer")
    half = span_symbols * sps // 2
    t = np.arange(-half, half + 1) / sps
    r = rolloff
    h = np.empty_like(t)
    at_zero = np.isclose(t, 0.0, atol=1e-12)
    at_sing = np.isclose(np.abs(t), 1 / (4 * r), atol=1e-9)
    regular = ~(at_zero | at_sing)
    tr = t[regular]
    h[regular] = (np.sin(np.pi * tr * (1 - r)) + 4 * r * tr * np.cos(np.pi * tr * (1 + r))) / (
        np.pi * tr * (1 - (4 * r * tr) ** 2)
    )
    h[at_zero] = 1 - r + 4 * r / np.pi
    h[at_sing] = (r / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * r)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * r))
    )
    return h / np.sqrt(np.sum(h**2) / sps)


def _circular_response(taps: np.ndarray, length: int) -> np.ndarray:
    """Frequency response of a centered FIR applied circularly on ``length`` samples."""
    half = taps.size // 2
    wrapped = np.zeros(length)
    np.add.at(wrapped, np.arange(-half, half + 1) % length, taps)
    return sfft.fft(wrapped)


def shape_symbols(symbols: np.ndarray, sps, rolloff: float, span_symbols: int = 512) -> np.ndarray:
    """Array form of :func:`rrc_shape`; ``symbols`` is ``(..., n_sym)``."""
    sps = as_fraction(sps)
    if sps < 1 + rolloff:
        raise ValueError(f"sps={sps} is below the shaped bandwidth 1 + {rolloff}")
    symbols = np.asarray(symbols, dtype=complex)
    n_sym = symbols.shape[-1]
    up, down = sps.numerator, sps.denominator
    if (n_sym * up) % down:
        raise ValueError(f"{n_sym} symbols at sps={sps} do not give an integer sample count")
    hi_len = n_sym * up
    upsampled = np.zeros(symbols.shape[:-1] + (hi_len,), dtype=complex)
    upsampled[..., ::up] = symbols
    if n_sym == 0:
        return upsampled
    taps = rrc_taps(up, rolloff, span_symbols)
    shaped = sfft.ifft(sfft.fft(upsampled, axis=-1) * _circular_response(taps, hi_len), axis=-1)
    return shaped[..., ::down]


def rrc_shape(symbols: SymbolFrame, sps, rolloff: float, filter_span_symbols: int = 512) -> DualPolWaveform:
    """Root-raised-cosine pulse shaping with circular boundary.

    Symbol ``k`` peaks at sample ``k * sps``; per-polarization mean power
    equals the mean symbol energy.
    """
    sps = as_fraction(sps)
    if filter_span_symbols < 16:
        raise ValueError("filter_span_symbols must be at least 16")
    samples = shape_symbols(symbols.symbols, sps, rolloff, filter_span_symbols)
    return DualPolWaveform.from_array(samples, symbols.symbol_rate * float(sps))


def matched_filter(samples: np.ndarray, sps, rolloff: float, span_symbols: int = 512) -> np.ndarray:
    """Array form of :func:`matched_filter_and_sample`; returns ``(..., n_sym)``."""
    sps = as_fraction(sps)
    if sps < 1 + rolloff:
        raise ValueError(f"sample rate of {sps} samples/symbol is below the signal bandwidth")
    samples = np.asarray(samples, dtype=complex)
    if sps.denominator != 1:
        target = max(2, ceil(sps))
        new_len = samples.shape[-1] * target / sps
        if new_len.denominator != 1:
            raise ValueError("record length is not a whole number of symbols")
        samples = resample_array(samples, int(new_len))
        sps = Fraction(target)
    m = int(sps)
    if samples.shape[-1] % m:
        raise ValueError("record length is not a whole number of symbols")
    taps = rrc_taps(m, rolloff, span_symbols)
    filtered = sfft.ifft(sfft.fft(samples, axis=-1) * _circular_response(taps, samples.shape[-1]), axis=-1)
    return filtered[..., ::m] / m


def matched_filter_and_sample(
    w: DualPolWaveform, symbol_rate: float, rolloff: float, filter_span_symbols: int = 512
) -> SymbolFrame:
    """RRC matched filter followed by sampling at the symbol instants.

    Non-integer rates are first brought to an integer number of samples per
    symbol by band-limited resampling.
    """
    sps = as_fraction(w.sample_rate / symbol_rate)
    symbols = matched_filter(w.samples, sps, rolloff, filter_span_symbols)
    return SymbolFrame.from_array(symbols, symbol_rate)


# --- transforms and blocking --------------------------------------------------------


def dft(block) -> np.ndarray:
    """Unnormalized forward DFT along the last axis (power-of-two lengths only)."""
    block = np.asarray(block, dtype=complex)
    if not is_power_of_two(block.shape[-1]):
        raise ValueError(f"DFT length {block.shape[-1]} is not a power of two")
    return sfft.fft(block, axis=-1)


def idft(spectrum) -> np.ndarray:
    """Inverse of :func:`dft`, scaled by ``1/N``."""
    spectrum = np.asarray(spectrum, dtype=complex)
    if not is_power_of_two(spectrum.shape[-1]):
        raise ValueError(f"DFT length {spectrum.shape[-1]} is not a power of two")
    return sfft.ifft(spectrum, axis=-1)


def angular_frequencies(n: int, sample_rate: float) -> np.ndarray:
    """Angular frequency (rad/s) of each bin in DFT order."""
    return 2 * np.pi * sfft.fftfreq(n, 1 / sample_rate)


def split_blocks(samples: np.ndarray, blocking: BlockingConfig, circular: bool = True) -> np.ndarray:
    """Cut ``(..., L)`` into overlapping blocks, returned as ``(n_blocks, ..., N)``.

    In circular mode the record is treated as periodic and the joined output
    covers all ``L`` samples; otherwise only the interior is recoverable.
    """
    samples = np.asarray(samples)
    length = samples.shape[-1]
    n, half = blocking.block_size, blocking.overlap // 2
    if length < n:
        raise ValueError(f"signal of {length} samples is shorter than one block ({n})")
    if circular:
        n_blocks = -(-length // blocking.stride)
        starts = np.arange(n_blocks) * blocking.stride - half
        idx = (starts[:, None] + np.arange(n)) % length
    else:
        n_blocks = (length - blocking.overlap) // blocking.stride
        idx = np.arange(n_blocks)[:, None] * blocking.stride + np.arange(n)
    blocks = samples[..., idx]  # (..., n_blocks, N)
    return np.moveaxis(blocks, -2, 0)


def join_blocks(blocks: np.ndarray, blocking: BlockingConfig, length: int | None = None) -> np.ndarray:
    """Inverse of :func:`split_blocks`: drop ``overlap/2`` samples on each block edge and concatenate.

    ``length`` truncates the result (the original record length in circular mode).
    """
    half = blocking.overlap // 2
    kept = blocks[..., half : blocking.block_size - half]
    joined = np.concatenate(list(kept), axis=-1)
    return joined if length is None else joined[..., :length]


def overlap_save_split(w: DualPolWaveform, cfg: BlockingConfig, circular: bool = True) -> np.ndarray:
    """Blocks of ``w`` as an array of shape ``(n_blocks, 2, N)``."""
    return split_blocks(w.samples, cfg, circular)


def overlap_save_join(
    blocks: np.ndarray, cfg: BlockingConfig, sample_rate: float, length: int | None = None
) -> DualPolWaveform:
    return DualPolWaveform.from_array(join_blocks(blocks, cfg, length), sample_rate)


# --- rate conversion ----------------------------------------------------------------


def resample_array(samples: np.ndarray, new_length: int) -> np.ndarray:
    """Band-limited (DFT zero-pad / truncate) resampling along the last axis."""
    if new_length == samples.shape[-1]:
        return np.array(samples, dtype=complex)
    return scipy.signal.resample(samples, new_length, axis=-1)


def resample(w: DualPolWaveform, p: int, q: int, bandwidth_hz: float | None = None) -> DualPolWaveform:
    """Change the sample rate by ``p/q`` over the whole record.

    ``bandwidth_hz`` is the two-sided occupied bandwidth of the content to
    keep; it is only used to reject rates that would cut into it.
    """
    ratio = Fraction(p, q)
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    new_rate = w.sample_rate * float(ratio)
    if bandwidth_hz is not None and new_rate < bandwidth_hz:
        raise ValueError(f"target rate {new_rate:.4g} Hz is below the signal bandwidth {bandwidth_hz:.4g} Hz")
    new_len = len(w) * ratio
    if new_len.denominator != 1:
        raise ValueError(f"{len(w)} samples cannot be resampled by {p}/{q} to an integer length")
    return DualPolWaveform.from_array(resample_array(w.samples, int(new_len)), new_rate)

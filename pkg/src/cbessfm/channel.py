"""Forward fiber channel: Manakov SSFM spans, EDFA noise and WDM multiplexing.

Sign convention (inherited by the receivers): the field obeys
``i du/dz = (beta2/2) d2u/dt2 - gamma |u|^2 u + i (alpha/2) u``.  With the
numpy DFT convention this makes forward dispersion the frequency response
``exp(+j beta2/2 w^2 z)`` and the nonlinear phase ``+gamma P z``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log2

import numpy as np
import scipy.fft as sfft

from .dsp import DualPolWaveform, SymbolFrame, angular_frequencies, random_symbols, shape_symbols

SPEED_OF_LIGHT = 299_792_458.0  # m/s
PLANCK = 6.62607015e-34  # J s
MANAKOV_FACTOR = 8 / 9
PS2 = 1e-24  # s^2 per ps^2


def beta2_from_D(D: float, wavelength_nm: float = 1550.0) -> float:
    """GVD parameter beta2 in ps^2/km from dispersion D in ps/(nm km)."""
    if wavelength_nm <= 0:
        raise ValueError("wavelength must be positive")
    c_nm_per_ps = SPEED_OF_LIGHT * 1e9 / 1e12
    return -D * wavelength_nm**2 / (2 * np.pi * c_nm_per_ps)


@dataclass(frozen=True)
class FiberParams:
    alpha_db_per_km: float = 0.2
    dispersion_ps_per_nm_km: float = 17.0
    gamma_per_w_km: float = 1.27
    span_length_km: float = 80.0
    reference_wavelength_nm: float = 1550.0

    def __post_init__(self):
        if self.alpha_db_per_km < 0:
            raise ValueError("alpha_db_per_km must be >= 0")
        if self.span_length_km <= 0:
            raise ValueError("span_length_km must be > 0")
        if self.gamma_per_w_km < 0:
            raise ValueError("gamma_per_w_km must be >= 0")

    @property
    def alpha_np_per_km(self) -> float:
        """Power attenuation coefficient in 1/km."""
        return self.alpha_db_per_km * np.log(10) / 10

    @property
    def beta2_ps2_per_km(self) -> float:
        return beta2_from_D(self.dispersion_ps_per_nm_km, self.reference_wavelength_nm)

    @property
    def carrier_frequency_hz(self) -> float:
        return SPEED_OF_LIGHT / (self.reference_wavelength_nm * 1e-9)

    @property
    def span_loss_db(self) -> float:
        return self.alpha_db_per_km * self.span_length_km


@dataclass(frozen=True)
class LinkConfig:
    fiber: FiberParams = field(default_factory=FiberParams)
    num_spans: int = 15
    # None switches amplifier noise off (ideal, noiseless gain).
    amplifier_noise_figure_db: float | None = 4.5
    forward_steps_per_span: int = 160

    def __post_init__(self):
        if self.num_spans < 0:
            raise ValueError("num_spans must be >= 0")
        if self.forward_steps_per_span < 1:
            raise ValueError("forward_steps_per_span must be >= 1")

    @property
    def total_length_km(self) -> float:
        return self.num_spans * self.fiber.span_length_km

    @property
    def beta2_total_ps2(self) -> float:
        return self.fiber.beta2_ps2_per_km * self.total_length_km


@dataclass(frozen=True)
class WdmConfig:
    num_channels: int = 5
    channel_spacing_hz: float = 100e9
    symbol_rate_hz: float = 93e9
    rolloff: float = 0.05
    qam_order: int = 64
    launch_power_dbm_per_channel: float = 0.0

    def __post_init__(self):
        if self.num_channels < 1:
            raise ValueError("num_channels must be >= 1")
        if self.num_channels > 1 and self.channel_spacing_hz < (1 + self.rolloff) * self.symbol_rate_hz:
            raise ValueError("channel spacing is narrower than the shaped channel bandwidth")

    @property
    def launch_power_w(self) -> float:
        return dbm_to_w(self.launch_power_dbm_per_channel)

    def simulation_sps(self) -> int:
        """Smallest power-of-two oversampling whose band holds every channel plus FWM margin."""
        needed = self.num_channels * self.channel_spacing_hz + 2 * self.symbol_rate_hz
        return 1 << max(0, ceil(log2(needed / self.symbol_rate_hz)))


def dbm_to_w(p_dbm: float) -> float:
    return 1e-3 * 10 ** (p_dbm / 10)


def effective_length(alpha_np: float, length_km: float) -> float:
    """(1 - exp(-alpha L)) / alpha, tending to L for a lossless fiber."""
    if alpha_np == 0:
        return length_km
    return -np.expm1(-alpha_np * length_km) / alpha_np


def midpoint_effective_length(alpha_np: float, step_km: float) -> float:
    """Integrated power over a step relative to the power at its midpoint: (2/alpha) sinh(alpha h / 2)."""
    if alpha_np == 0:
        return step_km
    return 2 * np.sinh(alpha_np * step_km / 2) / alpha_np


def gvd_response(freq_grid, beta2: float, length_km: float, sign: int = 1) -> np.ndarray:
    """Unit-modulus dispersion response ``exp(sign j beta2/2 w^2 L)``; beta2 in ps^2/km, w in rad/s."""
    omega = np.asarray(freq_grid, dtype=float)
    return np.exp(sign * 0.5j * beta2 * PS2 * length_km * omega**2)


def joint_power(samples: np.ndarray) -> np.ndarray:
    """|u_x|^2 + |u_y|^2 over the polarization axis (-2)."""
    return np.sum(samples.real**2 + samples.imag**2, axis=-2)


def nonlinear_phase_step(samples: np.ndarray, phase_per_watt: float) -> np.ndarray:
    """Manakov nonlinear phase rotation, identical for both polarizations."""
    return samples * np.exp(1j * phase_per_watt * joint_power(samples))[..., None, :]


def forward_span(w: DualPolWaveform, fiber: FiberParams, steps: int) -> DualPolWaveform:
    """One span of fiber with the symmetric split-step Fourier method.

    Each step is half dispersion+loss, a Manakov nonlinear phase using the
    loss-corrected length of the step, then the other half.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    out = _forward_span_array(w.samples, w.sample_rate, fiber, steps)
    return DualPolWaveform.from_array(out, w.sample_rate)


def _forward_span_array(samples: np.ndarray, sample_rate: float, fiber: FiberParams, steps: int) -> np.ndarray:
    h = fiber.span_length_km / steps
    alpha = fiber.alpha_np_per_km
    omega = angular_frequencies(samples.shape[-1], sample_rate)
    half = gvd_response(omega, fiber.beta2_ps2_per_km, h / 2) * np.exp(-alpha * h / 4)
    full = half * half
    phase = MANAKOV_FACTOR * fiber.gamma_per_w_km * midpoint_effective_length(alpha, h)

    spec = sfft.fft(samples, axis=-1) * half
    for step in range(steps):
        if fiber.gamma_per_w_km:
            u = sfft.ifft(spec, axis=-1)
            u = nonlinear_phase_step(u, phase)
            spec = sfft.fft(u, axis=-1)
        spec *= full if step < steps - 1 else half
    return sfft.ifft(spec, axis=-1)


def ase_psd(gain_db: float, noise_figure_db: float, center_freq_hz: float) -> float:
    """ASE power spectral density per polarization, (G-1) h nu n_sp with n_sp = F/2 (W/Hz)."""
    g = 10 ** (gain_db / 10)
    n_sp = 10 ** (noise_figure_db / 10) / 2
    return (g - 1) * PLANCK * center_freq_hz * n_sp


def edfa(
    w: DualPolWaveform,
    gain_db: float,
    noise_figure_db: float | None,
    center_freq_hz: float,
    rng: np.random.Generator | None = None,
) -> DualPolWaveform:
    """Amplify by ``gain_db`` and add circular Gaussian ASE on each polarization."""
    out = _edfa_array(w.samples, w.sample_rate, gain_db, noise_figure_db, center_freq_hz, rng)
    return DualPolWaveform.from_array(out, w.sample_rate)


def _edfa_array(samples, sample_rate, gain_db, noise_figure_db, center_freq_hz, rng):
    if gain_db < 0:
        raise ValueError("gain_db must be >= 0")
    out = samples * np.sqrt(10 ** (gain_db / 10))
    if noise_figure_db is None or gain_db == 0:
        return out
    if rng is None:
        raise ValueError("a random generator is required for a noisy amplifier")
    variance = ase_psd(gain_db, noise_figure_db, center_freq_hz) * sample_rate
    noise = rng.standard_normal((2,) + out.shape) * np.sqrt(variance / 2)
    return out + noise[0] + 1j * noise[1]


def run_link(tx: DualPolWaveform, link: LinkConfig, rng: np.random.Generator | None = None) -> DualPolWaveform:
    """Alternate fiber spans and loss-compensating amplifiers ``num_spans`` times."""
    samples = tx.samples
    fiber = link.fiber
    for _ in range(link.num_spans):
        samples = _forward_span_array(samples, tx.sample_rate, fiber, link.forward_steps_per_span)
        samples = _edfa_array(
            samples, tx.sample_rate, fiber.span_loss_db, link.amplifier_noise_figure_db,
            fiber.carrier_frequency_hz, rng,
        )
    return DualPolWaveform.from_array(samples, tx.sample_rate)


# --- WDM ----------------------------------------------------------------------------


def _bin_shift(n: int, sample_rate: float, offset_hz: float) -> int:
    bins = offset_hz * n / sample_rate
    shift = round(bins)
    if abs(bins - shift) > 1e-6:
        raise ValueError(f"frequency offset {offset_hz} Hz is not on the DFT grid of the record")
    return shift


def channel_offsets(num_channels: int, spacing_hz: float) -> np.ndarray:
    return (np.arange(num_channels) - (num_channels - 1) / 2) * spacing_hz


def wdm_mux(channels: list[DualPolWaveform], spacing_hz: float, bandwidth_hz: float | None = None) -> DualPolWaveform:
    """Shift channel ``k`` to ``(k - (K-1)/2) * spacing`` and sum.

    Shifts are whole DFT bins, which keeps the periodic record periodic.
    """
    rate = channels[0].sample_rate
    n = len(channels[0])
    if any(len(c) != n or c.sample_rate != rate for c in channels):
        raise ValueError("all channels need the same length and sample rate")
    offsets = channel_offsets(len(channels), spacing_hz)
    edge = np.max(np.abs(offsets)) + (bandwidth_hz or 0) / 2
    if edge >= rate / 2:
        raise ValueError(f"WDM band edge {edge:.4g} Hz aliases at sample rate {rate:.4g} Hz")
    total = np.zeros((2, n), dtype=complex)
    for ch, off in zip(channels, offsets):
        total += np.roll(sfft.fft(ch.samples, axis=-1), _bin_shift(n, rate, off), axis=-1)
    return DualPolWaveform.from_array(sfft.ifft(total, axis=-1), rate)


def wdm_demux_center(w: DualPolWaveform, spacing_hz: float, num_channels: int = 1) -> DualPolWaveform:
    """Bring the central channel to baseband behind an ideal filter one spacing wide."""
    n = len(w)
    offset = channel_offsets(num_channels, spacing_hz)[num_channels // 2]
    spec = np.roll(sfft.fft(w.samples, axis=-1), -_bin_shift(n, w.sample_rate, offset), axis=-1)
    freqs = sfft.fftfreq(n, 1 / w.sample_rate)
    spec[..., ~((freqs >= -spacing_hz / 2) & (freqs < spacing_hz / 2))] = 0
    return DualPolWaveform.from_array(sfft.ifft(spec, axis=-1), w.sample_rate)


@dataclass(frozen=True, eq=False)
class Transmission:
    """Transmitted WDM field plus the data of every channel."""

    waveform: DualPolWaveform
    symbols: list[SymbolFrame]

    @property
    def center_symbols(self) -> SymbolFrame:
        return self.symbols[len(self.symbols) // 2]


def transmit(
    wdm: WdmConfig,
    num_symbols: int,
    rng: np.random.Generator,
    sps: int | None = None,
    filter_span_symbols: int = 512,
) -> Transmission:
    """Random QAM on every channel, RRC shaped, scaled to the launch power and multiplexed.

    Channel data streams are spawned from ``rng`` so the central channel's
    symbols do not depend on how many neighbours are present.
    """
    sps = sps or wdm.simulation_sps()
    center = wdm.num_channels // 2
    order = [center] + [k for k in range(wdm.num_channels) if k != center]
    streams = dict(zip(order, rng.spawn(wdm.num_channels)))
    frames: dict[int, SymbolFrame] = {}
    waves: dict[int, DualPolWaveform] = {}
    amplitude = np.sqrt(wdm.launch_power_w / 2)
    for k in order:
        syms = random_symbols(streams[k], num_symbols, wdm.qam_order)
        frames[k] = SymbolFrame.from_array(syms, wdm.symbol_rate_hz)
        shaped = shape_symbols(syms, sps, wdm.rolloff, filter_span_symbols) * amplitude
        waves[k] = DualPolWaveform.from_array(shaped, wdm.symbol_rate_hz * sps)
    channels = [waves[k] for k in range(wdm.num_channels)]
    mux = wdm_mux(channels, wdm.channel_spacing_hz, (1 + wdm.rolloff) * wdm.symbol_rate_hz)
    return Transmission(mux, [frames[k] for k in range(wdm.num_channels)])

"""Receiver-side backpropagation engines: EDC, ESSFM, coupled-band ESSFM and ideal SSFM.

Every engine works on overlap-save blocks of a periodic record.  Inside a
block the coupled-band cascade runs entirely on band spectra:

    demux -> H((1-rho)L) -> [NLPR -> H(L)] x (N_st - 1) -> NLPR -> H(rho L) -> mux

with all dispersion responses taken with the sign opposite to the forward
link.  The nonlinear phase is whatever the MIMO coefficients say it is; for
backpropagation their dominant taps are negative.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import ceil
from typing import Callable

import numpy as np
import scipy.fft as sfft
from scipy.special import erfc

from .channel import MANAKOV_FACTOR, PS2, LinkConfig, gvd_response, midpoint_effective_length
from .dsp import BlockingConfig, DualPolWaveform, angular_frequencies, join_blocks, split_blocks
from .nlpr import NlprCoefficients, band_power, nlpr_phase
from .subband import band_offsets, merge_spectrum, split_spectrum, subband_responses


def dispersion_memory_samples(beta2_total_ps2: float, sample_rate: float) -> float:
    """Spread in samples of the group delay over the whole sampled band, |beta2 L| 2 pi F_s^2."""
    return abs(beta2_total_ps2) * PS2 * 2 * np.pi * sample_rate**2


# erfc argument at which the taper edge is 1 - 8e-13 (and its impulse response falls below 1e-12)
TAPER_EDGE = 5.0
TAPER_DECAY = 5.26


def _taper_width(sample_rate: float, passband_hz: float) -> float:
    nyquist = sample_rate / 2
    if not 0 < passband_hz < nyquist:
        raise ValueError(f"passband {passband_hz:.4g} Hz must lie inside (0, {nyquist:.4g}) Hz")
    return (nyquist - passband_hz) / (2 * TAPER_EDGE)


def passband_taper(n: int, sample_rate: float, passband_hz: float) -> np.ndarray:
    """Low-pass that is 1 up to ``passband_hz`` and 0 at Nyquist, with an erfc edge.

    Unlike the bare all-pass dispersion response, dispersion times this taper
    has an impulse response of finite length at double precision.
    """
    width = _taper_width(sample_rate, passband_hz)
    center = (passband_hz + sample_rate / 2) / 2
    return 0.5 * erfc((np.abs(sfft.fftfreq(n, 1 / sample_rate)) - center) / width)


def taper_memory_samples(sample_rate: float, passband_hz: float) -> float:
    """Length of the taper's Gaussian impulse-response envelope down to 1e-12."""
    return 2 * TAPER_DECAY / (np.pi * _taper_width(sample_rate, passband_hz)) * sample_rate


def link_memory_samples(beta2_total_ps2: float, sample_rate: float, passband_hz: float | None = None) -> float:
    memory = dispersion_memory_samples(beta2_total_ps2, sample_rate)
    if passband_hz is not None:
        memory += taper_memory_samples(sample_rate, passband_hz)
    return memory


def default_overlap(
    beta2_total_ps2: float, sample_rate: float, num_subbands: int = 1, passband_hz: float | None = None
) -> int:
    """Link memory rounded up to a multiple of ``2 * num_subbands``."""
    quantum = 2 * num_subbands
    return quantum * ceil(ceil(link_memory_samples(beta2_total_ps2, sample_rate, passband_hz)) / quantum)


def check_overlap(
    blocking: BlockingConfig,
    beta2_total_ps2: float,
    sample_rate: float,
    record_length: int | None = None,
    passband_hz: float | None = None,
) -> None:
    """Reject blockings whose overlap cannot hold the link memory.

    A periodic record processed as one block of its own length needs no
    overlap, since circular convolution is then exact.
    """
    if record_length == blocking.block_size:
        return
    needed = ceil(link_memory_samples(beta2_total_ps2, sample_rate, passband_hz) - 1e-9)
    if blocking.overlap < needed:
        raise ValueError(
            f"insufficient overlap: {blocking.overlap} samples < link memory {needed} samples"
        )


@dataclass(frozen=True)
class DbpConfig:
    """Knobs of an (E)SSFM-style backpropagation receiver."""

    num_steps: int
    num_subbands: int
    splitting_ratio: float
    blocking: BlockingConfig
    beta2_ps2_per_km: float
    total_length_km: float
    coefficients: NlprCoefficients = field(default=None)

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.num_subbands < 1:
            raise ValueError("num_subbands must be >= 1")
        if not 0 <= self.splitting_ratio <= 1:
            raise ValueError(f"splitting ratio must lie in [0, 1], got {self.splitting_ratio}")
        if self.blocking.block_size % self.num_subbands:
            raise ValueError("block size must be divisible by the number of subbands")
        if self.coefficients is None:
            object.__setattr__(self, "coefficients", NlprCoefficients.zeros(self.num_subbands))
        if self.coefficients.num_subbands != self.num_subbands:
            raise ValueError(
                f"coefficients describe {self.coefficients.num_subbands} bands, config has {self.num_subbands}"
            )

    @classmethod
    def for_link(
        cls,
        link: LinkConfig,
        num_steps: int,
        num_subbands: int = 1,
        splitting_ratio: float = 0.5,
        blocking: BlockingConfig | None = None,
        coefficients: NlprCoefficients | None = None,
    ) -> "DbpConfig":
        return cls(
            num_steps=num_steps,
            num_subbands=num_subbands,
            splitting_ratio=splitting_ratio,
            blocking=blocking or BlockingConfig(16384, 1792),
            beta2_ps2_per_km=link.fiber.beta2_ps2_per_km,
            total_length_km=link.total_length_km,
            coefficients=coefficients,
        )

    @property
    def step_length_km(self) -> float:
        return self.total_length_km / self.num_steps

    @property
    def beta2_total_ps2(self) -> float:
        return self.beta2_ps2_per_km * self.total_length_km

    def step_lengths(self) -> list[float]:
        """Lengths of the ``num_steps + 1`` linear steps."""
        L, rho = self.step_length_km, self.splitting_ratio
        return [(1 - rho) * L] + [L] * (self.num_steps - 1) + [rho * L]

    def with_coefficients(self, coefficients: NlprCoefficients) -> "DbpConfig":
        return replace(self, coefficients=coefficients)

    def with_ratio(self, rho: float) -> "DbpConfig":
        return replace(self, splitting_ratio=rho)


PhaseFn = Callable[[np.ndarray], np.ndarray]


def cascade(
    chunks: np.ndarray,
    responses: list[np.ndarray],
    phase_fn: PhaseFn,
    tangent: np.ndarray | None = None,
    injection: Callable[[np.ndarray], np.ndarray] | None = None,
):
    """Alternate per-band linear responses and nonlinear rotations on band spectra.

    ``chunks`` is ``(..., 2, n_sb, M)``; ``responses`` holds one ``(n_sb, M)``
    array per linear step (one more than the number of rotations).
    ``phase_fn`` maps band powers to phases and must be linear.

    With ``tangent`` (shape ``(n_par,) + chunks.shape``) the forward-mode
    derivative is carried along: ``injection(P)`` returns the explicit
    derivative of the phases with respect to each parameter.  Returns the
    output spectra and, if requested, their tangents.
    """
    spec = chunks * responses[0]
    dspec = None if tangent is None else tangent * responses[0]
    for h in responses[1:]:
        u = sfft.ifft(spec, axis=-1)
        power = band_power(u)
        rot = np.exp(1j * phase_fn(power))[..., None, :, :]
        if dspec is not None:
            du = sfft.ifft(dspec, axis=-1)
            dpower = 2 * np.sum((u.conj() * du).real, axis=-3)
            dtheta = phase_fn(dpower)
            if injection is not None:
                dtheta = dtheta + injection(power)
            du = rot * (du + 1j * dtheta[..., None, :, :] * u)
            dspec = sfft.fft(du, axis=-1) * h
        spec = sfft.fft(u * rot, axis=-1) * h
    return spec, dspec


def _block_spectra(w: DualPolWaveform, blocking: BlockingConfig) -> np.ndarray:
    return sfft.fft(split_blocks(w.samples, blocking, circular=True), axis=-1)


def _join(spec: np.ndarray, blocking: BlockingConfig, w: DualPolWaveform) -> DualPolWaveform:
    return DualPolWaveform.from_array(join_blocks(sfft.ifft(spec, axis=-1), blocking, len(w)), w.sample_rate)


def edc(
    w: DualPolWaveform,
    beta2_total: float,
    blocking: BlockingConfig,
    strict: bool = True,
    passband_hz: float | None = None,
) -> DualPolWaveform:
    """Electronic dispersion compensation of ``beta2_total`` (ps^2) by overlap-save.

    With ``passband_hz`` the response is restricted to the signal band by
    :func:`passband_taper`, which makes its memory finite.
    """
    if strict:
        check_overlap(blocking, beta2_total, w.sample_rate, len(w), passband_hz)
    h = gvd_response(angular_frequencies(blocking.block_size, w.sample_rate), beta2_total, 1.0, sign=-1)
    if passband_hz is not None:
        h = h * passband_taper(blocking.block_size, w.sample_rate, passband_hz)
    return _join(_block_spectra(w, blocking) * h, blocking, w)


def cb_essfm_responses(cfg: DbpConfig, sample_rate: float, sign: int = -1) -> list[np.ndarray]:
    n, n_sb = cfg.blocking.block_size, cfg.num_subbands
    offsets = band_offsets(n, n_sb, sample_rate)
    return [
        subband_responses(n_sb, n // n_sb, sample_rate / n_sb, offsets, cfg.beta2_ps2_per_km, length, sign)
        for length in cfg.step_lengths()
    ]


def cb_essfm(w: DualPolWaveform, cfg: DbpConfig, strict: bool = True) -> DualPolWaveform:
    """Coupled-band enhanced SSFM backpropagation."""
    if strict:
        check_overlap(cfg.blocking, cfg.beta2_total_ps2, w.sample_rate, len(w))
    n_sb = cfg.num_subbands
    kernel = cfg.coefficients.kernel(cfg.blocking.block_size // n_sb)
    chunks = split_spectrum(_block_spectra(w, cfg.blocking), n_sb)
    out, _ = cascade(chunks, cb_essfm_responses(cfg, w.sample_rate), lambda p: nlpr_phase(p, kernel))
    return _join(merge_spectrum(out), cfg.blocking, w)


def cb_essfm_inverse(w: DualPolWaveform, cfg: DbpConfig, strict: bool = True) -> DualPolWaveform:
    """Exact inverse of :func:`cb_essfm` (steps reversed, dispersion and phases negated).

    Rotations preserve band power, so each one is undone by the opposite
    phase computed from the same powers.  Used to plant known coefficients.
    """
    if strict:
        check_overlap(cfg.blocking, cfg.beta2_total_ps2, w.sample_rate, len(w))
    n_sb = cfg.num_subbands
    kernel = -cfg.coefficients.kernel(cfg.blocking.block_size // n_sb)
    responses = cb_essfm_responses(cfg, w.sample_rate, sign=+1)[::-1]
    chunks = split_spectrum(_block_spectra(w, cfg.blocking), n_sb)
    out, _ = cascade(chunks, responses, lambda p: nlpr_phase(p, kernel))
    return _join(merge_spectrum(out), cfg.blocking, w)


def essfm(w: DualPolWaveform, cfg: DbpConfig, strict: bool = True) -> DualPolWaveform:
    """Classic single-band ESSFM with symmetric steps, written directly on the full band.

    The splitting ratio of ``cfg`` is ignored (always 1/2).
    """
    if cfg.num_subbands != 1:
        raise ValueError("ESSFM is the single-band algorithm; use cb_essfm for subbands")
    if strict:
        check_overlap(cfg.blocking, cfg.beta2_total_ps2, w.sample_rate, len(w))
    n = cfg.blocking.block_size
    omega = angular_frequencies(n, w.sample_rate)
    step = cfg.step_length_km
    half = gvd_response(omega, cfg.beta2_ps2_per_km, step / 2, sign=-1)
    full = gvd_response(omega, cfg.beta2_ps2_per_km, step, sign=-1)
    kernel = cfg.coefficients.kernel(n)[0, 0]

    spec = _block_spectra(w, cfg.blocking) * half
    for s in range(cfg.num_steps):
        u = sfft.ifft(spec, axis=-1)
        power = np.sum(np.abs(u) ** 2, axis=-2)
        theta = sfft.irfft(sfft.rfft(power, axis=-1) * kernel, n=n, axis=-1)
        spec = sfft.fft(u * np.exp(1j * theta)[..., None, :], axis=-1)
        spec *= full if s < cfg.num_steps - 1 else half
    return _join(spec, cfg.blocking, w)


def ssfm_dbp(
    w: DualPolWaveform,
    link: LinkConfig,
    steps_total: int,
    blocking: BlockingConfig,
    num_subbands: int = 1,
    strict: bool = True,
) -> DualPolWaveform:
    """Conventional symmetric-SSFM backpropagation through the whole link.

    Each span is undone in reverse: the amplifier gain is removed, then the
    fiber is traversed backwards with gain instead of loss, negated
    dispersion and a Manakov phase ``-(8/9) gamma P L_eff`` per step.  With
    ``num_subbands > 1`` the bands are backpropagated independently (their
    mutual nonlinearity is dropped) but keep their walk-off and band phase.
    """
    if link.num_spans == 0:
        return DualPolWaveform(w.x.copy(), w.y.copy(), w.sample_rate)
    if steps_total % link.num_spans:
        raise ValueError(f"steps_total={steps_total} is not a multiple of {link.num_spans} spans")
    if strict:
        check_overlap(blocking, link.beta2_total_ps2, w.sample_rate, len(w))
    fiber = link.fiber
    per_span = steps_total // link.num_spans
    h = fiber.span_length_km / per_span
    alpha = fiber.alpha_np_per_km
    n, n_sb = blocking.block_size, num_subbands
    offsets = band_offsets(n, n_sb, w.sample_rate)
    half = subband_responses(n_sb, n // n_sb, w.sample_rate / n_sb, offsets, fiber.beta2_ps2_per_km, h / 2, -1)
    half = half * np.exp(alpha * h / 4)
    undo_gain = 10 ** (-fiber.span_loss_db / 20)

    responses = []
    for span in range(link.num_spans):
        responses.append(half * undo_gain if span == 0 else half * half * undo_gain)
        responses.extend([half * half] * (per_span - 1))
    responses.append(half)

    phase = -MANAKOV_FACTOR * fiber.gamma_per_w_km * midpoint_effective_length(alpha, h)
    chunks = split_spectrum(_block_spectra(w, blocking), n_sb)
    out, _ = cascade(chunks, responses, lambda p: phase * p)
    return _join(merge_spectrum(out), blocking, w)

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbessfm.dsp import (
    BlockingConfig,
    DualPolWaveform,
    SymbolFrame,
    dft,
    idft,
    join_blocks,
    matched_filter,
    matched_filter_and_sample,
    overlap_save_join,
    overlap_save_split,
    qam_constellation,
    qam_map,
    random_symbols,
    resample,
    rrc_shape,
    rrc_taps,
    split_blocks,
)


def test_waveform_rejects_mismatched_polarizations():
    with pytest.raises(ValueError):
        DualPolWaveform(np.zeros(4, complex), np.zeros(5, complex), 1.0)
    with pytest.raises(ValueError):
        DualPolWaveform(np.zeros(4, complex), np.zeros(4, complex), 0.0)


def test_blocking_invariants():
    with pytest.raises(ValueError):
        BlockingConfig(1000, 10)
    with pytest.raises(ValueError):
        BlockingConfig(1024, 1024)
    with pytest.raises(ValueError):
        BlockingConfig(1024, 11)
    b = BlockingConfig(1024, 100, 1.125)
    assert b.sps == Fraction(9, 8) and b.stride == 924
    with pytest.raises(ValueError):
        BlockingConfig(1024, 0, 1.0).check_rolloff(0.05)


# --- QAM ---------------------------------------------------------------------------


def test_qpsk_gray_points():
    pts = qam_map([0, 0, 0, 1, 1, 1, 1, 0], 4)
    assert np.allclose(np.abs(pts), 1.0, atol=1e-15)
    assert set(np.round(pts * np.sqrt(2), 12)) == {1 + 1j, 1 - 1j, -1 - 1j, -1 + 1j}
    # 00 -> 01 -> 11 -> 10 walks around the square one neighbour at a time
    steps = np.abs(np.diff(np.append(pts, pts[0])))
    assert np.allclose(steps, np.sqrt(2), atol=1e-12)


def test_qam64_energy_and_gray_distance():
    pts = qam_constellation(64)
    assert len(set(np.round(pts, 12))) == 64
    assert abs(np.mean(np.abs(pts) ** 2) - 1) < 1e-12
    # brute-force normalization of the integer grid {+-1, ..., +-7}^2
    grid = np.array([a + 1j * b for a in range(-7, 8, 2) for b in range(-7, 8, 2)])
    scale = np.sqrt(np.mean(np.abs(grid) ** 2))
    assert abs(scale - np.sqrt(42)) < 1e-12
    dmin = 2 / np.sqrt(42)
    dist = np.abs(pts[:, None] - pts[None, :]) + np.eye(64) * 10
    assert np.allclose(dist.min(axis=1), dmin, atol=1e-12)
    # every minimum-distance pair is one bit apart
    a, b = np.nonzero(np.abs(dist - dmin) < 1e-12)
    assert all(bin(i ^ j).count("1") == 1 for i, j in zip(a, b))


def test_qam_gray_adjacency():
    """Nearest neighbours on the grid differ by exactly one bit."""
    for order in (16, 64, 256):
        pts = qam_constellation(order)
        dmin = np.sort(np.abs(pts - pts[0]))[1]
        for a in range(order):
            close = np.flatnonzero(np.abs(np.abs(pts - pts[a]) - dmin) < 1e-9)
            assert all(bin(a ^ b).count("1") == 1 for b in close)


@pytest.mark.parametrize("order", [4, 16, 64, 256])
def test_qam_unit_energy(order):
    assert abs(np.mean(np.abs(qam_constellation(order)) ** 2) - 1) < 1e-12


def test_qam_errors():
    with pytest.raises(ValueError):
        qam_map([0, 1], 8)
    with pytest.raises(ValueError):
        qam_map([0, 1, 1], 16)
    with pytest.raises(ValueError):
        qam_map([0, 2, 1, 1], 16)


# --- RRC ---------------------------------------------------------------------------


def test_rrc_taps_singular_points_are_finite_and_continuous():
    r = 0.25  # 1/(4r) = 1 symbol, which lands on a tap at sps=4
    h = rrc_taps(4, r, 16)
    assert np.all(np.isfinite(h))
    c = h.size // 2
    # analytic limit sits between its neighbours
    assert min(h[c + 3], h[c + 5]) - 1e-3 <= h[c + 4] <= max(h[c + 3], h[c + 5]) + 1e-3
    with pytest.raises(ValueError):
        rrc_taps(4, 0.0, 16)
    with pytest.raises(ValueError):
        rrc_taps(4, 1.5, 16)


def test_rrc_is_nyquist():
    sps = 8
    h = rrc_taps(sps, 0.05, 512)
    rc = np.convolve(h, h) / sps
    c = rc.size // 2
    at_symbols = rc[c % sps :: sps]
    peak = np.argmax(np.abs(at_symbols))
    isi = np.delete(at_symbols, peak)
    assert abs(at_symbols[peak] - 1) < 1e-4
    assert np.max(np.abs(isi)) < 1e-4


@pytest.mark.parametrize("span", [128, 256, 512])
def test_rrc_isi_below_invariant(span):
    h = rrc_taps(4, 0.05, span)
    rc = np.convolve(h, h) / 4
    c = rc.size // 2
    at_symbols = rc[c % 4 :: 4]
    k = c // 4
    assert np.max(np.abs(np.delete(at_symbols, k))) < 1e-3 * abs(at_symbols[k])


def test_single_symbol_impulse_response():
    n = 64
    syms = np.zeros((2, n), complex)
    syms[:, 0] = 1
    w = rrc_shape(SymbolFrame.from_array(syms, 1.0), 4, 0.05, 16)
    h = rrc_taps(4, 0.05, 16)
    half = h.size // 2
    expect = np.zeros(n * 4)
    expect[np.arange(-half, half + 1) % (n * 4)] = h
    assert np.allclose(w.x, expect, atol=1e-12)
    assert np.argmax(np.abs(w.x)) == 0
    back = matched_filter_and_sample(w, 1.0, 0.05, 16)
    assert abs(back.x_syms[0] - 1) < 1e-3


def test_zero_frames_and_waveforms():
    w = rrc_shape(SymbolFrame.from_array(np.zeros((2, 0)), 1.0), 2, 0.05, 16)
    assert len(w) == 0
    z = DualPolWaveform.from_array(np.zeros((2, 256)), 2.0)
    assert np.all(matched_filter_and_sample(z, 1.0, 0.05).symbols == 0)


@pytest.mark.parametrize("sps", [2, Fraction(9, 8), 4])
def test_shape_match_round_trip(sps):
    rng = np.random.default_rng(3)
    frame = SymbolFrame.from_array(random_symbols(rng, 4096, 64), 32e9)
    w = rrc_shape(frame, sps, 0.05)
    assert w.sample_rate == pytest.approx(32e9 * float(sps))
    back = matched_filter_and_sample(w, 32e9, 0.05)
    assert np.max(np.abs(back.symbols - frame.symbols)) < 1e-3


def test_matched_filter_rejects_undersampling():
    with pytest.raises(ValueError):
        matched_filter(np.zeros((2, 100)), 1, 0.05)


# --- DFT ---------------------------------------------------------------------------


def test_dft_convention():
    assert np.allclose(dft([1, 0, 0, 0]), [1, 1, 1, 1])
    with pytest.raises(ValueError):
        dft(np.ones(6))
    with pytest.raises(ValueError):
        idft(np.ones(12))


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=17), st.integers(min_value=0, max_value=2**32 - 1))
def test_dft_inversion_and_parseval(log_n, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(2**log_n) + 1j * rng.standard_normal(2**log_n)
    V = dft(v)
    assert np.max(np.abs(idft(V) - v)) <= 1e-12 * max(1.0, np.max(np.abs(v))) * max(1, log_n)
    e = np.sum(np.abs(v) ** 2)
    assert abs(e - np.sum(np.abs(V) ** 2) / v.size) <= 1e-10 * e


# --- overlap-save ------------------------------------------------------------------


def test_blocking_arithmetic():
    cfg = BlockingConfig(16, 4, 2)
    blocks = split_blocks(np.arange(28), cfg, circular=False)
    assert blocks.shape == (2, 16)
    assert blocks[1, 0] - blocks[0, 0] == 12
    with pytest.raises(ValueError):
        split_blocks(np.arange(10), cfg)


def test_identity_round_trip_is_bit_exact():
    rng = np.random.default_rng(0)
    w = DualPolWaveform.from_array(rng.standard_normal((2, 1000)) + 0j, 1.0)
    cfg = BlockingConfig(128, 32, 2)
    out = overlap_save_join(overlap_save_split(w, cfg), cfg, 1.0, len(w))
    assert np.array_equal(out.samples, w.samples)
    blocks = split_blocks(w.samples, cfg, circular=False)
    inner = join_blocks(blocks, cfg)
    assert np.array_equal(inner, w.samples[:, 16 : 16 + inner.shape[-1]])


def _direct_circular(x, taps, center):
    out = np.zeros_like(x)
    for m, c in enumerate(taps):
        out += c * np.roll(x, m - center)
    return out


@settings(max_examples=25, deadline=None)
@given(
    st.integers(min_value=1, max_value=20),
    st.integers(min_value=0, max_value=2**32 - 1),
    st.sampled_from([64, 128, 256]),
)
def test_overlap_save_filter_matches_direct_convolution(ntaps, seed, n):
    rng = np.random.default_rng(seed)
    taps = rng.standard_normal(ntaps) + 1j * rng.standard_normal(ntaps)
    center = ntaps // 2
    overlap = 2 * ntaps + (2 * ntaps) % 2
    cfg = BlockingConfig(n, overlap, 2)
    x = rng.standard_normal(1000) + 1j * rng.standard_normal(1000)
    kernel = np.zeros(n, complex)
    kernel[(np.arange(ntaps) - center) % n] = taps
    H = np.fft.fft(kernel)
    blocks = split_blocks(x, cfg)
    y = join_blocks(np.fft.ifft(np.fft.fft(blocks, axis=-1) * H, axis=-1), cfg, x.size)
    ref = _direct_circular(x, taps, center)
    assert np.max(np.abs(y - ref)) < 1e-12 * np.max(np.abs(ref)) * 10


def test_three_tap_filter_against_linear_convolution():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(512) + 0j
    taps = np.array([0.25, 0.5, -0.3])
    cfg = BlockingConfig(64, 6, 2)
    kernel = np.zeros(64)
    kernel[[63, 0, 1]] = taps
    blocks = split_blocks(x, cfg, circular=False)
    y = join_blocks(np.fft.ifft(np.fft.fft(blocks, axis=-1) * np.fft.fft(kernel), axis=-1), cfg)
    ref = np.convolve(x, taps, mode="same")
    interior = ref[3 : 3 + y.size]
    assert np.max(np.abs(y - interior)) < 1e-12


# --- resampling --------------------------------------------------------------------


def test_resample_identity_and_inverse():
    rng = np.random.default_rng(4)
    w = DualPolWaveform.from_array(rng.standard_normal((2, 512)) + 0j, 2.0)
    assert np.array_equal(resample(w, 1, 1).samples, w.samples)
    # band-limited content survives a round trip
    spec = np.fft.fft(w.samples, axis=-1)
    spec[:, 100:-100] = 0
    w = DualPolWaveform.from_array(np.fft.ifft(spec, axis=-1), 2.0)
    back = resample(resample(w, 9, 4), 4, 9)
    assert np.max(np.abs(back.samples - w.samples)) < 1e-9


def test_resample_tone_and_energy():
    n, fs, rs = 2048, 2.0, 1.0
    k = 37
    t = np.arange(n) / fs
    tone = 0.7 * np.exp(2j * np.pi * (k * fs / n) * t)
    w = DualPolWaveform(tone, tone.copy(), fs)
    out = resample(w, 9, 16, bandwidth_hz=1.05 * rs)
    assert out.sample_rate == pytest.approx(9 / 8)
    t2 = np.arange(len(out)) / out.sample_rate
    expect = 0.7 * np.exp(2j * np.pi * (k * fs / n) * t2)
    assert np.max(np.abs(out.x - expect)) < 1e-9
    assert abs(out.energy() - w.energy()) < 1e-6 * w.energy()


def test_resample_rejects_band_cutting_rate():
    w = DualPolWaveform.from_array(np.zeros((2, 64)), 2.0)
    with pytest.raises(ValueError):
        resample(w, 1, 2, bandwidth_hz=1.5)
    with pytest.raises(ValueError):
        resample(w, 7, 5)

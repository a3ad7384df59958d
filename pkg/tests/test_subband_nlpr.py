import numpy as np
import pytest
import scipy.fft as sfft
from hypothesis import given, settings
from hypothesis import strategies as st

from cbessfm.channel import gvd_response
from cbessfm.dsp import angular_frequencies
from cbessfm.nlpr import (
    NlprCoefficients,
    apply_nlpr,
    band_power,
    load_coefficients,
    nlpr_phase,
    save_coefficients,
)
from cbessfm.subband import (
    SubbandSet,
    band_offsets,
    merge_spectrum,
    nlpr_step,
    split_spectrum,
    subband_demux,
    subband_linear_step,
    subband_mux,
)

FS = 36e9


def random_block(rng, n):
    return rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))


def random_coefficients(rng, n_sb, k_intra, k_inter, scale=1.0):
    intra = rng.standard_normal((n_sb, 2 * k_intra + 1))
    intra = scale * (intra + intra[:, ::-1])
    inter = scale * rng.standard_normal((n_sb, n_sb, 2 * k_inter + 1))
    inter[np.arange(n_sb), np.arange(n_sb)] = 0
    return NlprCoefficients(intra, inter)


def direct_phase(power, coeffs):
    """theta_i[k] = sum_j sum_m c[i][j][m] P_j[k - m] by explicit circular indexing."""
    n_sb, m = power.shape
    theta = np.zeros((n_sb, m))
    k = np.arange(m)
    for i in range(n_sb):
        for j in range(n_sb):
            taps = coeffs.taps(i, j)
            half = taps.size // 2
            for d, c in zip(range(-half, half + 1), taps):
                theta[i] += c * power[j, (k - d) % m]
    return theta


def test_single_band_is_identity():
    rng = np.random.default_rng(0)
    spec = random_block(rng, 64)
    assert np.array_equal(split_spectrum(spec, 1)[..., 0, :], spec)
    bands = subband_demux(spec, 1, FS)
    assert np.allclose(bands.bands[:, 0], sfft.ifft(spec, axis=-1), atol=1e-15)
    assert np.allclose(subband_mux(bands), spec, rtol=0, atol=1e-12)


@pytest.mark.parametrize("n_sb", [2, 3, 4, 8])
def test_split_merge_round_trip(n_sb):
    rng = np.random.default_rng(n_sb)
    spec = random_block(rng, 96 * 8)
    assert np.max(np.abs(merge_spectrum(split_spectrum(spec, n_sb)) - spec)) < 1e-15 * np.max(np.abs(spec))
    back = subband_mux(subband_demux(spec, n_sb, FS))
    assert np.max(np.abs(back - spec)) < 1e-12 * np.max(np.abs(spec))


def test_indivisible_block_is_rejected():
    with pytest.raises(ValueError):
        split_spectrum(np.zeros((2, 100), complex), 3)


def test_band_offsets_are_ordered_and_centered():
    off = band_offsets(1024, 4, FS)
    assert np.all(np.diff(off) > 0)
    assert np.allclose(np.diff(off), 2 * np.pi * FS / 4)
    # odd count puts the middle band at baseband
    assert band_offsets(960, 3, FS)[1] == 0.0


@pytest.mark.parametrize("n_sb", [2, 4, 8])
def test_band_energies_add_up(n_sb):
    rng = np.random.default_rng(10 + n_sb)
    x = random_block(rng, 2048)
    bands = subband_demux(sfft.fft(x, axis=-1), n_sb, FS)
    parent = np.sum(np.abs(x) ** 2) / FS
    assert bands.energy() == pytest.approx(parent, rel=1e-12)


@pytest.mark.parametrize("n_sb, band", [(2, 0), (2, 1), (4, 2), (3, 0)])
def test_tone_lands_in_its_band_at_baseband(n_sb, band):
    n = 384
    m = n // n_sb
    k = (-n // 2 + band * m + m // 2) % n
    amp = 0.7 * np.exp(0.3j)
    x = np.zeros((2, n), complex)
    x[0] = amp * np.exp(2j * np.pi * k * np.arange(n) / n)
    bands = subband_demux(sfft.fft(x, axis=-1), n_sb, FS).bands
    assert np.allclose(bands[0, band], amp, atol=1e-12)
    others = np.delete(bands[0], band, axis=0)
    assert np.max(np.abs(others)) < 1e-12
    assert np.max(np.abs(bands[1])) == 0


def test_zero_length_step_is_identity():
    rng = np.random.default_rng(3)
    bands = subband_demux(sfft.fft(random_block(rng, 256), axis=-1), 4, FS)
    out = subband_linear_step(bands, -21.7, 0.0)
    assert np.allclose(out.bands, bands.bands, rtol=0, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from([1, 2, 3, 4, 8]),
    st.floats(min_value=-40.0, max_value=40.0),
    st.floats(min_value=0.0, max_value=2000.0),
    st.sampled_from([-1, 1]),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_per_band_steps_equal_full_band_gvd(n_sb, beta2, length, sign, seed):
    rng = np.random.default_rng(seed)
    n = 24 * 32
    spec = sfft.fft(random_block(rng, n), axis=-1)
    bands = subband_linear_step(subband_demux(spec, n_sb, FS), beta2, length, sign)
    full = spec * gvd_response(angular_frequencies(n, FS), beta2, length, sign)
    assert np.max(np.abs(subband_mux(bands) - full)) < 1e-12 * np.max(np.abs(full))


def test_walk_off_delays_band_envelopes():
    n, n_sb = 4096, 2
    rate = 64e9
    m = n // n_sb
    t = np.arange(n) / rate
    t0, width = t[n // 2], 60e-12
    off = band_offsets(n, n_sb, rate)
    # one Gaussian pulse at the center of each band
    x = np.zeros((2, n), complex)
    for o in off:
        x[0] += np.exp(-((t - t0) ** 2) / (2 * width**2)) * np.exp(1j * o * (t - t0))
    bands = subband_demux(sfft.fft(x, axis=-1), n_sb, rate)
    beta2, length = -21.7, 40.0
    out = subband_linear_step(bands, beta2, length, sign=1)
    tb = np.arange(m) / (rate / n_sb)

    def centroid(u):
        p = np.abs(u) ** 2
        return np.sum(tb * p) / np.sum(p)

    before = [centroid(bands.bands[0, i]) for i in range(n_sb)]
    after = [centroid(out.bands[0, i]) for i in range(n_sb)]
    shift = np.subtract(after, before)
    # group delay of exp(j beta2/2 (w + W)^2 L) under the exp(-j w t) convention
    expect = -beta2 * 1e-24 * off * length
    np.testing.assert_allclose(shift, expect, rtol=1e-3, atol=1e-15)
    assert (shift[1] - shift[0]) == pytest.approx(-beta2 * 1e-24 * (off[1] - off[0]) * length, rel=1e-3)


# --- NLPR ----------------------------------------------------------------------------


def test_coefficient_validation():
    with pytest.raises(ValueError):
        NlprCoefficients(np.array([[1.0, 2.0, 3.0]]), np.zeros((1, 1, 1)))
    with pytest.raises(ValueError):
        NlprCoefficients(np.zeros((2, 4)), np.zeros((2, 2, 1)))
    with pytest.raises(ValueError):
        NlprCoefficients(np.zeros((1, 1)), np.ones((1, 1, 1)))
    with pytest.raises(ValueError):
        NlprCoefficients(np.array([[np.nan]]), np.zeros((1, 1, 1)))
    with pytest.raises(ValueError):
        NlprCoefficients.zeros(1, 8).kernel(10)
    assert NlprCoefficients.zeros(3).is_zero()
    assert not NlprCoefficients.single_tap(-0.1).is_zero()


@pytest.mark.parametrize("n_sb", [1, 2, 3])
def test_frequency_domain_phase_matches_direct_convolution(n_sb):
    rng = np.random.default_rng(20 + n_sb)
    m = 97
    coeffs = random_coefficients(rng, n_sb, 5, 7)
    power = rng.random((n_sb, m))
    fast = nlpr_phase(power, coeffs.kernel(m))
    assert np.max(np.abs(fast - direct_phase(power, coeffs))) < 1e-10


def test_zero_coefficients_are_identity():
    rng = np.random.default_rng(4)
    bands = SubbandSet(rng.standard_normal((2, 2, 64)) + 0j, np.zeros(2), FS)
    out = nlpr_step(bands, NlprCoefficients.zeros(2, 4, 4))
    assert np.array_equal(out.bands, bands.bands)


def test_single_tap_is_classic_rotation():
    rng = np.random.default_rng(5)
    u = rng.standard_normal((2, 1, 128)) + 1j * rng.standard_normal((2, 1, 128))
    c0 = -0.37
    out = apply_nlpr(u, NlprCoefficients.single_tap(c0).kernel(128))
    p = band_power(u)
    np.testing.assert_allclose(out, u * np.exp(1j * c0 * p)[None], rtol=1e-12, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([1, 2, 4]), st.floats(min_value=-50, max_value=50), st.integers(min_value=0, max_value=2**32 - 1))
def test_rotation_preserves_joint_power(n_sb, scale, seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((2, n_sb, 64)) + 1j * rng.standard_normal((2, n_sb, 64))
    coeffs = random_coefficients(rng, n_sb, 3, 3, scale)
    out = nlpr_step(SubbandSet(u, np.zeros(n_sb), FS), coeffs).bands
    np.testing.assert_array_max_ulp(band_power(out), band_power(u), maxulp=4)


def test_band_count_mismatch_is_rejected():
    bands = SubbandSet(np.zeros((2, 2, 32), complex), np.zeros(2), FS)
    with pytest.raises(ValueError):
        nlpr_step(bands, NlprCoefficients.zeros(1, 2, 2))


def test_coefficient_file_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    coeffs = random_coefficients(rng, 3, 4, 6)
    path = tmp_path / "taps.txt"
    save_coefficients(path, coeffs, 0.37, 5, 160.0)
    back, meta = load_coefficients(path)
    assert np.array_equal(back.intra, coeffs.intra)
    assert np.array_equal(back.inter, coeffs.inter)
    assert meta == {"n_sb": 3, "k_intra": 4, "k_inter": 6, "rho": 0.37, "n_st": 5, "step_length_km": 160.0}


def test_coefficient_file_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("n_sb = 1\nk_intra = 0\nk_inter = 0\n0 0 0\n")
    with pytest.raises(ValueError, match="bad.txt:4"):
        load_coefficients(bad)
    bad.write_text("n_sb = 1\n0 0 0 1.0\n")
    with pytest.raises(ValueError, match="missing header"):
        load_coefficients(bad)

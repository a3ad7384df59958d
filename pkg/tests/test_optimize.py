import warnings

import numpy as np
import pytest

from cbessfm.channel import FiberParams, LinkConfig, dbm_to_w, effective_length, run_link
from cbessfm.dbp import DbpConfig, cb_essfm_inverse
from cbessfm.dsp import BlockingConfig, DualPolWaveform, SymbolFrame, matched_filter, random_symbols, rrc_shape
from cbessfm.nlpr import NlprCoefficients, nlpr_phase
from cbessfm.optimize import (
    OptimizationError,
    OptimizerSettings,
    TapLayout,
    TrainingSet,
    _Problem,
    evaluate_snr,
    optimize_coefficients,
    parabolic_peak,
    split_holdout,
    sweep_launch_power,
    sweep_splitting_ratio,
)

FIBER = FiberParams()


def launch(seed, num_symbols, rate=32e9, power_dbm=3.0, sps=2):
    rng = np.random.default_rng(seed)
    frame = SymbolFrame.from_array(random_symbols(rng, num_symbols, 64), rate)
    w = rrc_shape(frame, sps, 0.05)
    return DualPolWaveform.from_array(w.samples * np.sqrt(dbm_to_w(power_dbm) / w.power()), w.sample_rate), frame


def whole(w):
    return BlockingConfig(len(w), 0, sps=2)


def planted(seed=1, n_sb=2, k=2, num_symbols=2048):
    """Receiver input generated by the exact inverse of a cascade with known taps."""
    w, _ = launch(seed, num_symbols, power_dbm=4.0)
    rng = np.random.default_rng(seed + 100)
    intra = rng.normal(size=(n_sb, 2 * k + 1)) * 3
    intra = intra + intra[:, ::-1]
    intra[:, k] -= 20
    inter = rng.normal(size=(n_sb, n_sb, 2 * k + 1)) * 3
    inter[np.arange(n_sb), np.arange(n_sb)] = 0
    truth = NlprCoefficients(intra, inter)
    link = LinkConfig(FIBER, num_spans=2)
    cfg = DbpConfig.for_link(link, 2, n_sb, 0.3, whole(w), truth)
    rx = cb_essfm_inverse(w, cfg)
    # reference: the clean waveform through the same matched filter the receiver uses
    ref = SymbolFrame.from_array(matched_filter(w.samples, 2, 0.05), 32e9)
    return TrainingSet(rx, ref, 0.05), cfg.with_coefficients(NlprCoefficients.zeros(n_sb, k, k)), truth


def test_settings_validation():
    with pytest.raises(ValueError):
        OptimizerSettings(relative_tolerance=0)
    with pytest.raises(ValueError):
        OptimizerSettings(holdout_fraction=1.0)
    with pytest.raises(ValueError):
        OptimizerSettings(max_iterations=-1)


def test_training_set_length_check():
    w, frame = launch(0, 256)
    with pytest.raises(ValueError):
        TrainingSet(DualPolWaveform.from_array(w.samples[:, :300], w.sample_rate), frame, 0.05)
    assert TrainingSet(w, frame, 0.05).sps == 2


def test_tap_layout_round_trip():
    rng = np.random.default_rng(0)
    layout = TapLayout(3, 2, 4)
    assert layout.num_params == 3 * 3 + 6 * 9
    vec = rng.standard_normal(layout.num_params)
    coeffs = layout.to_coefficients(vec)
    assert np.array_equal(coeffs.intra, coeffs.intra[:, ::-1])
    assert np.array_equal(layout.from_coefficients(coeffs), vec)
    with pytest.raises(ValueError):
        layout.from_coefficients(NlprCoefficients.zeros(3, 1, 4))


def test_injection_is_the_phase_derivative():
    rng = np.random.default_rng(1)
    layout = TapLayout(2, 3, 2)
    power = rng.random((2, 40))
    inj = layout.injection(power)
    for p in range(layout.num_params):
        unit = np.zeros(layout.num_params)
        unit[p] = 1.0
        theta = nlpr_phase(power, layout.to_coefficients(unit).kernel(40))
        np.testing.assert_allclose(inj[p], theta, atol=1e-12)


def test_jacobian_matches_finite_differences():
    train, cfg, truth = planted(k=1, num_symbols=512)
    layout = TapLayout.like(cfg.coefficients)
    problem = _Problem(train, cfg, layout)
    vec = 0.5 * layout.from_coefficients(truth)
    _, dy = problem.run(vec, jacobian=True)
    h = 1e-4
    for p in range(layout.num_params):
        e = np.zeros_like(vec)
        e[p] = h
        fd = (problem.run(vec + e)[0] - problem.run(vec - e)[0]) / (2 * h)
        assert np.max(np.abs(dy[p] - fd)) < 1e-6 * np.max(np.abs(fd)) + 1e-12


def test_planted_taps_are_recovered():
    train, cfg, truth = planted()
    coeffs, report = optimize_coefficients(train, cfg, OptimizerSettings(max_iterations=30, relative_tolerance=1e-12))
    diff = np.concatenate([(coeffs.intra - truth.intra).ravel(), (coeffs.inter - truth.inter).ravel()])
    assert np.sqrt(np.mean(diff**2)) < 1e-3
    assert np.all(np.diff(report.objective_trace) <= 0)
    assert report.objective_trace[-1] < 1e-20


def test_single_tap_matches_self_phase_coefficient():
    # 4 GBd keeps dispersion negligible over the effective length
    w, frame = launch(2, 4096, rate=4e9, power_dbm=3.0)
    link = LinkConfig(FIBER, num_spans=1, amplifier_noise_figure_db=None, forward_steps_per_span=200)
    train = TrainingSet(run_link(w, link), frame, 0.05, edge_trim_symbols=64)
    cfg = DbpConfig.for_link(link, 1, 1, 0.5, whole(w), NlprCoefficients.single_tap(0.0))
    coeffs, _ = optimize_coefficients(train, cfg, OptimizerSettings(holdout_fraction=0.0))
    expect = -8 / 9 * FIBER.gamma_per_w_km * effective_length(FIBER.alpha_np_per_km, FIBER.span_length_km)
    assert coeffs.intra[0, 0] == pytest.approx(expect, rel=0.1)


def test_linear_channel_null_case():
    w, frame = launch(3, 4096, power_dbm=0.0)
    link = LinkConfig(FiberParams(gamma_per_w_km=0.0), num_spans=2, amplifier_noise_figure_db=5.0)
    rx = run_link(w, link, np.random.default_rng(3))
    train = TrainingSet(rx, frame, 0.05, edge_trim_symbols=64)
    cfg = DbpConfig.for_link(link, 2, 2, 0.5, whole(w), NlprCoefficients.zeros(2, 4, 4))
    coeffs, report = optimize_coefficients(train, cfg)
    assert report.holdout_objective <= report.holdout_objective_initial
    # taps stay at noise level: the phase they impose is far below a radian
    assert np.max(np.abs(coeffs.intra)) * dbm_to_w(0.0) * 9 < 0.05


def test_holdout_split():
    settings = OptimizerSettings()
    train, hold = split_holdout(10000, settings, edge_trim=100)
    assert np.intersect1d(train, hold).size == 0
    assert np.array_equal(np.sort(np.concatenate([train, hold])), np.arange(100, 9900))
    assert hold.size / 9800 == pytest.approx(0.2, abs=0.02)
    again = split_holdout(10000, settings, edge_trim=100)
    assert np.array_equal(again[1], hold)
    other = split_holdout(10000, OptimizerSettings(rng_seed=1), edge_trim=100)
    assert not np.array_equal(other[1], hold)
    assert split_holdout(100, OptimizerSettings(holdout_fraction=0.0))[1].size == 0
    with pytest.raises(ValueError):
        split_holdout(100, settings, edge_trim=50)


def test_optimizer_is_deterministic():
    train, cfg, _ = planted(k=1, num_symbols=1024)
    settings = OptimizerSettings(max_iterations=3)
    a, ra = optimize_coefficients(train, cfg, settings)
    b, rb = optimize_coefficients(train, cfg, settings)
    assert np.array_equal(a.intra, b.intra) and np.array_equal(a.inter, b.inter)
    assert ra.objective_trace == rb.objective_trace


def test_non_finite_input_aborts():
    train, cfg, _ = planted(k=1, num_symbols=512)
    samples = train.rx_waveform.samples.copy()
    samples[0, 10] = np.nan
    bad = TrainingSet(DualPolWaveform.from_array(samples, train.rx_waveform.sample_rate), train.tx_symbols, 0.05)
    with pytest.raises(OptimizationError):
        optimize_coefficients(bad, cfg)


def test_single_ratio_sweep_is_one_evaluation():
    train, cfg, _ = planted(k=1, num_symbols=1024)
    settings = OptimizerSettings(max_iterations=5)
    sweep = sweep_splitting_ratio([0.5], cfg, train, train, settings, refine_step=None)
    assert sweep.rhos == [0.5] and len(sweep.per_realization[0]) == 1
    coeffs, _ = optimize_coefficients(train, cfg.with_ratio(0.5), settings)
    assert sweep.best_snr_db == evaluate_snr(cfg.with_ratio(0.5).with_coefficients(coeffs), train)
    with pytest.raises(ValueError):
        sweep_splitting_ratio([1.5], cfg, train, train)
    with pytest.raises(ValueError):
        sweep_splitting_ratio([0.5], cfg, [train, train], [train])


def test_power_sweep():
    sweep = sweep_launch_power([-2, -1, 0, 1, 2], lambda p: 10 - (p - 0.3) ** 2)
    assert sweep.best_power_dbm == pytest.approx(0.3, abs=1e-12)
    assert sweep.best_snr_db == pytest.approx(10.0, abs=1e-12)
    assert not sweep.at_edge
    with pytest.warns(RuntimeWarning, match="edge"):
        edge = sweep_launch_power([-2, -1, 0], lambda p: p)
    assert edge.at_edge and edge.best_power_dbm == 0
    with pytest.raises(ValueError):
        sweep_launch_power([0, 1], lambda p: p)
    with pytest.raises(ValueError):
        sweep_launch_power([0, 2, 1], lambda p: p)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sweep_launch_power([0, 1, 2], lambda p: -abs(p - 1))


def test_parabolic_peak():
    assert parabolic_peak([0, 1, 2], [1, 3, 1]) == pytest.approx((1.0, 3.0))
    # convex data falls back to the best sample
    assert parabolic_peak([0, 1, 2], [3, 1, 2]) == (0.0, 3.0)

"""Numerical fitting of the NLPR filter taps, and the splitting-ratio and launch-power sweeps.

The nonlinear phases are linear in the taps, so the receiver output is a
smooth function of them and Gauss-Newton applies directly.  The Jacobian is
exact: tap derivatives are carried forward through every step of the
cascade (including how a perturbed field changes later intensities), then
through the matched filter.  The objective is the normalized error after a
least-squares complex gain fit,

    J(c) = min_a mean|a y(c) - x|^2 / mean|x|^2,

which is a monotone function of the effective SNR used for evaluation.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .dbp import DbpConfig, cascade, cb_essfm, cb_essfm_responses, check_overlap
from .dsp import DualPolWaveform, SymbolFrame, as_fraction, join_blocks, matched_filter, split_blocks
from .metrics import snr_db
from .nlpr import NlprCoefficients, nlpr_phase
from .subband import merge_spectrum, split_spectrum

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    """The objective became non-finite (the iteration diverged)."""


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Received waveform at the receiver rate plus the known transmitted symbols."""

    rx_waveform: DualPolWaveform
    tx_symbols: SymbolFrame
    rolloff: float
    filter_span_symbols: int = 512
    edge_trim_symbols: int = 0

    def __post_init__(self):
        sps = as_fraction(self.rx_waveform.sample_rate / self.tx_symbols.symbol_rate)
        if len(self.tx_symbols) * sps > len(self.rx_waveform):
            raise ValueError("received record is shorter than the transmitted symbols")

    @property
    def sps(self):
        return as_fraction(self.rx_waveform.sample_rate / self.tx_symbols.symbol_rate)


# evaluation data has the same shape as training data
EvalSet = TrainingSet


@dataclass(frozen=True)
class OptimizerSettings:
    max_iterations: int = 25
    relative_tolerance: float = 1e-4
    initial_step: float = 1.0
    rng_seed: int = 0
    holdout_fraction: float = 0.2
    ridge: float = 1e-6
    holdout_chunk_symbols: int = 64
    max_halvings: int = 12

    def __post_init__(self):
        if self.relative_tolerance <= 0:
            raise ValueError("relative_tolerance must be > 0")
        if not 0 <= self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in [0, 1)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class ConvergenceReport:
    objective_trace: list[float] = field(default_factory=list)
    holdout_trace: list[float] = field(default_factory=list)
    step_sizes: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    best_iteration: int = 0

    @property
    def holdout_objective(self) -> float:
        return self.holdout_trace[self.best_iteration]

    @property
    def holdout_objective_initial(self) -> float:
        return self.holdout_trace[0]


class TapLayout:
    """Maps the free real parameters to MIMO taps.

    Intra-band filters contribute ``k_intra + 1`` parameters each (delays
    0..K, mirrored), inter-band filters ``2 k_inter + 1`` (delays -K..K).
    """

    def __init__(self, n_sb: int, k_intra: int, k_inter: int):
        self.n_sb, self.k_intra, self.k_inter = n_sb, k_intra, k_inter
        entries = [(i, i, m) for i in range(n_sb) for m in range(k_intra + 1)]
        entries += [
            (i, j, m) for i in range(n_sb) for j in range(n_sb) if i != j for m in range(-k_inter, k_inter + 1)
        ]
        self.entries = entries

    @classmethod
    def like(cls, coeffs: NlprCoefficients) -> "TapLayout":
        return cls(coeffs.num_subbands, coeffs.k_intra, coeffs.k_inter)

    @property
    def num_params(self) -> int:
        return len(self.entries)

    def to_coefficients(self, vec: np.ndarray) -> NlprCoefficients:
        intra = np.zeros((self.n_sb, 2 * self.k_intra + 1))
        inter = np.zeros((self.n_sb, self.n_sb, 2 * self.k_inter + 1))
        for (i, j, m), v in zip(self.entries, vec):
            if i == j:
                intra[i, self.k_intra + m] = v
                intra[i, self.k_intra - m] = v
            else:
                inter[i, j, self.k_inter + m] = v
        return NlprCoefficients(intra, inter)

    def from_coefficients(self, coeffs: NlprCoefficients) -> np.ndarray:
        if TapLayout.like(coeffs).entries != self.entries:
            raise ValueError("coefficient shape does not match the layout")
        return np.array([
            coeffs.intra[i, self.k_intra + m] if i == j else coeffs.inter[i, j, self.k_inter + m]
            for i, j, m in self.entries
        ])

    def injection(self, power: np.ndarray) -> np.ndarray:
        """Derivative of the phases ``(..., n_sb, M)`` with respect to every parameter."""
        out = np.zeros((self.num_params,) + power.shape)
        for p, (i, j, m) in enumerate(self.entries):
            src = power[..., j, :]
            if i == j and m:
                out[p, ..., i, :] = np.roll(src, m, axis=-1) + np.roll(src, -m, axis=-1)
            else:
                out[p, ..., i, :] = np.roll(src, m, axis=-1)
        return out


class _Problem:
    """Receiver output and its tap Jacobian on one training record."""

    def __init__(self, train: TrainingSet, cfg: DbpConfig, layout: TapLayout):
        w = train.rx_waveform
        check_overlap(cfg.blocking, cfg.beta2_total_ps2, w.sample_rate, len(w))
        self.train, self.cfg, self.layout = train, cfg, layout
        self.m = cfg.blocking.block_size // cfg.num_subbands
        blocks = split_blocks(w.samples, cfg.blocking, circular=True)
        self.chunks = split_spectrum(sfft.fft(blocks, axis=-1), cfg.num_subbands)
        self.responses = cb_essfm_responses(cfg, w.sample_rate)
        self.length = len(w)
        self.tx = train.tx_symbols.symbols

    def _symbols(self, spec: np.ndarray, batch: bool) -> np.ndarray:
        blocks = sfft.ifft(merge_spectrum(spec), axis=-1)
        if batch:
            blocks = np.moveaxis(blocks, 1, 0)
        samples = join_blocks(blocks, self.cfg.blocking, self.length)
        return matched_filter(samples, self.train.sps, self.train.rolloff, self.train.filter_span_symbols)

    def run(self, vec: np.ndarray, jacobian: bool = False):
        kernel = self.layout.to_coefficients(vec).kernel(self.m)
        phase_fn = lambda p: nlpr_phase(p, kernel)  # noqa: E731
        tangent = np.zeros((self.layout.num_params,) + self.chunks.shape, dtype=complex) if jacobian else None
        out, dout = cascade(
            self.chunks, self.responses, phase_fn, tangent, self.layout.injection if jacobian else None
        )
        y = self._symbols(out, batch=False)
        dy = self._symbols(dout, batch=True) if jacobian else None
        return y, dy


def _objective(y: np.ndarray, x: np.ndarray) -> tuple[float, complex]:
    """Normalized residual after the best complex gain, and that gain."""
    yy = np.vdot(y, y).real
    if yy == 0:
        return 1.0, 0j
    with np.errstate(invalid="ignore"):  # non-finite input is reported by the caller
        a = np.vdot(y, x) / yy
        err = np.mean(np.abs(a * y - x) ** 2) / np.mean(np.abs(x) ** 2)
    return float(err), complex(a)


def split_holdout(n_symbols: int, settings: OptimizerSettings, edge_trim: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Symbol indices for training and holdout, assigned by contiguous chunks."""
    idx = np.arange(edge_trim, n_symbols - edge_trim)
    if idx.size == 0:
        raise ValueError("no symbols left after edge trimming")
    if settings.holdout_fraction == 0:
        return idx, idx[:0]
    chunk = settings.holdout_chunk_symbols
    n_chunks = max(2, idx.size // chunk)
    labels = np.minimum((idx - idx[0]) * n_chunks // idx.size, n_chunks - 1)
    rng = np.random.default_rng(settings.rng_seed)
    n_hold = max(1, round(settings.holdout_fraction * n_chunks))
    held = rng.permutation(n_chunks)[:n_hold]
    mask = np.isin(labels, held)
    return idx[~mask], idx[mask]


def optimize_coefficients(
    train: TrainingSet,
    cfg: DbpConfig,
    settings: OptimizerSettings = OptimizerSettings(),
    initial: NlprCoefficients | None = None,
) -> tuple[NlprCoefficients, ConvergenceReport]:
    """Fit the MIMO taps of ``cfg`` by damped Gauss-Newton on the training record.

    Tap shapes are taken from ``initial`` if given, else from
    ``cfg.coefficients``; iterations start from ``initial`` or all-zero taps
    (plain dispersion compensation).  The returned taps are the iterate with
    the lowest holdout objective.
    """
    shape_source = initial if initial is not None else cfg.coefficients
    layout = TapLayout.like(shape_source)
    problem = _Problem(train, cfg, layout)
    train_idx, hold_idx = split_holdout(len(train.tx_symbols), settings, train.edge_trim_symbols)
    x_train = problem.tx[:, train_idx].ravel()
    x_hold = problem.tx[:, hold_idx].ravel()

    def evaluate(vec, jacobian=False):
        y, dy = problem.run(vec, jacobian)
        j_train, a = _objective(y[:, train_idx].ravel(), x_train)
        j_hold = _objective(y[:, hold_idx].ravel(), x_hold)[0] if hold_idx.size else j_train
        if not np.isfinite(j_train):
            raise OptimizationError(f"non-finite objective at taps with max |c| = {np.max(np.abs(vec)):.3g}")
        return j_train, j_hold, a, y, dy

    vec = layout.from_coefficients(initial) if initial is not None else np.zeros(layout.num_params)
    report = ConvergenceReport()
    j_train, j_hold, a, y, dy = evaluate(vec, jacobian=True)
    report.objective_trace.append(j_train)
    report.holdout_trace.append(j_hold)
    best_vec, best_hold = vec.copy(), j_hold
    ridge = settings.ridge

    for it in range(settings.max_iterations):
        y_t = y[:, train_idx].ravel()
        jac = a * dy[:, :, train_idx].reshape(layout.num_params, -1)
        cols = np.concatenate([jac, y_t[None, :], 1j * y_t[None, :]])
        resid = a * y_t - x_train
        A = np.concatenate([cols.real, cols.imag], axis=1).T
        b = -np.concatenate([resid.real, resid.imag])
        scale = np.linalg.norm(A, axis=0)
        scale[scale == 0] = 1.0
        A /= scale
        normal = A.T @ A
        rhs = A.T @ b
        while True:
            lam = ridge * np.trace(normal) / normal.shape[0]
            try:
                step = np.linalg.solve(normal + lam * np.eye(normal.shape[0]), rhs) / scale
                if np.all(np.isfinite(step)):
                    break
            except np.linalg.LinAlgError:
                pass
            ridge *= 1e3
            warnings.warn(f"normal equations are rank deficient; ridge raised to {ridge:.1e}", RuntimeWarning)
            if ridge > 1:
                raise OptimizationError("normal equations stay singular even with a large ridge")
        delta = step[: layout.num_params]

        alpha = settings.initial_step
        accepted = False
        for _ in range(settings.max_halvings):
            trial = vec + alpha * delta
            try:
                jt, jh, at, yt, _ = evaluate(trial)
            except OptimizationError:
                jt = np.inf
            if jt < j_train:
                accepted = True
                break
            alpha /= 2
        if not accepted:
            report.converged = True
            break
        improvement = (j_train - jt) / j_train
        vec, j_train, j_hold, a = trial, jt, jh, at
        report.objective_trace.append(j_train)
        report.holdout_trace.append(j_hold)
        report.step_sizes.append(alpha)
        report.iterations = it + 1
        if j_hold < best_hold:
            best_vec, best_hold = vec.copy(), j_hold
            report.best_iteration = it + 1
        log.debug("iteration %d: J=%.6g holdout=%.6g step=%.3g", it + 1, j_train, j_hold, alpha)
        if improvement < settings.relative_tolerance:
            report.converged = True
            break
        y, dy = problem.run(vec, jacobian=True)

    if hold_idx.size == 0:
        best_vec = vec
        report.best_iteration = report.iterations
    return layout.to_coefficients(best_vec), report


# --- evaluation and sweeps ----------------------------------------------------------------


def receiver_symbols(cfg: DbpConfig, data: TrainingSet) -> np.ndarray:
    out = cb_essfm(data.rx_waveform, cfg)
    return matched_filter(out.samples, data.sps, data.rolloff, data.filter_span_symbols)


def evaluate_snr(cfg: DbpConfig, data: TrainingSet) -> float:
    """Effective SNR (dB) of the coupled-band receiver on ``data`` after edge trimming."""
    y = receiver_symbols(cfg, data)
    t = data.edge_trim_symbols
    sl = slice(t, len(data.tx_symbols) - t)
    return snr_db(y[:, sl], data.tx_symbols.symbols[:, sl])


@dataclass
class RhoSweep:
    rhos: list[float]
    snr_db: list[float]
    per_realization: list[list[float]]

    @property
    def best_rho(self) -> float:
        return self.rhos[int(np.argmax(self.snr_db))]

    @property
    def best_snr_db(self) -> float:
        return float(np.max(self.snr_db))


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def sweep_splitting_ratio(
    grid: Sequence[float],
    base_cfg: DbpConfig,
    train: TrainingSet | Sequence[TrainingSet],
    eval_set: TrainingSet | Sequence[TrainingSet],
    settings: OptimizerSettings = OptimizerSettings(),
    refine_step: float | None = 0.01,
    refine_halfwidth: float = 0.05,
) -> RhoSweep:
    """SNR versus splitting ratio, re-optimizing the taps for every ratio.

    Several (train, eval) pairs may be given; the curve is their mean.  With
    ``refine_step`` the grid is refined around the coarse argmax.
    """
    trains, evals = _as_list(train), _as_list(eval_set)
    if len(trains) != len(evals):
        raise ValueError("need one evaluation set per training set")
    if any(not 0 <= r <= 1 for r in grid):
        raise ValueError("splitting ratios must lie in [0, 1]")
    results: dict[float, list[float]] = {}

    def run(rhos):
        for rho in rhos:
            key = round(float(rho), 10)
            if key in results:
                continue
            cfg = base_cfg.with_ratio(key)
            snrs = []
            for tr, ev in zip(trains, evals):
                coeffs, _ = optimize_coefficients(tr, cfg, settings)
                snrs.append(evaluate_snr(cfg.with_coefficients(coeffs), ev))
            results[key] = snrs
            log.info("rho=%.3f  SNR=%.4f dB", key, float(np.mean(snrs)))

    run(grid)
    if refine_step:
        rhos = sorted(results)
        best = rhos[int(np.argmax([np.mean(results[r]) for r in rhos]))]
        fine = np.arange(best - refine_halfwidth, best + refine_halfwidth + refine_step / 2, refine_step)
        run([r for r in np.round(fine, 10) if 0 <= r <= 1])
    rhos = sorted(results)
    return RhoSweep(rhos, [float(np.mean(results[r])) for r in rhos], [results[r] for r in rhos])


@dataclass
class PowerSweep:
    powers_dbm: list[float]
    snr_db: list[float]
    best_power_dbm: float
    best_snr_db: float
    at_edge: bool


def parabolic_peak(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Vertex of the parabola through three points."""
    a, b, c = np.polyfit(np.asarray(x, float), np.asarray(y, float), 2)
    if a >= 0:
        k = int(np.argmax(y))
        return float(x[k]), float(y[k])
    xv = -b / (2 * a)
    return float(xv), float(np.polyval([a, b, c], xv))


def sweep_launch_power(
    power_grid_dbm: Sequence[float], evaluate: Callable[[float], float], refine: bool = True
) -> PowerSweep:
    """SNR at every launch power and the optimum, optionally refined by a 3-point parabola."""
    powers = [float(p) for p in power_grid_dbm]
    if len(powers) < 3 or any(b <= a for a, b in zip(powers, powers[1:])):
        raise ValueError("power grid must be sorted and hold at least 3 points")
    snrs = [float(evaluate(p)) for p in powers]
    k = int(np.argmax(snrs))
    at_edge = k in (0, len(powers) - 1)
    if at_edge:
        warnings.warn("optimal launch power is at the edge of the grid; widen it", RuntimeWarning)
    best_p, best_s = powers[k], snrs[k]
    if refine and not at_edge:
        p, s = parabolic_peak(powers[k - 1 : k + 2], snrs[k - 1 : k + 2])
        if powers[k - 1] <= p <= powers[k + 1]:
            best_p, best_s = p, max(s, snrs[k])
    return PowerSweep(powers, snrs, best_p, best_s, at_edge)

"""Experiment pipelines: record simulation with caching, receiver evaluation and the CSV sweeps."""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .channel import LinkConfig, WdmConfig, run_link, transmit, wdm_demux_center
from .complexity import rms_per_2d
from .dbp import DbpConfig, cb_essfm, default_overlap, edc, essfm, ssfm_dbp
from .dsp import BlockingConfig, DualPolWaveform, SymbolFrame, as_fraction, matched_filter, resample
from .metrics import snr_db
from .nlpr import NlprCoefficients
from .optimize import (
    OptimizationError,
    OptimizerSettings,
    TrainingSet,
    optimize_coefficients,
    parabolic_peak,
    sweep_splitting_ratio,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COLUMNS = [
    "receiver_kind", "n_st", "n_sb", "rho", "power_dbm", "snr_db", "rms_per_2d",
    "sps", "block_size", "overlap", "seed", "realizations", "flag", "wall_time_s",
]
RECEIVER_KINDS = ("edc", "essfm", "cb-essfm", "ssfm", "ssfm-2band")

# role keys of the seed tree: evaluation and training records never share noise or data
EVAL, TRAIN = 0, 1


@dataclass(frozen=True)
class Scenario:
    """Everything that defines a received record apart from power and seed."""

    wdm: WdmConfig
    link: LinkConfig
    receiver_sps: Fraction = Fraction(9, 8)
    filter_span_symbols: int = 512

    @property
    def receiver_rate_hz(self) -> float:
        return self.wdm.symbol_rate_hz * float(self.receiver_sps)

    def default_blocking(self, block_size: int, num_subbands: int = 2) -> BlockingConfig:
        overlap = default_overlap(self.link.beta2_total_ps2, self.receiver_rate_hz, num_subbands)
        return BlockingConfig(block_size, overlap, self.receiver_sps)


@dataclass(frozen=True, eq=False)
class Record:
    """Central-channel field at the receiver rate plus its transmitted symbols."""

    rx: DualPolWaveform
    tx: SymbolFrame
    power_dbm: float
    seed: int
    role: int
    realization: int

    def training_set(self, rolloff: float, span: int, edge_trim: int = 0) -> TrainingSet:
        return TrainingSet(self.rx, self.tx, rolloff, span, edge_trim)


def _power_key(power_dbm: float) -> int:
    # milli-dB offset keeps the seed-tree key non-negative
    return int(round(power_dbm * 1000)) + 1_000_000


def record_streams(seed: int, role: int, realization: int, power_dbm: float):
    """Data and noise generators of one record.

    Data depends on (seed, role, realization) only, so the same symbols are
    sent at every launch power; the noise also depends on the power.
    """
    data = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(role, realization, 0)))
    noise = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(role, realization, 1, _power_key(power_dbm)))
    )
    return data, noise


def simulate_record(
    scenario: Scenario, power_dbm: float, num_symbols: int, seed: int, role: int = EVAL, realization: int = 0
) -> Record:
    """Transmit, propagate, select the central channel and resample it to the receiver rate."""
    wdm = replace(scenario.wdm, launch_power_dbm_per_channel=power_dbm)
    data_rng, noise_rng = record_streams(seed, role, realization, power_dbm)
    sim_sps = wdm.simulation_sps()
    ratio = scenario.receiver_sps / sim_sps
    if (num_symbols * scenario.receiver_sps).denominator != 1:
        raise ValueError(f"{num_symbols} symbols do not map to whole samples at {scenario.receiver_sps} sps")
    tx = transmit(wdm, num_symbols, data_rng, sim_sps, scenario.filter_span_symbols)
    out = run_link(tx.waveform, scenario.link, noise_rng)
    center = wdm_demux_center(out, wdm.channel_spacing_hz, wdm.num_channels)
    rx = resample(center, ratio.numerator, ratio.denominator, (1 + wdm.rolloff) * wdm.symbol_rate_hz)
    return Record(rx, tx.center_symbols, power_dbm, seed, role, realization)


class RecordCache:
    """Memoizes simulated records, in memory and optionally as ``.npz`` files."""

    def __init__(self, scenario: Scenario, num_symbols: int, directory: str | Path | None = None):
        self.scenario = scenario
        self.num_symbols = num_symbols
        self.directory = Path(directory) if directory else None
        self._mem: dict[tuple, Record] = {}

    def _path(self, key) -> Path | None:
        if self.directory is None:
            return None
        tag = hashlib.sha1(repr((self.scenario, self.num_symbols)).encode()).hexdigest()[:12]
        seed, role, realization, pkey = key
        return self.directory / f"rec_{tag}_{seed}_{role}_{realization}_{pkey}.npz"

    def get(self, power_dbm: float, seed: int, role: int = EVAL, realization: int = 0) -> Record:
        key = (seed, role, realization, _power_key(power_dbm))
        if key in self._mem:
            return self._mem[key]
        path = self._path(key)
        if path is not None and path.exists():
            data = np.load(path)
            rec = Record(
                DualPolWaveform.from_array(data["rx"], float(data["rx_rate"])),
                SymbolFrame.from_array(data["tx"], float(data["symbol_rate"])),
                power_dbm, seed, role, realization,
            )
        else:
            rec = simulate_record(self.scenario, power_dbm, self.num_symbols, seed, role, realization)
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                np.savez(
                    path, rx=rec.rx.samples, rx_rate=rec.rx.sample_rate,
                    tx=rec.tx.symbols, symbol_rate=rec.tx.symbol_rate,
                )
        self._mem[key] = rec
        return rec


# --- receivers ------------------------------------------------------------------------------


@dataclass(frozen=True)
class ReceiverSpec:
    kind: str
    num_steps: int = 0
    num_subbands: int = 1
    splitting_ratio: float = 0.5

    def __post_init__(self):
        if self.kind not in RECEIVER_KINDS:
            raise ValueError(f"unknown receiver kind {self.kind!r}; expected one of {RECEIVER_KINDS}")
        if self.kind == "edc":
            object.__setattr__(self, "num_steps", 0)
            object.__setattr__(self, "num_subbands", 1)
        if self.kind == "essfm":
            object.__setattr__(self, "num_subbands", 1)
            object.__setattr__(self, "splitting_ratio", 0.5)
        if self.kind == "ssfm-2band":
            object.__setattr__(self, "num_subbands", 2)
        if self.kind != "edc" and self.num_steps < 1:
            raise ValueError(f"{self.kind} needs at least one step")

    @property
    def trainable(self) -> bool:
        return self.kind in ("essfm", "cb-essfm")


def receiver_rms_per_2d(spec: ReceiverSpec, blocking: BlockingConfig) -> float:
    """Complexity of a receiver row.

    EDC is the zero-step cascade.  Ideal SSFM is counted as a single-tap
    cascade with the same number of steps, which ignores its per-step loss
    bookkeeping (a few multiplications).
    """
    return rms_per_2d(blocking.sps, blocking.block_size, blocking.overlap, spec.num_steps, spec.num_subbands)


@dataclass
class Lab:
    """Shared state for one experiment: the scenario, record caches and receiver knobs."""

    scenario: Scenario
    eval_symbols: int
    train_symbols: int
    block_size: int
    optimizer: OptimizerSettings = OptimizerSettings()
    k_intra: int = 16
    k_inter: int = 16
    ssfm_steps_per_span: int = 30
    edge_trim_symbols: int = 256
    cache_dir: str | None = None
    overlap: int | None = None
    _caches: dict = field(default_factory=dict, repr=False)

    def cache(self, role: int) -> RecordCache:
        if role not in self._caches:
            n = self.eval_symbols if role == EVAL else self.train_symbols
            self._caches[role] = RecordCache(self.scenario, n, self.cache_dir)
        return self._caches[role]

    def record(self, power_dbm: float, seed: int, role: int = EVAL, realization: int = 0) -> Record:
        return self.cache(role).get(power_dbm, seed, role, realization)

    def blocking(self, num_subbands: int = 1) -> BlockingConfig:
        if self.overlap is not None:
            return BlockingConfig(self.block_size, self.overlap, self.scenario.receiver_sps)
        # one overlap for all receivers keeps complexities comparable
        return self.scenario.default_blocking(self.block_size, max(2, num_subbands))

    def dbp_config(self, spec: ReceiverSpec, coefficients: NlprCoefficients | None = None) -> DbpConfig:
        cfg = DbpConfig.for_link(
            self.scenario.link,
            num_steps=max(spec.num_steps, 1),
            num_subbands=spec.num_subbands,
            splitting_ratio=spec.splitting_ratio,
            blocking=self.blocking(spec.num_subbands),
        )
        if coefficients is None:
            coefficients = NlprCoefficients.zeros(spec.num_subbands, self.k_intra, self.k_inter)
        return cfg.with_coefficients(coefficients)

    def data(self, record: Record) -> TrainingSet:
        return record.training_set(self.scenario.wdm.rolloff, self.scenario.filter_span_symbols, self.edge_trim_symbols)

    def train(self, spec: ReceiverSpec, power_dbm: float, seed: int, realization: int = 0):
        """Optimized taps for ``spec`` on the training record of (seed, realization)."""
        rec = self.record(power_dbm, seed, TRAIN, realization)
        return optimize_coefficients(self.data(rec), self.dbp_config(spec), self.optimizer)

    def output_symbols(self, spec: ReceiverSpec, record: Record, coefficients=None) -> np.ndarray:
        w = record.rx
        blocking = self.blocking(spec.num_subbands)
        if spec.kind == "edc":
            out = edc(w, self.scenario.link.beta2_total_ps2, blocking)
        elif spec.kind in ("ssfm", "ssfm-2band"):
            steps = self.ssfm_steps_per_span * self.scenario.link.num_spans
            out = ssfm_dbp(w, self.scenario.link, steps, blocking, spec.num_subbands)
        elif spec.kind == "essfm":
            out = essfm(w, self.dbp_config(spec, coefficients))
        else:
            out = cb_essfm(w, self.dbp_config(spec, coefficients))
        return matched_filter(out.samples, w.sample_rate / record.tx.symbol_rate,
                              self.scenario.wdm.rolloff, self.scenario.filter_span_symbols)

    def snr(self, spec: ReceiverSpec, record: Record, coefficients=None) -> float:
        y = self.output_symbols(spec, record, coefficients)
        t = self.edge_trim_symbols
        n = len(record.tx)
        return snr_db(y[:, t : n - t], record.tx.symbols[:, t : n - t])

    def evaluate(self, spec: ReceiverSpec, power_dbm: float, seed: int, realizations: int = 1) -> float:
        """Mean SNR over realizations; trainable receivers are optimized per realization."""
        values = []
        for r in range(realizations):
            coeffs = self.train(spec, power_dbm, seed, r)[0] if spec.trainable else None
            values.append(self.snr(spec, self.record(power_dbm, seed, EVAL, r), coeffs))
        return float(np.mean(values))

    def training_sets(self, power_dbm: float, seed: int, realizations: int):
        train = [self.data(self.record(power_dbm, seed, TRAIN, r)) for r in range(realizations)]
        evals = [self.data(self.record(power_dbm, seed, EVAL, r)) for r in range(realizations)]
        return train, evals


# --- CSV ---------------------------------------------------------------------------------------


@dataclass
class Row:
    receiver_kind: str
    n_st: int
    n_sb: int
    rho: float
    power_dbm: float
    snr_db: float
    rms_per_2d: float
    sps: Fraction
    block_size: int
    overlap: int
    seed: int
    realizations: int
    flag: str = ""
    wall_time_s: float | None = None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if not np.isfinite(v) else f"{v:.6f}"
    return str(v)


def rows_to_csv(rows: Iterable[Row], timing: bool = False) -> str:
    """CSV text with a schema comment and a header naming every column."""
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        values = [getattr(row, c) for c in COLUMNS]
        if not timing:
            values[-1] = None
        writer.writerow([_fmt(v) for v in values])
    return buf.getvalue()


def read_rows(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def gnuplot_script(csv_path: str, x: str, y: str = "snr_db", group: str = "receiver_kind") -> str:
    """Plot script for an emitted CSV (gnuplot reads the comma-separated columns by name)."""
    cols = {c: i + 1 for i, c in enumerate(COLUMNS)}
    return "\n".join([
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set xlabel '{x}'",
        f"set ylabel '{y}'",
        "set grid",
        f"plot '{csv_path}' every ::1 using {cols[x]}:{cols[y]} with linespoints title '{group}'",
        "",
    ])


def _row(lab: Lab, spec: ReceiverSpec, power: float, snr: float, seed: int, realizations: int,
         flag: str = "", wall: float | None = None) -> Row:
    b = lab.blocking(spec.num_subbands)
    return Row(
        spec.kind, spec.num_steps, spec.num_subbands, spec.splitting_ratio, power, snr,
        receiver_rms_per_2d(spec, b), b.sps, b.block_size, b.overlap, seed, realizations, flag, wall,
    )


def _guarded(fn: Callable[[], float]) -> tuple[float, str]:
    try:
        value = fn()
    except OptimizationError as exc:
        log.warning("numerical failure: %s", exc)
        return float("nan"), "optimizer-diverged"
    if not np.isfinite(value):
        return float("nan"), "non-finite-snr"
    return value, ""


def run_simulate(lab: Lab, receivers: Sequence[ReceiverSpec], powers: Sequence[float],
                 seed: int, realizations: int = 1) -> list[Row]:
    """One row per (power, receiver); SNR averaged over realizations."""
    rows = []
    for p in powers:
        for spec in receivers:
            t0 = time.perf_counter()
            snr, flag = _guarded(lambda: lab.evaluate(spec, p, seed, realizations))
            rows.append(_row(lab, spec, p, snr, seed, realizations, flag, time.perf_counter() - t0))
    return rows


def run_sweep_rho(lab: Lab, pairs: Sequence[tuple[int, int]], rho_grid: Sequence[float], power_dbm: float,
                  seed: int, realizations: int = 1, refine_step: float | None = 0.01) -> list[Row]:
    """SNR versus splitting ratio for every (N_st, N_sb), re-optimizing taps at each ratio."""
    train, evals = lab.training_sets(power_dbm, seed, realizations)
    rows = []
    for n_st, n_sb in pairs:
        spec = ReceiverSpec("cb-essfm", n_st, n_sb)
        t0 = time.perf_counter()
        sweep = sweep_splitting_ratio(rho_grid, lab.dbp_config(spec), train, evals, lab.optimizer, refine_step)
        wall = (time.perf_counter() - t0) / len(sweep.rhos)
        for rho, snr in zip(sweep.rhos, sweep.snr_db):
            flag = "argmax" if rho == sweep.best_rho else ""
            rows.append(_row(lab, replace(spec, splitting_ratio=rho), power_dbm, snr, seed, realizations, flag, wall))
    return rows


def best_over_power(powers: Sequence[float], snrs: Sequence[float], refine: bool = True) -> tuple[float, float, str]:
    """Optimal power and SNR of a curve; flags optima stuck at the grid edge."""
    k = int(np.nanargmax(snrs))
    if k in (0, len(powers) - 1):
        return powers[k], snrs[k], "power-at-grid-edge"
    if not refine:
        return powers[k], snrs[k], ""
    p, s = parabolic_peak(powers[k - 1 : k + 2], snrs[k - 1 : k + 2])
    return p, max(s, snrs[k]), ""


def run_snr_vs_complexity(lab: Lab, receivers: Sequence[ReceiverSpec], powers: Sequence[float],
                          rho_grid: Sequence[float], seed: int, realizations: int = 1,
                          refine_power: bool = True) -> list[Row]:
    """For every receiver: best splitting ratio at each power, then the optimal power."""
    rows = []
    for spec in receivers:
        t0 = time.perf_counter()
        ratios = rho_grid if spec.kind == "cb-essfm" else [spec.splitting_ratio]
        curve, best_rho = [], []
        flag = ""
        for p in powers:
            candidates = []
            for rho in ratios:
                value, f = _guarded(lambda: lab.evaluate(replace(spec, splitting_ratio=rho), p, seed, realizations))
                flag = flag or f
                candidates.append(value)
            k = int(np.nanargmax(candidates)) if np.any(np.isfinite(candidates)) else 0
            curve.append(candidates[k])
            best_rho.append(ratios[k])
        if not np.any(np.isfinite(curve)):
            rows.append(_row(lab, spec, float("nan"), float("nan"), seed, realizations, flag or "non-finite-snr"))
            continue
        p_opt, s_opt, edge = best_over_power(list(powers), curve, refine_power)
        rho = best_rho[int(np.nanargmax(curve))]
        rows.append(_row(lab, replace(spec, splitting_ratio=rho), p_opt, s_opt, seed, realizations,
                         flag or edge, time.perf_counter() - t0))
    return rows

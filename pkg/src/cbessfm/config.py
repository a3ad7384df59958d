"""Experiment configuration: TOML files with unit-suffixed keys, two built-in presets, strict validation."""
from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .channel import FiberParams, LinkConfig, WdmConfig
from .dbp import check_overlap, default_overlap
from .dsp import BlockingConfig, as_fraction
from .harness import RECEIVER_KINDS, Lab, ReceiverSpec, Scenario
from .optimize import OptimizerSettings


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


DESK: dict[str, Any] = {
    "wdm": {
        "num_channels": 3,
        "channel_spacing_ghz": 50.0,
        "symbol_rate_gbaud": 32.0,
        "rolloff": 0.05,
        "qam_order": 64,
    },
    "fiber": {
        "alpha_db_per_km": 0.2,
        "dispersion_ps_per_nm_km": 17.0,
        "gamma_per_w_km": 1.27,
        "span_length_km": 80.0,
        "reference_wavelength_nm": 1550.0,
    },
    "link": {
        "num_spans": 10,
        "amplifier_noise_figure_db": 4.5,
        "noiseless": False,
        "forward_steps_per_span": 80,
    },
    "receiver": {
        "sps": "9/8",
        "block_size": 2048,
        "overlap": "auto",
        "filter_span_symbols": 512,
        "edge_trim_symbols": 256,
        "ssfm_steps_per_span": 30,
        "k_intra": 16,
        "k_inter": 16,
        "kinds": ["edc", "essfm", "cb-essfm"],
    },
    "dbp": {
        "num_steps": [1, 3, 5, 10],
        "num_subbands": [2],
        "splitting_ratios": [0.2, 0.5],
        "rho_grid_step": 0.05,
        "rho_refine_step": 0.01,
        "rho_sweep_power_dbm": 1.0,
    },
    "optimizer": {
        "max_iterations": 25,
        "relative_tolerance": 1e-4,
        "initial_step": 1.0,
        "rng_seed": 0,
        "holdout_fraction": 0.2,
        "ridge": 1e-6,
    },
    "experiment": {
        "power_grid_dbm": [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0],
        "num_symbols": 65536,
        "training_symbols": 16384,
        "rng_seed": 1,
        "realizations": 1,
        "output_path": "results.csv",
        "cache_dir": "",
    },
}

PAPER_FULL: dict[str, Any] = copy.deepcopy(DESK)
PAPER_FULL["wdm"].update(num_channels=5, channel_spacing_ghz=100.0, symbol_rate_gbaud=93.0)
PAPER_FULL["link"].update(num_spans=15, forward_steps_per_span=160)
PAPER_FULL["receiver"].update(block_size=16384)
PAPER_FULL["dbp"].update(num_steps=[1, 3, 5, 15], num_subbands=[1, 2], rho_sweep_power_dbm=4.0)
PAPER_FULL["experiment"].update(
    power_grid_dbm=[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], num_symbols=131072, training_symbols=65536
)

PRESETS = {"desk": DESK, "paper-full": PAPER_FULL}


@dataclass(frozen=True)
class ExperimentConfig:
    wdm: WdmConfig
    link: LinkConfig
    receiver_sps: Fraction
    blocking: BlockingConfig
    filter_span_symbols: int
    edge_trim_symbols: int
    ssfm_steps_per_span: int
    k_intra: int
    k_inter: int
    receiver_kinds: tuple[str, ...]
    num_steps: tuple[int, ...]
    num_subbands: tuple[int, ...]
    splitting_ratios: tuple[float, ...]
    rho_grid_step: float
    rho_refine_step: float
    rho_sweep_power_dbm: float
    optimizer: OptimizerSettings
    power_grid_dbm: tuple[float, ...]
    num_symbols: int
    training_symbols: int
    rng_seed: int
    realizations: int
    output_path: str
    cache_dir: str

    @property
    def scenario(self) -> Scenario:
        return Scenario(self.wdm, self.link, self.receiver_sps, self.filter_span_symbols)

    def lab(self) -> Lab:
        return Lab(
            scenario=self.scenario,
            eval_symbols=self.num_symbols,
            train_symbols=self.training_symbols,
            block_size=self.blocking.block_size,
            optimizer=self.optimizer,
            k_intra=self.k_intra,
            k_inter=self.k_inter,
            ssfm_steps_per_span=self.ssfm_steps_per_span,
            edge_trim_symbols=self.edge_trim_symbols,
            cache_dir=self.cache_dir or None,
            overlap=self.blocking.overlap,
        )

    def rho_grid(self) -> list[float]:
        n = round(1 / self.rho_grid_step)
        return [round(i / n, 10) for i in range(n + 1)]

    def receivers(self) -> list[ReceiverSpec]:
        """Every receiver configured by the grid, EDC first."""
        out = []
        for kind in self.receiver_kinds:
            if kind == "edc":
                out.append(ReceiverSpec("edc"))
            elif kind == "essfm":
                out += [ReceiverSpec("essfm", n) for n in self.num_steps]
            elif kind == "cb-essfm":
                out += [
                    ReceiverSpec("cb-essfm", n, b, r)
                    for n in self.num_steps for b in self.num_subbands for r in self.splitting_ratios
                ]
            else:
                steps = self.ssfm_steps_per_span * self.link.num_spans
                out.append(ReceiverSpec(kind, steps))
        return out


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a table")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _get(tree: dict, path: str, kind, *, positive: bool = False, nonneg: bool = False):
    section, key = path.split(".")
    value = tree[section][key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is list:
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{path}: expected a non-empty list, got {value!r}")
        return value
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{path}: expected {kind.__name__}, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(f"{path}: must be > 0, got {value!r}")
    if nonneg and value < 0:
        raise ConfigError(f"{path}: must be >= 0, got {value!r}")
    return value


def _numbers(tree: dict, path: str, kind) -> tuple:
    items = _get(tree, path, list)
    out = []
    for i, v in enumerate(items):
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if not isinstance(v, kind) or isinstance(v, bool):
            raise ConfigError(f"{path}[{i}]: expected {kind.__name__}, got {v!r}")
        out.append(v)
    return tuple(out)


def _build(section: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def build_config(tree: dict) -> ExperimentConfig:
    """Validate a merged configuration tree; no computation happens before this returns."""
    wdm = _build(
        "wdm", WdmConfig,
        num_channels=_get(tree, "wdm.num_channels", int, positive=True),
        channel_spacing_hz=_get(tree, "wdm.channel_spacing_ghz", float, positive=True) * 1e9,
        symbol_rate_hz=_get(tree, "wdm.symbol_rate_gbaud", float, positive=True) * 1e9,
        rolloff=_get(tree, "wdm.rolloff", float, nonneg=True),
        qam_order=_get(tree, "wdm.qam_order", int, positive=True),
    )
    if wdm.qam_order not in (4, 16, 64, 256):
        raise ConfigError(f"wdm.qam_order: unsupported order {wdm.qam_order}")
    fiber = _build(
        "fiber", FiberParams,
        alpha_db_per_km=_get(tree, "fiber.alpha_db_per_km", float, nonneg=True),
        dispersion_ps_per_nm_km=_get(tree, "fiber.dispersion_ps_per_nm_km", float),
        gamma_per_w_km=_get(tree, "fiber.gamma_per_w_km", float, nonneg=True),
        span_length_km=_get(tree, "fiber.span_length_km", float, positive=True),
        reference_wavelength_nm=_get(tree, "fiber.reference_wavelength_nm", float, positive=True),
    )
    noiseless = _get(tree, "link.noiseless", bool)
    link = _build(
        "link", LinkConfig,
        fiber=fiber,
        num_spans=_get(tree, "link.num_spans", int, positive=True),
        amplifier_noise_figure_db=None if noiseless else _get(tree, "link.amplifier_noise_figure_db", float),
        forward_steps_per_span=_get(tree, "link.forward_steps_per_span", int, positive=True),
    )

    sps_raw = tree["receiver"]["sps"]
    try:
        sps = Fraction(sps_raw) if isinstance(sps_raw, str) else as_fraction(sps_raw)
    except (ValueError, ZeroDivisionError, TypeError):
        raise ConfigError(f"receiver.sps: cannot read {sps_raw!r} as a ratio") from None
    if sps <= 1 + wdm.rolloff - 1e-12:
        raise ConfigError(f"receiver.sps: {sps} samples/symbol do not hold the (1 + rolloff) band")
    block_size = _get(tree, "receiver.block_size", int, positive=True)
    rate = wdm.symbol_rate_hz * float(sps)
    subbands = _numbers(tree, "dbp.num_subbands", int)
    overlap_raw = tree["receiver"]["overlap"]
    if overlap_raw == "auto":
        overlap = default_overlap(link.beta2_total_ps2, rate, max(2, *subbands))
    elif isinstance(overlap_raw, int) and not isinstance(overlap_raw, bool):
        overlap = overlap_raw
    else:
        raise ConfigError(f"receiver.overlap: expected an integer or \"auto\", got {overlap_raw!r}")
    blocking = _build("receiver", BlockingConfig, block_size=block_size, overlap=overlap, sps=sps)
    try:
        check_overlap(blocking, link.beta2_total_ps2, rate)
    except ValueError as exc:
        raise ConfigError(f"receiver.overlap: {exc}") from None

    kinds = tuple(_get(tree, "receiver.kinds", list))
    for i, k in enumerate(kinds):
        if k not in RECEIVER_KINDS:
            raise ConfigError(f"receiver.kinds[{i}]: unknown receiver {k!r}; choose from {', '.join(RECEIVER_KINDS)}")
    steps = _numbers(tree, "dbp.num_steps", int)
    if any(s < 1 for s in steps):
        raise ConfigError("dbp.num_steps: every entry must be >= 1")
    for i, b in enumerate(subbands):
        if b < 1 or block_size % b:
            raise ConfigError(f"dbp.num_subbands[{i}]: {b} does not divide block_size {block_size}")
    ratios = _numbers(tree, "dbp.splitting_ratios", float)
    for i, r in enumerate(ratios):
        if not 0 <= r <= 1:
            raise ConfigError(f"dbp.splitting_ratios[{i}]: {r} is outside [0, 1]")
    grid_step = _get(tree, "dbp.rho_grid_step", float, positive=True)
    if grid_step > 1 or abs(1 / grid_step - round(1 / grid_step)) > 1e-9:
        raise ConfigError(f"dbp.rho_grid_step: {grid_step} must divide 1")
    refine = _get(tree, "dbp.rho_refine_step", float, nonneg=True)

    opt = tree["optimizer"]
    optimizer = _build(
        "optimizer", OptimizerSettings,
        max_iterations=_get(tree, "optimizer.max_iterations", int, nonneg=True),
        relative_tolerance=_get(tree, "optimizer.relative_tolerance", float),
        initial_step=_get(tree, "optimizer.initial_step", float, positive=True),
        rng_seed=_get(tree, "optimizer.rng_seed", int, nonneg=True),
        holdout_fraction=_get(tree, "optimizer.holdout_fraction", float),
        ridge=float(opt["ridge"]),
    )

    powers = _numbers(tree, "experiment.power_grid_dbm", float)
    if any(b <= a for a, b in zip(powers, powers[1:])):
        raise ConfigError("experiment.power_grid_dbm: must be strictly increasing")
    num_symbols = _get(tree, "experiment.num_symbols", int, positive=True)
    training = _get(tree, "experiment.training_symbols", int, positive=True)
    for name, n in (("num_symbols", num_symbols), ("training_symbols", training)):
        if (n * sps).denominator != 1:
            raise ConfigError(f"experiment.{name}: {n} symbols at {sps} samples/symbol is not a whole sample count")
        if n * sps < 4 * block_size:
            raise ConfigError(f"experiment.{name}: record of {n} symbols is shorter than 4 blocks of {block_size}")
    edge_trim = _get(tree, "receiver.edge_trim_symbols", int, nonneg=True)
    if 2 * edge_trim >= min(num_symbols, training):
        raise ConfigError("receiver.edge_trim_symbols: trims away the whole record")
    seed = _get(tree, "experiment.rng_seed", int, nonneg=True)
    if seed >= 2**64:
        raise ConfigError("experiment.rng_seed: must fit in 64 bits")

    return ExperimentConfig(
        wdm=wdm,
        link=link,
        receiver_sps=sps,
        blocking=blocking,
        filter_span_symbols=_get(tree, "receiver.filter_span_symbols", int, positive=True),
        edge_trim_symbols=edge_trim,
        ssfm_steps_per_span=_get(tree, "receiver.ssfm_steps_per_span", int, positive=True),
        k_intra=_get(tree, "receiver.k_intra", int, nonneg=True),
        k_inter=_get(tree, "receiver.k_inter", int, nonneg=True),
        receiver_kinds=kinds,
        num_steps=steps,
        num_subbands=subbands,
        splitting_ratios=ratios,
        rho_grid_step=grid_step,
        rho_refine_step=refine,
        rho_sweep_power_dbm=_get(tree, "dbp.rho_sweep_power_dbm", float),
        optimizer=optimizer,
        power_grid_dbm=powers,
        num_symbols=num_symbols,
        training_symbols=training,
        rng_seed=seed,
        realizations=_get(tree, "experiment.realizations", int, positive=True),
        output_path=_get(tree, "experiment.output_path", str),
        cache_dir=_get(tree, "experiment.cache_dir", str),
    )


def load_config(path: str | Path | None = None, preset: str = "desk", overrides: dict | None = None) -> ExperimentConfig:
    """Preset values, overridden by the file at ``path`` and then by ``overrides``."""
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    tree = PRESETS[preset]
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        tree = _merge(tree, data)
    if overrides:
        tree = _merge(tree, overrides)
    return build_config(tree)


def dump_config(tree: dict) -> str:
    """TOML text of a configuration tree (flat two-level tables only)."""
    lines = []
    for section, values in tree.items():
        lines.append(f"[{section}]")
        for key, v in values.items():
            lines.append(f"{key} = {_toml_value(v)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)

"""Command-line entry point: ``cbessfm <command> [--preset desk] [--config file.toml] ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

from . import harness
from .complexity import complexity_table, table_csv
from .config import PRESETS, ConfigError, ExperimentConfig, dump_config, load_config
from .harness import ReceiverSpec
from .nlpr import save_coefficients
from .optimize import OptimizationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERIC_FLAGS = ("non-finite-snr", "optimizer-diverged")

log = logging.getLogger("cbessfm")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="TOML file overriding the preset")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--seed", type=int, metavar="U64", help="override experiment.rng_seed")
    p.add_argument("--realizations", type=int, metavar="K", help="average SNR over K independent runs")
    p.add_argument("--out", metavar="PATH", help="output file ('-' for stdout)")
    p.add_argument("--timing", action="store_true", help="fill the wall_time_s column (output is then not reproducible)")
    p.add_argument("--workers", type=int, default=1, metavar="K", help="worker processes for independent grid points")
    p.add_argument("--plot", action="store_true", help="also write a gnuplot script next to the CSV")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbessfm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="SNR of every configured receiver at every launch power")
    _common(p)
    p = sub.add_parser("sweep-rho", help="SNR versus splitting ratio for every (N_st, N_sb)")
    _common(p)
    p.add_argument("--power-dbm", type=float, help="launch power of the sweep (default dbp.rho_sweep_power_dbm)")
    p = sub.add_parser("snr-vs-complexity", help="SNR at optimal power and ratio versus RMs/2D")
    _common(p)

    p = sub.add_parser("complexity", help="real multiplications per 2D symbol")
    _common(p)
    p.add_argument("--sps", help="oversampling factor, e.g. 9/8")
    p.add_argument("--block-size", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--steps", type=int, nargs="+")
    p.add_argument("--subbands", type=int, nargs="+")

    p = sub.add_parser("optimize-coeffs", help="fit MIMO taps and write them to a coefficient file")
    _common(p)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--subbands", type=int, default=2)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--power-dbm", type=float, required=True)

    p = sub.add_parser("show-config", help="print a preset as a TOML file to start from")
    _common(p)
    return parser


def _load(args) -> ExperimentConfig:
    overrides: dict = {}
    exp = {}
    if args.seed is not None:
        exp["rng_seed"] = args.seed
    if args.realizations is not None:
        exp["realizations"] = args.realizations
    if exp:
        overrides["experiment"] = exp
    return load_config(args.config, args.preset, overrides)


def _emit(text: str, path: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        return
    Path(path).write_text(text)
    log.info("wrote %s", path)


def _simulate_one(payload):
    lab, spec, power, seed, realizations = payload
    return harness.run_simulate(lab, [spec], [power], seed, realizations)[0]


def _cmd_simulate(cfg: ExperimentConfig, args) -> list[harness.Row]:
    lab = cfg.lab()
    jobs = [(lab, s, p, cfg.rng_seed, cfg.realizations) for p in cfg.power_grid_dbm for s in cfg.receivers()]
    if args.workers > 1:
        # results come back in submission order, so the CSV does not depend on scheduling
        with ProcessPoolExecutor(args.workers) as pool:
            return list(pool.map(_simulate_one, jobs))
    return [_simulate_one(j) for j in jobs]


def _cmd_sweep_rho(cfg: ExperimentConfig, args) -> list[harness.Row]:
    power = args.power_dbm if args.power_dbm is not None else cfg.rho_sweep_power_dbm
    pairs = [(n, b) for n in cfg.num_steps for b in cfg.num_subbands]
    return harness.run_sweep_rho(
        cfg.lab(), pairs, cfg.rho_grid(), power, cfg.rng_seed, cfg.realizations, cfg.rho_refine_step or None
    )


def _cmd_snr_vs_complexity(cfg: ExperimentConfig, args) -> list[harness.Row]:
    return harness.run_snr_vs_complexity(
        cfg.lab(), cfg.receivers(), cfg.power_grid_dbm, cfg.splitting_ratios, cfg.rng_seed, cfg.realizations
    )


def _cmd_complexity(cfg: ExperimentConfig, args) -> str:
    sps = Fraction(args.sps) if args.sps else cfg.receiver_sps
    n = args.block_size or cfg.blocking.block_size
    ov = args.overlap if args.overlap is not None else cfg.blocking.overlap
    rows = complexity_table(sps, n, ov, args.steps or cfg.num_steps, args.subbands or cfg.num_subbands)
    return table_csv(rows)


def _cmd_optimize(cfg: ExperimentConfig, args) -> str:
    lab = cfg.lab()
    spec = ReceiverSpec("cb-essfm", args.steps, args.subbands, args.rho)
    coeffs, report = lab.train(spec, args.power_dbm, cfg.rng_seed)
    dbp_cfg = lab.dbp_config(spec, coeffs)
    out = args.out or f"coeffs_nst{args.steps}_nsb{args.subbands}_rho{args.rho:g}.txt"
    save_coefficients(out, coeffs, args.rho, args.steps, dbp_cfg.step_length_km)
    snr = lab.snr(spec, lab.record(args.power_dbm, cfg.rng_seed), coeffs)
    lines = ["iteration,train_objective,holdout_objective"]
    lines += [f"{i},{j:.9e},{h:.9e}" for i, (j, h) in enumerate(zip(report.objective_trace, report.holdout_trace))]
    log.info("evaluation SNR %.3f dB after %d iterations (best %d)", snr, report.iterations, report.best_iteration)
    return "\n".join(lines) + "\n"


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "show-config":
            _emit(dump_config(PRESETS[args.preset]), args.out or "-")
            return EXIT_OK
        if args.command == "complexity":
            _emit(_cmd_complexity(cfg, args), args.out or "-")
            return EXIT_OK
        if args.command == "optimize-coeffs":
            trace = _cmd_optimize(cfg, args)
            sys.stdout.write(trace)
            return EXIT_OK
        handler = {
            "simulate": _cmd_simulate,
            "sweep-rho": _cmd_sweep_rho,
            "snr-vs-complexity": _cmd_snr_vs_complexity,
        }[args.command]
        rows = handler(cfg, args)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OptimizationError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    out = args.out or cfg.output_path
    _emit(harness.rows_to_csv(rows, timing=args.timing), out)
    if args.plot and out != "-":
        x = "rho" if args.command == "sweep-rho" else "rms_per_2d" if args.command == "snr-vs-complexity" else "power_dbm"
        Path(out).with_suffix(".gp").write_text(harness.gnuplot_script(out, x))
    if any(r.flag in NUMERIC_FLAGS for r in rows):
        print("numerical failure: some rows are flagged", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK

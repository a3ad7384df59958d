"""Desk-scale trend runs: SNR versus splitting ratio and SNR versus complexity.

Writes ``rho_sweep.csv`` and ``snr_vs_complexity.csv`` into the output
directory and prints each receiver's gain over dispersion compensation.
Expect tens of minutes on one core with the default settings.
"""
import argparse
import logging
from pathlib import Path

from cbessfm.config import load_config
from cbessfm.harness import ReceiverSpec, rows_to_csv, run_snr_vs_complexity, run_sweep_rho


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", help="TOML file overriding the desk preset")
    p.add_argument("--out-dir", default="desk_results")
    p.add_argument("--realizations", type=int, default=3)
    p.add_argument("--cache-dir", default="", help="keep simulated records here between runs")
    p.add_argument("--skip-rho", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config, overrides={"experiment": {"cache_dir": args.cache_dir}})
    lab = cfg.lab()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_sp = cfg.link.num_spans

    if not args.skip_rho:
        pairs = [(1, 2), (n_sp, 2)]
        rows = run_sweep_rho(lab, pairs, cfg.rho_grid(), cfg.rho_sweep_power_dbm, cfg.rng_seed,
                             args.realizations, cfg.rho_refine_step or None)
        (out / "rho_sweep.csv").write_text(rows_to_csv(rows))
        for r in rows:
            if r.flag == "argmax":
                print(f"N_st={r.n_st}: best rho {r.rho:.2f} ({r.snr_db:.2f} dB)")

    receivers = [ReceiverSpec("edc")]
    for s in sorted(set(cfg.num_steps) | {n_sp}):
        receivers.append(ReceiverSpec("essfm", s))
        receivers.append(ReceiverSpec("cb-essfm", s, 2))
    rows = run_snr_vs_complexity(lab, receivers, cfg.power_grid_dbm, list(cfg.splitting_ratios), cfg.rng_seed,
                                 args.realizations)
    (out / "snr_vs_complexity.csv").write_text(rows_to_csv(rows))
    edc = rows[0].snr_db
    for r in rows:
        print(f"{r.receiver_kind:9s} N_st={r.n_st:2d} {r.rms_per_2d:8.1f} RMs/2D  {r.snr_db:6.2f} dB  "
              f"gain {r.snr_db - edc:+.2f} dB {r.flag}")


if __name__ == "__main__":
    main()

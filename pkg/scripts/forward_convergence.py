"""Error of the forward split-step simulation versus steps per span.

Each run is compared with one that uses twice as many steps; the printed
error-SNR tells how many steps per span the simulated channel needs.
"""
import argparse

import numpy as np

from cbessfm.channel import FiberParams, LinkConfig, WdmConfig, run_link, transmit


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--power-dbm", type=float, default=2.0)
    p.add_argument("--symbols", type=int, default=4096)
    p.add_argument("--spans", type=int, default=10)
    p.add_argument("--steps", type=int, nargs="+", default=[10, 20, 40, 80, 160])
    args = p.parse_args()

    wdm = WdmConfig(num_channels=args.channels, channel_spacing_hz=50e9, symbol_rate_hz=32e9,
                    launch_power_dbm_per_channel=args.power_dbm)
    tx = transmit(wdm, args.symbols, np.random.default_rng(0)).waveform
    print("steps_per_span,error_snr_db")
    for steps in args.steps:
        outs = [
            run_link(tx, LinkConfig(FiberParams(), args.spans, None, s)).samples for s in (steps, 2 * steps)
        ]
        err = np.sum(np.abs(outs[0] - outs[1]) ** 2) / np.sum(np.abs(outs[1]) ** 2)
        print(f"{steps},{-10 * np.log10(err):.2f}", flush=True)


if __name__ == "__main__":
    main()

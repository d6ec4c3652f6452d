#!/usr/bin/env python3
"""Threshold sensitivity sweeps: final count and loss per gate setting."""

import argparse
from pathlib import Path

from splatctl.config import Scenario
from splatctl.harness import sweep, sweep_csv_text


AXES = {
    "tau_Q": [0.5, 0.9, 0.99],
    "tau_SNR": [0.0, 0.1, 0.5],
    "sigma_ln": [0.5, 1.5, 2.5],
    "tau_pos": [0.005, 0.015, 0.045],
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--axes", nargs="*", default=["tau_Q", "tau_SNR"],
                    choices=sorted(AXES))
    ap.add_argument("--out-dir", default=None)
    args = ap.parse_args()

    for axis in args.axes:
        rows = sweep(Scenario(seed=args.seed), axis, AXES[axis])
        print(f"{axis:>9} {'final N':>8} {'final loss':>12}")
        for row in rows:
            print(f"{row['value']:>9g} {row['final_count']:>8} "
                  f"{row['final_loss']:>12.6f}")
        if args.out_dir:
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"sweep_{axis}.csv").write_text(sweep_csv_text(rows))
        print()


if __name__ == "__main__":
    main()

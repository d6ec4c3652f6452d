#!/usr/bin/env python3
"""Soft-termination seed batch for the gated controller.

Runs the default generative scenario over a seed range and reports, per
seed, the peak per-round densification count and the largest round in the
final third of training; compact growth should collapse there.
"""

import argparse

from splatctl.config import Scenario
from splatctl.harness import run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--tail-fraction", type=float, default=1 / 3)
    args = ap.parse_args()

    total = Scenario().schedule.total_steps
    tail_start = total - int(total * args.tail_fraction)
    print(f"{'seed':>4} {'final N':>8} {'peak round':>10} "
          f"{'tail max':>8} {'tail/peak':>9}")
    passed = 0
    for seed in range(args.seeds):
        res = run(Scenario(seed=seed))
        events = [(r["step"], r["n_split"] + r["n_clone"]) for r in res.rounds]
        peak = max(n for _, n in events)
        tail = max((n for s, n in events if s > tail_start), default=0)
        ratio = tail / peak if peak else 0.0
        passed += ratio <= 0.05
        print(f"{seed:>4} {res.final_count:>8} {peak:>10} {tail:>8} "
              f"{ratio:>9.3f}")
    print(f"{passed}/{args.seeds} seeds terminate softly (tail <= 5% of peak)")


if __name__ == "__main__":
    main()

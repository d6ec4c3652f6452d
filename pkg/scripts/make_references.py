#!/usr/bin/env python3
"""Render the built-in reference shapes to PGM files for inspection."""

import argparse
from pathlib import Path

from splatctl.toysplat import REFERENCE_SHAPES, reference_shape, write_pgm


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="references")
    ap.add_argument("--grid", default="64x64", help="WxH")
    args = ap.parse_args()

    w, h = (int(p) for p in args.grid.lower().split("x"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in REFERENCE_SHAPES:
        path = out / f"{name}_{w}x{h}.pgm"
        write_pgm(path, reference_shape(name, h, w))
        print(path)


if __name__ == "__main__":
    main()

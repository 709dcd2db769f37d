#!/usr/bin/env python3
"""Cycle and latency comparison of the three accelerator engines.

Runs identically-shaped workloads through the comparison-accumulator
array, the XNOR-popcount array, and the 8-bit MAC array, and prints a
table per architecture.

    python scripts/compare_engines.py --archs tfc sfc lfc --array 8x8
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from bika import accel_sim


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--archs", nargs="+", default=["tfc", "sfc", "lfc"])
    ap.add_argument("--array", default="8x8")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rows, cols = (int(v) for v in args.array.lower().split("x"))

    for arch in args.archs:
        table = accel_sim.compare_engines(arch, args.seed, rows, cols)
        print(f"== {arch} on a {rows}x{cols} array ==")
        print(accel_sim.comparison_csv(table), end="")
        r = table["ratios"]
        print(f"qnn/bika latency ratio: {r['qnn_over_bika_latency']:.2f}")
        print(f"bika/bnn cycle ratio:   {r['bika_over_bnn_cycles']:.2f}")
        print()
    return 0


if __name__ == "__main__":
    sys.exit(main())

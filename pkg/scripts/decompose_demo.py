#!/usr/bin/env python3
"""Approximate a scalar nonlinearity with weighted binary thresholds.

Samples the target over a range, decomposes the resulting staircase into
weighted thresholds, quantizes the weights to duplicated unit thresholds,
and prints the approximation error as the slot count grows.

    python scripts/decompose_demo.py --target tanh --slots 8 16 32 64
"""

import argparse
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from bika import threshold_math as tm

TARGETS = {
    "tanh": (math.tanh, -3.0, 3.0),
    "cube": (lambda x: x ** 3 / 30.0, -3.0, 3.0),
    "exp": (lambda x: math.exp(x / 3.0), -3.0, 3.0),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--target", choices=sorted(TARGETS), default="tanh")
    ap.add_argument("--slots", type=int, nargs="+", default=[8, 16, 32, 64])
    ap.add_argument("--gain", type=float, default=20.0,
                    help="output scale; unit thresholds resolve steps of ~2")
    args = ap.parse_args()
    base, lo, hi = TARGETS[args.target]
    fn = lambda x: args.gain * base(x)
    grid = [lo + i * (hi - lo) / 999 for i in range(999)]

    print("slots  m      exact_err    quantized_err")
    for t in args.slots:
        f = tm.sample_piecewise(fn, lo, hi, t)
        wts = tm.decompose(f)
        exact = max(abs(tm.reconstruct(wts, x) - fn(x)) for x in grid)
        try:
            ms = tm.quantize_mix(wts)
            quant = max(abs(tm.reconstruct_mixed(ms, x) - fn(x)) for x in grid)
            print(f"{t:<6d} {ms.m:<6d} {exact:<12.5f} {quant:<12.5f}")
        except tm.DegenerateQuantizationError:
            print(f"{t:<6d} -      {exact:<12.5f} (all weights round to zero)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

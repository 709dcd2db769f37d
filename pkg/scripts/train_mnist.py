#!/usr/bin/env python3
"""Train a threshold network on MNIST and export the integer model.

Runs the full pipeline: train the shadow model, verify the exported
integer model is equivalent, then report integer-inference test accuracy.

    python scripts/train_mnist.py --arch tfc --mnist data/mnist --epochs 50
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from bika import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--arch", default="tfc")
    ap.add_argument("--mnist", required=True)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/mnist")
    args = ap.parse_args()

    out = Path(args.out)
    rc = cli.main([
        "train", "--arch", args.arch, "--mnist", args.mnist,
        "--epochs", str(args.epochs), "--batch", str(args.batch),
        "--seed", str(args.seed), "--out", str(out),
    ])
    if rc:
        return rc
    rc = cli.main(["export", str(out / f"{args.arch}-shadow.pt"),
                   "--out", str(out)])
    if rc:
        return rc
    return cli.main(["eval", "--model", str(out / f"{args.arch}.bika"),
                     "--mnist", args.mnist, "--out", str(out)])


if __name__ == "__main__":
    sys.exit(main())

"""Threshold-band ablation on a synthetic validation set.

Trains a toy checkpoint first unless one is given, then runs ``cgm ablate``.

    python scripts/ablation_synthetic.py --out runs/ablation
"""
import argparse
import sys
from pathlib import Path

from cgm.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--checkpoint", help="existing train-toy checkpoint")
    ap.add_argument("--count", type=int, default=50)
    ap.add_argument("--seed", type=int, default=12345)
    ap.add_argument("--degenerate-eps", type=float, default=None)
    args = ap.parse_args()
    out = Path(args.out)
    ckpt = args.checkpoint
    if ckpt is None:
        code = cli(["train-toy", "--out", str(out / "train")])
        if code:
            return code
        ckpt = out / "train" / "checkpoint.bin"
    argv = ["ablate", "--synthetic", str(args.count), "--seed", str(args.seed), "--checkpoint", str(ckpt),
            "--out", str(out)]
    if args.degenerate_eps is not None:
        argv += ["--degenerate-eps", str(args.degenerate_eps)]
    code = cli(argv)
    if code == 0:
        print((out / "ablation.md").read_text())
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Train the toy base + refiner on synthetic shapes and print the loss summary.

    python scripts/train_toy.py --out runs/toy --steps 200
"""
import sys

from cgm.cli import main

if __name__ == "__main__":
    sys.exit(main(["-v", "train-toy", *sys.argv[1:]]))

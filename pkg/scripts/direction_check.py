"""Does band-only heuristic refinement improve a trained toy base?

Loads a train-toy checkpoint, corrupts its predictions near the true boundary
with uniform band noise, refines them, and prints dataset metrics for both.
"""
import argparse

import numpy as np

from cgm.datasets import SynthSpec, band_noise, generate_synthetic
from cgm.imagecore import sigmoid_map
from cgm.metrics import METRIC_NAMES, evaluate_dataset
from cgm.nets import image_batch
from cgm.pipeline import CompositePolicy, refine_from_prob
from cgm.training import TrainState
from cgm.trimap import ThresholdPair


def run(checkpoint, count=50, seed=12345, width=3.0, amplitude=0.45, noise_seed=0,
        policy=CompositePolicy.BAND_ONLY, th=ThresholdPair()):
    state = TrainState.load(checkpoint)
    pairs = generate_synthetic(SynthSpec(seed=seed, count=count, size=state.cfg.size))
    rng = np.random.default_rng(noise_seed)
    base, final = [], []
    for img, mask in pairs:
        q = sigmoid_map(state.base.predict(image_batch([img]))[0])
        q = band_noise(q, mask, rng, width=width, amplitude=amplitude)
        base.append((q, mask))
        final.append((refine_from_prob(img, q, "heuristic", th, policy).final_prob, mask))
    return evaluate_dataset(base), evaluate_dataset(final)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("checkpoint")
    ap.add_argument("--count", type=int, default=50)
    ap.add_argument("--seed", type=int, default=12345)
    ap.add_argument("--amplitude", type=float, default=0.45)
    ap.add_argument("--width", type=float, default=3.0)
    ap.add_argument("--policy", choices=[p.value for p in CompositePolicy], default="band-only")
    args = ap.parse_args()
    rb, rf = run(args.checkpoint, args.count, args.seed, args.width, args.amplitude,
                 policy=CompositePolicy(args.policy))
    print(f"{'measure':<12}{'base':>10}{'refined':>10}")
    for m in METRIC_NAMES:
        print(f"{m:<12}{getattr(rb, m):>10.4f}{getattr(rf, m):>10.4f}")


if __name__ == "__main__":
    main()

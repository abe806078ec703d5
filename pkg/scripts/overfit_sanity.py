"""Overfit a tokenizer to one repeated patch and report the reconstruction error.

    python3 scripts/overfit_sanity.py --steps 200
"""

import argparse

import numpy as np

from eegtok.recording import CorpusIndex, Recording, draw_sample
from eegtok.trainer import TrainConfig, evaluate_reconstruction, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--batch-size", type=int, default=4)
    args = ap.parse_args()
    n = np.arange(200)
    seg = 1.5 * np.cos(2 * np.pi * 5 * n / 200 + 0.7) + 0.8 * np.cos(2 * np.pi * 12 * n / 200 - 2.0)
    rec = Recording(["C3", "C4", "CZ", "PZ"], 200.0, [(0, 1600)], np.tile(seg, (4, 8)))
    index = CorpusIndex.from_recordings([rec])
    config = TrainConfig.toy(batch_size=args.batch_size, steps_per_epoch=max(1, args.steps // 10))
    model, state = train(config, index)
    samples = [draw_sample(index, np.random.default_rng(1), 8, 200, 200) for _ in range(4)]
    rep = evaluate_reconstruction(model, samples)
    print(f"loss {state.history[0].total:.4f} -> {state.history[-1].total:.2e}")
    print(f"amplitude MAE {rep.amplitude_mae:.3e} ({rep.amplitude_mae / rep.mean_target_amplitude:.2%} of mean)")
    print(f"phase error {rep.phase_error:.3e} rad, time RMSE {rep.time_rmse:.3e}")


if __name__ == "__main__":
    main()

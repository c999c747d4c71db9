"""Train the forest on the synthetic learnability benchmark and print its metrics.

    python scripts/learnability.py [--rows 2000] [--noise 0.05] [--seed 0]
"""

import argparse
import time

import numpy as np

from lagrange_tuner.benchmarks import learnability_set
from lagrange_tuner.forest import ForestConfig, TrainConfig, TrainSet, train_forest


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=2000)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()

    X, y, w = learnability_set(args.rows, noise=args.noise, seed=args.seed)
    data = TrainSet(X, y, [f"r{i}" for i in range(len(y))], ["synth"] * len(y))
    t0 = time.perf_counter()
    model = train_forest(data, TrainConfig(forest=ForestConfig(seed=args.seed, n_jobs=args.jobs), seed=args.seed))
    elapsed = time.perf_counter() - t0
    print(f"rows {len(y)}, informative weights {np.round(w[w != 0], 3).tolist()}")
    print(f"chosen max_features {model.config.max_features}, cv r2 {model.cv_score:.4f}")
    for k, v in model.metrics.items():
        print(f"{k:>14} {v:.4f}" if isinstance(v, float) else f"{k:>14} {v}")
    print(f"{'train_s':>14} {elapsed:.1f}")


if __name__ == "__main__":
    main()

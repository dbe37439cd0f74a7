"""Train the nominal pendulum swing-up policy and evaluate it.

Trains fitted value iteration on a fixed resampled state dataset, then rolls
30 evaluation episodes from downward start states and prints the success
rate. With the defaults this reaches 100% success in a few minutes on a
laptop CPU.
"""

import argparse
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from hjvi import config, evaluation, fvi, value_net


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/pendulum_cfvi")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--iterations", type=int, default=40)
    parser.add_argument("--episodes", type=int, default=30)
    args = parser.parse_args()

    cfg = config.ExperimentConfig.from_dict({
        "system": "pendulum",
        "seed": args.seed,
        "train": {"iterations": args.iterations, "resample": True,
                  "eval_every": 5, "eval_episodes": 10},
    })
    result = fvi.train(cfg, args.out)
    print(f"trained in {result.wall_time:.0f}s; first 100% eval at "
          f"iteration {result.iterations_to_success}")

    ens, _ = value_net.load_checkpoint(result.checkpoint_path)
    problem = fvi.build_problem(cfg)
    stats = evaluation.evaluate_policy(
        problem, ens, args.episodes, np.random.default_rng(args.seed + 10_000))
    print(f"nominal evaluation over {args.episodes} episodes: "
          f"success {stats.success_rate:.2f}, "
          f"return {stats.mean_return:.3f} "
          f"[{stats.min_return:.3f}, {stats.max_return:.3f}]")
    print(f"plot with: hjvi plot --run {result.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

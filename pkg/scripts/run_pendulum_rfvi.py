"""Train a robust pendulum policy against a worst-case state disturbance.

Trains with an energy-ball state adversary of radius alpha (modulated by a
reflected Brownian level during training), then evaluates both nominally and
under the full-amplitude worst-case attack. Pass --baseline a checkpoint
trained without the adversary to print the side-by-side comparison the
robust formulation is meant to win.
"""

import argparse
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from hjvi import config, evaluation, fvi, value_net


def evaluate_both(problem, ens, episodes, seed):
    out = {}
    for mode in ("none", "worst_case"):
        stats = evaluation.evaluate_policy(
            problem, ens, episodes, np.random.default_rng(seed),
            disturbance_mode=mode)
        out[mode] = stats
    return out


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/pendulum_rfvi")
    parser.add_argument("--alpha", type=float, default=0.4,
                        help="state-disturbance ball radius")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--iterations", type=int, default=40)
    parser.add_argument("--episodes", type=int, default=30)
    parser.add_argument("--baseline", default=None,
                        help="nominal checkpoint to attack for comparison")
    args = parser.parse_args()

    cfg = config.ExperimentConfig.from_dict({
        "system": "pendulum",
        "seed": args.seed,
        "adversary": {"state": args.alpha},
        "train": {"iterations": args.iterations, "resample": True,
                  "eval_every": 5, "eval_episodes": 10},
    })
    result = fvi.train(cfg, args.out)
    print(f"trained in {result.wall_time:.0f}s")

    problem = fvi.build_problem(cfg)
    ens, _ = value_net.load_checkpoint(result.checkpoint_path)
    robust = evaluate_both(problem, ens, args.episodes, args.seed + 10_000)
    print(f"robust policy: nominal success {robust['none'].success_rate:.2f}, "
          f"worst-case success {robust['worst_case'].success_rate:.2f} "
          f"(alpha={args.alpha})")

    if args.baseline is not None:
        base_ens, header = value_net.load_checkpoint(args.baseline)
        if header["system"] != "pendulum":
            print(f"baseline checkpoint is for {header['system']!r}, "
                  f"expected pendulum", file=sys.stderr)
            return 2
        base = evaluate_both(problem, base_ens, args.episodes,
                             args.seed + 10_000)
        print(f"nominal policy: nominal success "
              f"{base['none'].success_rate:.2f}, worst-case success "
              f"{base['worst_case'].success_rate:.2f} under the same attack")
    return 0


if __name__ == "__main__":
    sys.exit(main())

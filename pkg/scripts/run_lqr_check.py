"""Sanity-check the solver against the closed-form discounted LQR.

On the double integrator with a quadratic action cost the discounted HJB
has an exact solution V(x) = -x^T P x with P from a Riccati equation, and
the greedy policy is the linear gain u = -K x. This script trains the
network solver on that problem and reports how closely the learned value
function and the implied gain (least-squares fit of the greedy actions)
match the Riccati solution.
"""

import argparse
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from hjvi import config, fvi, value_net


def riccati(a_mat, b_mat, q_mat, r_mat, rho, step=1e-3, tol=1e-12):
    """Discounted CARE 0 = Q + A'^T P + P A' - 2 P B R^-1 B^T P with
    A' = A - (rho/2) I, solved by integrating the matrix flow to rest."""
    a_t = a_mat - 0.5 * rho * np.eye(a_mat.shape[0])
    r_inv = np.linalg.inv(r_mat)
    p = np.zeros_like(a_mat)
    for _ in range(2_000_000):
        dp = q_mat + a_t.T @ p + p @ a_t \
            - 2.0 * p @ b_mat @ r_inv @ b_mat.T @ p
        p = p + step * dp
        if np.max(np.abs(dp)) < tol:
            return p, 2.0 * r_inv @ b_mat.T @ p
    raise RuntimeError("Riccati flow did not converge")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/lqr_check")
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--states", type=int, default=100)
    args = parser.parse_args()

    cfg = config.ExperimentConfig.from_dict({
        "system": "double_integrator",
        "seed": args.seed,
        "cost": {"family": "linear", "r_diag": [0.5], "action_scale": 1.0,
                 "cost_scale": 1.0},
        "reward": {"q_diag": [1.0, 0.1]},
        "net": {"hidden": [48, 48]},
        "fit": {"epochs": 20},
        "train": {"iterations": 80, "n_samples": 2048, "resample": True,
                  "eval_every": 20, "eval_episodes": 5},
    })
    result = fvi.train(cfg, args.out)
    print(f"trained in {result.wall_time:.0f}s")

    problem = fvi.build_problem(cfg)
    ens, _ = value_net.load_checkpoint(result.checkpoint_path)
    a_mat = np.array([[0.0, 1.0], [0.0, 0.0]])
    b_mat = np.array([[0.0], [1.0]])
    p_mat, k_gain = riccati(a_mat, b_mat, np.diag([1.0, 0.1]),
                            np.diag([0.5]), cfg.train.rho)

    rng = np.random.default_rng(7)
    x = problem.model.sample_states(args.states, rng)
    v_net = ens.value(x)
    v_ref = -np.einsum("bi,ij,bj->b", x, p_mat, x)
    value_err = np.max(np.abs(v_net - v_ref) / np.abs(v_ref))

    u = fvi.greedy_action(problem, ens, x)
    k_fit = -np.linalg.lstsq(x, u, rcond=None)[0].T[0]
    gain_err = np.abs(k_fit - k_gain) / np.abs(k_gain)

    print(f"Riccati P:\n{p_mat}")
    print(f"Riccati gain K: {k_gain}")
    print(f"fitted gain:    {k_fit}")
    print(f"max relative value error over {args.states} states: "
          f"{value_err:.4f}")
    print(f"relative gain error per component: {gain_err}")
    return 0 if value_err < 0.05 and np.all(gain_err < 0.10) else 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: train / eval / sweep / plot.

Exit codes: 0 on success, 1 for runtime failures (training divergence, sweep
runs that failed), 2 for validation errors (bad config, unknown system,
checkpoint mismatch, missing files).
"""

from __future__ import annotations

import argparse
import pathlib
import sys

import numpy as np
import yaml

from . import config as config_mod
from . import evaluation, fvi, value_net
from .config import ConfigError, ExperimentConfig
from .value_net import CheckpointError


def _load_config(path) -> ExperimentConfig:
    p = pathlib.Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return config_mod.load(p)


def _parse_overrides(pairs: list[str]) -> dict[str, float]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(
                f"--model-override expects name=value, got {pair!r}")
        name, _, value = pair.partition("=")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(
                f"--model-override {name.strip()!r}: not a number: {value!r}")
    return out


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    result = fvi.train(cfg, args.out, seed_override=args.seed_override)
    print(f"trained {cfg.system} for {result.iterations} iterations "
          f"({result.wall_time:.1f}s): final success rate "
          f"{result.final_success_rate:.2f}, mean return "
          f"{result.final_mean_return:.3f}")
    print(f"artifacts in {result.out_dir}")
    return 0


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise ConfigError(f"--episodes must be >= 1, got {args.episodes}")
    ens, header = value_net.load_checkpoint(args.checkpoint)
    if args.config is not None:
        cfg = _load_config(args.config)
        if cfg.system != header["system"]:
            raise ConfigError(
                f"checkpoint was trained on {header['system']!r} but the "
                f"eval config says {cfg.system!r}")
    else:
        cfg = ExperimentConfig.from_dict(header["config_echo"])
    if args.model_override:
        merged = dict(cfg.model_overrides)
        merged.update(_parse_overrides(args.model_override))
        cfg = cfg.replace(model_overrides=merged)
    problem = fvi.build_problem(cfg)
    if args.disturbance_mode != "none" and not problem.adversarial:
        raise ConfigError(
            f"--disturbance-mode {args.disturbance_mode} needs an adversary "
            f"section with at least one admissible set in the config")
    seed = cfg.seed if args.seed_override is None else args.seed_override
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    stats, traces = evaluation.evaluate_policy(
        problem, ens, n_episodes=args.episodes, rng=rng,
        disturbance_mode=args.disturbance_mode, collect_traces=True)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    evaluation.write_episodes_csv(out / "episodes.csv", stats, chash)
    for i in range(min(args.traces, len(traces))):
        evaluation.write_trace_csv(out / f"trace_{i:03d}.csv", traces[i],
                                   chash)
    summary = evaluation.reward_stats(traces)
    summary.update({
        "system": cfg.system, "config_hash": chash,
        "disturbance_mode": args.disturbance_mode,
        "success_rate": stats.success_rate, "seed": int(seed),
    })
    with open(out / "eval_stats.yaml", "w") as fh:
        yaml.safe_dump(summary, fh, sort_keys=True)
    print(f"{cfg.system} ({args.disturbance_mode}): "
          f"success {stats.success_rate:.2f} over {args.episodes} episodes, "
          f"return {summary['mean']:.3f} "
          f"[p25 {summary['p25']:.3f}, p50 {summary['p50']:.3f}, "
          f"p75 {summary['p75']:.3f}], "
          f"state {summary['state_mean']:.3f} / action "
          f"{summary['action_mean']:.3f}")
    print(f"artifacts in {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    values = [v for v in args.values.split(",") if v]
    if not values:
        raise ConfigError("--values must list at least one value")
    if args.axis != "architecture":
        values = [float(v) for v in values]
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated ints, "
                          f"got {args.seeds!r}")
    if not seeds:
        raise ConfigError("--seeds must list at least one seed")
    summary = evaluation.ablation_sweep(cfg, args.axis, values, seeds,
                                        args.out)
    for run in summary["runs"]:
        print(f"  {run['axis']}={run['value']} seed={run['seed']}: "
              f"{run['status']}")
    print(f"curves: {summary['curves']}")
    print(f"summary: {summary['summary']}")
    if summary["failures"]:
        print(f"{len(summary['failures'])} run(s) failed", file=sys.stderr)
        return 1
    return 0


def _read_curve_or_die(path) -> dict[str, list[float]]:
    if not path.exists():
        raise ConfigError(f"no learning_curve.csv in {path.parent}")
    cols = evaluation._read_curve(path)
    if not cols or not next(iter(cols.values())):
        raise ConfigError(f"learning curve {path} has no data rows")
    return cols


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run = pathlib.Path(args.run)
    out = pathlib.Path(args.out) if args.out is not None else run
    curve = _read_curve_or_die(run / "learning_curve.csv")

    cfg_path = run / "config.yaml"
    cfg = config_mod.load(cfg_path) if cfg_path.exists() else None
    chash = cfg.config_hash() if cfg is not None else "unknown"
    meta = {"Title": f"config_hash={chash}"}
    out.mkdir(parents=True, exist_ok=True)

    fig, (ax_ret, ax_succ) = plt.subplots(2, 1, sharex=True, figsize=(6, 6))
    it = curve["iteration"]
    ax_ret.plot(it, curve["mean_return"], color="tab:blue", label="mean")
    ax_ret.fill_between(it, curve["min_return"], curve["max_return"],
                        color="tab:blue", alpha=0.25, label="min/max")
    ax_ret.set_ylabel("eval return")
    ax_ret.legend()
    ax_succ.plot(it, curve["success_rate"], color="tab:green")
    ax_succ.set_ylabel("success rate")
    ax_succ.set_ylim(-0.05, 1.05)
    ax_succ.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(out / "learning_curve.svg", metadata=meta)
    plt.close(fig)
    written = [out / "learning_curve.svg"]

    ckpt = run / "checkpoint.bin"
    if ckpt.exists() and cfg is not None:
        ens, _ = value_net.load_checkpoint(ckpt)
        problem = fvi.build_problem(cfg)
        model = problem.model
        if model.n_x == 2:
            n = args.grid
            g0 = np.linspace(model.x_min[0], model.x_max[0], n)
            g1 = np.linspace(model.x_min[1], model.x_max[1], n)
            xx, yy = np.meshgrid(g0, g1)
            pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
            vals = ens.value(pts)
            acts = fvi.greedy_action(problem, ens, pts)[:, 0]
            for name, z in (("value", vals), ("policy", acts)):
                with open(out / f"{name}_grid.csv", "w") as fh:
                    fh.write(f"# config_hash={chash}\n")
                    fh.write("x0,x1,{}\n".format(name))
                    for p, v in zip(pts, z):
                        fh.write(f"{float(p[0])!r},{float(p[1])!r},"
                                 f"{float(v)!r}\n")
                fig, ax = plt.subplots(figsize=(5.5, 4.5))
                mesh = ax.pcolormesh(xx, yy, z.reshape(n, n),
                                     shading="auto", cmap="viridis")
                fig.colorbar(mesh, ax=ax, label=name)
                ax.set_xlabel("x0")
                ax.set_ylabel("x1")
                fig.tight_layout()
                fig.savefig(out / f"{name}_heatmap.svg", metadata=meta)
                plt.close(fig)
                written += [out / f"{name}_grid.csv",
                            out / f"{name}_heatmap.svg"]
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjvi",
        description="Continuous fitted value iteration: train, evaluate, "
                    "sweep, and plot HJB/HJI policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run fitted value iteration")
    p.add_argument("--config", required=True, help="experiment config (yaml)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed-override", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None,
                   help="override the config echoed in the checkpoint")
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--disturbance-mode", default="none",
                   choices=list(evaluation.DISTURBANCE_MODES))
    p.add_argument("--seed-override", type=int, default=None)
    p.add_argument("--traces", type=int, default=0,
                   help="write the first N episode traces as CSV")
    p.add_argument("--model-override", action="append", default=[],
                   metavar="NAME=VALUE",
                   help="evaluate under perturbed physical parameters")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="ablation sweep over one config axis")
    p.add_argument("--config", required=True, help="base config (yaml)")
    p.add_argument("--out", required=True)
    p.add_argument("--axis", required=True,
                   choices=list(evaluation.SWEEP_AXES))
    p.add_argument("--values", required=True,
                   help="comma-separated axis values (e.g. 2.5,5,10 "
                        "or 32x32,64x64)")
    p.add_argument("--seeds", default="0,1,2,3,4",
                   help="comma-separated seeds")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render curves/heatmaps from a run dir")
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--out", default=None,
                   help="where to write plots (default: the run dir)")
    p.add_argument("--grid", type=int, default=101,
                   help="heatmap resolution per axis")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except fvi.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

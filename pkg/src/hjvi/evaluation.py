"""Policy evaluation: disturbed rollouts, success detection, sweep harness.

Rollouts apply the closed-form greedy policy at every control step. Three
disturbance modes exist: "none" (nominal dynamics), "worst_case" (the
closed-form adversary at full amplitude, unmodulated), and "random"
(disturbances drawn uniformly from the admissible sets each step). A state
blow-up during evaluation truncates the episode and marks it failed instead
of raising; the recorded return is the discounted integral up to truncation.

All CSV emitters format floats with repr() so identical runs produce byte
identical files, and every file starts with a comment line carrying the
producing config hash.
"""

from __future__ import annotations

import dataclasses
import math
import pathlib

import numpy as np
import yaml

from . import action_cost, adversary, fvi, value_net
from .config import ExperimentConfig
from .dynamics import DisturbanceBundle, DynamicsError, JointKind, wrap_angle

SWEEP_AXES = ("n_step_beta", "adversary_alpha", "architecture")
DISTURBANCE_MODES = ("none", "worst_case", "random")


@dataclasses.dataclass
class RolloutTrace:
    """One evaluation episode on the dt grid.

    x has one more row than u / r_state / r_action (it includes the terminal
    state); r_action stores the action penalty g(u) >= 0, so the instantaneous
    reward is r_state - r_action. The discounted return is recomputable from
    these parts alone (exact per-interval kernel weights), which is the
    contract the statistics below rely on.
    """

    t: np.ndarray        # (K+1,)
    x: np.ndarray        # (K+1, n_x)
    u: np.ndarray        # (K, n_u)
    r_state: np.ndarray  # (K,)
    r_action: np.ndarray # (K,)
    disturbances: dict[str, np.ndarray]  # channel -> (K, dim), only active ones
    rho: float
    blown_up: bool = False

    @property
    def rewards(self) -> np.ndarray:
        return self.r_state - self.r_action

    @property
    def n_steps(self) -> int:
        return self.u.shape[0]

    def _weights(self) -> np.ndarray:
        e = np.exp(-self.rho * self.t)
        return (e[:-1] - e[1:]) / self.rho

    def discounted_return(self) -> float:
        return float(np.dot(self._weights(), self.rewards))

    def state_return(self) -> float:
        return float(np.dot(self._weights(), self.r_state))

    def action_return(self) -> float:
        """Discounted action penalty, >= 0 (enters the return negatively)."""
        return float(np.dot(self._weights(), self.r_action))


def start_states(problem: fvi.Problem, n: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Episode starts: the system's rest state (pendula hanging down) plus
    small uniform jitter on positions and velocities."""
    model = problem.model
    ec = problem.cfg.eval
    x = np.tile(model.x_start, (n, 1))
    x[:, :model.n_q] += rng.uniform(-ec.jitter_pos, ec.jitter_pos,
                                    size=(n, model.n_q))
    x[:, model.n_q:] += rng.uniform(-ec.jitter_vel, ec.jitter_vel,
                                    size=(n, model.n_q))
    return model.normalize(x)


def _sampled_disturbances(problem: fvi.Problem, n_x: int, n_u: int,
                          rng: np.random.Generator) -> DisturbanceBundle:
    draw = lambda s, d: None if s is None else s.sample(rng, (), d)
    return DisturbanceBundle(
        state=draw(problem.state_ball, n_x),
        action=draw(problem.action_ball, n_u),
        observation=draw(problem.obs_ball, n_x),
        model=None if problem.model_box is None
        else problem.model_box.sample(rng, ()))


def rollout(problem: fvi.Problem, ens: value_net.ValueEnsemble,
            x0: np.ndarray, duration: float | None = None,
            disturbance_mode: str = "none",
            rng: np.random.Generator | None = None) -> RolloutTrace:
    """Run one episode under the greedy policy. worst_case applies the
    closed-form adversary at full amplitude (no Wiener modulation); random
    draws disturbances uniformly from the admissible sets each step."""
    if disturbance_mode not in DISTURBANCE_MODES:
        raise ValueError(f"disturbance_mode must be one of "
                         f"{DISTURBANCE_MODES}, got {disturbance_mode!r}")
    if disturbance_mode == "random" and rng is None:
        raise ValueError("random disturbance mode needs an rng")
    model = problem.model
    tc = problem.cfg.train
    if duration is None:
        duration = problem.cfg.eval.duration
    n_steps = max(1, round(duration / tc.dt))

    x = np.asarray(x0, dtype=float).reshape(model.n_x)
    xs = [x.copy()]
    us, r_state, r_action = [], [], []
    applied: dict[str, list] = {}
    blown_up = False
    for _ in range(n_steps):
        xb = x[None, :]
        _, grad_v = ens.value_and_grad(xb)
        B = model.control_matrix(xb)
        w = adversary.action_costate(grad_v, B)
        u = action_cost.policy(problem.cost_spec, w)
        if disturbance_mode == "worst_case":
            bundle = fvi._disturbances(problem, xb, u, grad_v, B, levels=None)
        elif disturbance_mode == "random" and problem.adversarial:
            bundle = _sampled_disturbances(problem, model.n_x, model.n_u, rng)
        else:
            bundle = None
        us.append(u[0])
        r_state.append(float(fvi.state_reward(problem, xb)[0]))
        r_action.append(float(action_cost.cost(problem.cost_spec, u)[0]))
        if bundle is not None:
            for name in ("state", "action", "observation", "model"):
                xi = getattr(bundle, name)
                if xi is not None:
                    applied.setdefault(name, []).append(
                        np.asarray(xi, dtype=float).reshape(-1))
        try:
            x = model.step(xb, u, tc.dt, bundle)[0]
        except DynamicsError:
            blown_up = True
            break
        xs.append(x.copy())

    k = len(us)
    x_arr = np.asarray(xs)
    if blown_up:  # pad the unavailable post-failure state
        x_arr = np.vstack([x_arr, np.full((1, model.n_x), np.nan)])
    return RolloutTrace(
        t=np.arange(k + 1) * tc.dt,
        x=x_arr,
        u=np.asarray(us).reshape(k, model.n_u),
        r_state=np.asarray(r_state), r_action=np.asarray(r_action),
        disturbances={name: np.asarray(v) for name, v in applied.items()},
        rho=tc.rho, blown_up=blown_up)


def success(problem: fvi.Problem, trace: RolloutTrace) -> bool:
    """True iff the system stays in the target band for the final t_hold
    seconds: every revolute position within eps_pos of the goal angle
    (closed threshold) and every velocity magnitude below eps_vel (strict).
    For systems without revolute joints all positions are checked instead;
    extra non-revolute positions (e.g. the cart) are otherwise free.
    """
    if trace.blown_up:
        return False
    ec = problem.cfg.eval
    model = problem.model
    t_end = trace.t[-1]
    window = trace.t >= t_end - ec.t_hold - 1e-12
    x = trace.x[window]
    q_err = x[:, :model.n_q] - model.x_des[:model.n_q]
    angle_dims = model.angle_dims()
    if angle_dims:
        pos_ok = np.all(np.abs(wrap_angle(q_err[:, angle_dims])) <= ec.eps_pos)
    else:
        pos_ok = np.all(np.abs(q_err) <= ec.eps_pos)
    vel = x[:, model.n_q:] - model.x_des[model.n_q:]
    return bool(pos_ok and np.all(np.abs(vel) < ec.eps_vel))


@dataclasses.dataclass
class EvalStats:
    """Per-episode aggregates from a batch of evaluation rollouts."""

    returns: np.ndarray
    state_returns: np.ndarray
    action_returns: np.ndarray
    successes: np.ndarray
    blowups: np.ndarray

    @property
    def n_episodes(self) -> int:
        return self.returns.shape[0]

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns))

    @property
    def min_return(self) -> float:
        return float(np.min(self.returns))

    @property
    def max_return(self) -> float:
        return float(np.max(self.returns))

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes))


def evaluate_policy(problem: fvi.Problem, ens: value_net.ValueEnsemble,
                    n_episodes: int, rng: np.random.Generator,
                    disturbance_mode: str = "none",
                    duration: float | None = None,
                    collect_traces: bool = False):
    """Roll n_episodes from jittered start states; returns EvalStats (and the
    traces too when collect_traces)."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    starts = start_states(problem, n_episodes, rng)
    traces = []
    rows = {"returns": [], "state_returns": [], "action_returns": [],
            "successes": [], "blowups": []}
    for i in range(n_episodes):
        tr = rollout(problem, ens, starts[i], duration=duration,
                     disturbance_mode=disturbance_mode, rng=rng)
        rows["returns"].append(tr.discounted_return())
        rows["state_returns"].append(tr.state_return())
        rows["action_returns"].append(tr.action_return())
        rows["successes"].append(success(problem, tr))
        rows["blowups"].append(tr.blown_up)
        if collect_traces:
            traces.append(tr)
    stats = EvalStats(returns=np.asarray(rows["returns"]),
                      state_returns=np.asarray(rows["state_returns"]),
                      action_returns=np.asarray(rows["action_returns"]),
                      successes=np.asarray(rows["successes"], dtype=bool),
                      blowups=np.asarray(rows["blowups"], dtype=bool))
    return (stats, traces) if collect_traces else stats


def reward_stats(traces: list[RolloutTrace]) -> dict:
    """Aggregate return statistics: mean, 2-sigma band, quartiles, and the
    state-reward / action-penalty components aggregated independently."""
    if not traces:
        raise ValueError("reward_stats needs at least one trace")
    ret = np.array([tr.discounted_return() for tr in traces])
    state = np.array([tr.state_return() for tr in traces])
    act = np.array([tr.action_return() for tr in traces])
    q25, q50, q75 = (float(np.percentile(ret, p)) for p in (25, 50, 75))
    sd = float(np.std(ret))
    return {
        "n_episodes": len(traces),
        "mean": float(np.mean(ret)),
        "band_low": float(np.mean(ret) - 2.0 * sd),
        "band_high": float(np.mean(ret) + 2.0 * sd),
        "p25": q25, "p50": q50, "p75": q75,
        "state_mean": float(np.mean(state)),
        "action_mean": float(np.mean(act)),
        "blowups": int(sum(tr.blown_up for tr in traces)),
    }


# -- deterministic CSV emitters ---------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def write_episodes_csv(path, stats: EvalStats, config_hash: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write("episode,return,state_return,action_return,success,blown_up\n")
        for i in range(stats.n_episodes):
            fh.write(",".join([
                str(i), _fmt(stats.returns[i]), _fmt(stats.state_returns[i]),
                _fmt(stats.action_returns[i]), str(int(stats.successes[i])),
                str(int(stats.blowups[i]))]) + "\n")


def write_trace_csv(path, trace: RolloutTrace, config_hash: str) -> None:
    """One row per control step: time, state, action, reward split."""
    n_x = trace.x.shape[1]
    n_u = trace.u.shape[1]
    cols = (["t"] + [f"x{i}" for i in range(n_x)] +
            [f"u{i}" for i in range(n_u)] + ["r_state", "r_action"])
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write(",".join(cols) + "\n")
        for k in range(trace.n_steps):
            row = ([_fmt(trace.t[k])] + [_fmt(v) for v in trace.x[k]] +
                   [_fmt(v) for v in trace.u[k]] +
                   [_fmt(trace.r_state[k]), _fmt(trace.r_action[k])])
            fh.write(",".join(row) + "\n")


# -- ablation sweep ----------------------------------------------------------------

def apply_sweep_axis(cfg: ExperimentConfig, axis: str,
                     value) -> ExperimentConfig:
    if axis == "n_step_beta":
        return cfg.replace(train={"beta": float(value)})
    if axis == "adversary_alpha":
        alpha = float(value)
        return cfg.replace(adversary={"state": None if alpha == 0.0 else alpha})
    if axis == "architecture":
        hidden = [int(w) for w in str(value).split("x")]
        if not hidden or any(h < 1 for h in hidden):
            raise ValueError(f"bad architecture value {value!r}; "
                             f"expected e.g. '64x64'")
        return cfg.replace(net={"hidden": hidden})
    raise ValueError(f"unknown sweep axis {axis!r}; known: {SWEEP_AXES}")


def _read_curve(path) -> dict[str, list[float]]:
    cols: dict[str, list[float]] = {}
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                cols = {h: [] for h in header}
                continue
            for h, v in zip(header, line.split(",")):
                cols[h].append(float(v))
    return cols


def ablation_sweep(base_cfg: ExperimentConfig, axis: str, values, seeds,
                   out_root) -> dict:
    """Train once per (value, seed) in out_root/<axis>=<value>/seed=<seed>,
    skipping runs whose result.yaml already exists (resume), then aggregate
    learning curves across seeds into sweep_curves.csv and final outcomes
    into sweep_summary.csv. Per-run failures are recorded and the sweep
    continues."""
    if not values:
        raise ValueError("sweep needs at least one axis value")
    out_root = pathlib.Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    runs, failures = [], []
    for value in values:
        cfg_v = apply_sweep_axis(base_cfg, axis, value)
        for seed in seeds:
            sub = out_root / f"{axis}={value}" / f"seed={seed}"
            record = {"axis": axis, "value": str(value), "seed": int(seed),
                      "dir": str(sub)}
            if (sub / "result.yaml").exists():
                record["status"] = "skipped"
                runs.append(record)
                continue
            try:
                fvi.train(cfg_v.replace(seed=int(seed)), sub)
                record["status"] = "ok"
            except Exception as exc:  # keep sweeping past individual failures
                record["status"] = f"failed: {exc}"
                failures.append(record)
            runs.append(record)

    curves_path = out_root / "sweep_curves.csv"
    summary_path = out_root / "sweep_summary.csv"
    with open(curves_path, "w") as cfh, open(summary_path, "w") as sfh:
        cfh.write(f"# axis={axis} base_config_hash={base_cfg.config_hash()}\n")
        cfh.write("value,iteration,mean_return,min_return,max_return,"
                  "success_rate_mean\n")
        sfh.write(f"# axis={axis} base_config_hash={base_cfg.config_hash()}\n")
        sfh.write("value,seed,final_success_rate,final_mean_return,"
                  "iterations_to_success\n")
        for value in values:
            per_seed = []
            for seed in seeds:
                sub = out_root / f"{axis}={value}" / f"seed={seed}"
                curve = sub / "learning_curve.csv"
                result = sub / "result.yaml"
                if not curve.exists() or not result.exists():
                    continue
                cols = _read_curve(curve)
                with open(result) as fh:
                    res = yaml.safe_load(fh)
                per_seed.append(cols)
                its = res["iterations_to_success"]
                sfh.write(",".join([
                    str(value), str(seed),
                    _fmt(res["final_success_rate"]),
                    _fmt(res["final_mean_return"]),
                    "" if its is None else str(its)]) + "\n")
            if not per_seed:
                continue
            n_rows = min(len(c["iteration"]) for c in per_seed)
            for i in range(n_rows):
                means = np.array([c["mean_return"][i] for c in per_seed])
                succ = np.array([c["success_rate"][i] for c in per_seed])
                cfh.write(",".join([
                    str(value), str(int(per_seed[0]["iteration"][i])),
                    _fmt(means.mean()), _fmt(means.min()), _fmt(means.max()),
                    _fmt(succ.mean())]) + "\n")
    return {"axis": axis, "values": [str(v) for v in values],
            "seeds": [int(s) for s in seeds], "runs": runs,
            "failures": failures, "curves": str(curves_path),
            "summary": str(summary_path)}

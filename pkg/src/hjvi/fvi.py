"""Continuous fitted value iteration with closed-form greedy actions.

Value targets come from short model rollouts under the current greedy policy
(and, when admissible sets are configured, under the worst-case adversary):

    R_t    = int_0^t e^{-rho tau} r(x_tau, u_tau) d tau + e^{-rho t} V_k(x_t)
    target = int_0^T beta e^{-beta t} R_t dt + e^{-beta T} R_T

an exponentially weighted average over lookahead horizons, truncated where
the weight has decayed to 1e-4. Rewards and value samples are held constant
over each dt interval (explicit Euler, zero-order hold) while the exponential
kernels are integrated exactly per interval:

    inner weight_j = (e^{-rho t_j} - e^{-rho t_{j+1}}) / rho

The outer integral collapses onto the discrete lookahead returns R_{t_k}
with the weight of the interval (t_{k-1}, t_k] assigned to its right node,

    target = sum_{k=1..N} (e^{-beta t_{k-1}} - e^{-beta t_k}) R_{t_k}
             + e^{-beta t_N} R_{t_N}

which is the TD(lambda) weighting with lambda = e^{-beta dt}: the 1-step
return R_{t_1} = w_0 r_0 + gamma V(x_1) carries weight (1 - lambda), the
2-step return lambda (1 - lambda), and so on, so beta -> inf recovers plain
one-step fitted value iteration. The weights plus the tail sum to exactly 1,
making each target a convex combination of the R_{t_k}: whenever
|V_k| <= max|r_c| / rho on the domain, |target| <= max|r_c| / rho as well.

The greedy action never requires a numerical argmax: with the control-affine
dynamics and separable reward r = q(x) - g(u), the maximizing action is
grad g*(B(x)^T grad V(x)) from the action-cost conjugate machinery.

One master seed drives named independent RNG streams (dataset, net init,
minibatch shuffling, exploration, adversary modulation, per-iteration eval),
so configuring a degenerate adversary (zero-radius sets) reproduces the
non-robust run bit for bit: the adversary contributes exact zeros and
consumes only its own stream.
"""

from __future__ import annotations

import dataclasses
import pathlib
import time

import numpy as np
import yaml

from . import action_cost, adversary, value_net
from .config import ExperimentConfig
from .dynamics import DisturbanceBundle, JointKind, make_model


class TrainingDiverged(RuntimeError):
    """Non-finite loss or targets; the last written checkpoint is kept."""


CURVE_COLUMNS = ("iteration", "mean_return", "min_return", "max_return",
                 "success_rate", "wall_time", "loss")


@dataclasses.dataclass
class Problem:
    """Everything a training or evaluation run needs, built from a config."""

    cfg: ExperimentConfig
    model: object
    fm: value_net.FeatureMap
    cost_spec: action_cost.ActionCostSpec
    q_diag: np.ndarray
    state_ball: adversary.EnergyBall | None
    action_ball: adversary.EnergyBall | None
    obs_ball: adversary.EnergyBall | None
    model_box: adversary.AmplitudeBox | None

    @property
    def adversarial(self) -> bool:
        return any(s is not None for s in (self.state_ball, self.action_ball,
                                           self.obs_ball, self.model_box))

    @property
    def needs_jacobians(self) -> bool:
        return self.obs_ball is not None or self.model_box is not None


def default_q_diag(model, fm: value_net.FeatureMap) -> np.ndarray:
    """Unit weight on every position feature, 0.1 on velocities."""
    weights = []
    for kind in model.joint_kinds:
        weights.extend([1.0, 1.0] if kind is JointKind.REVOLUTE else [1.0])
    weights.extend([0.1] * model.n_q)
    return np.array(weights)


def build_cost_spec(cfg: ExperimentConfig, model) -> action_cost.ActionCostSpec:
    c = cfg.cost
    scale = model.u_max if c.action_scale is None else c.action_scale
    r = None
    if c.family == "linear":
        r = np.eye(model.n_u) if c.r_diag is None else np.diag(c.r_diag)
    return action_cost.ActionCostSpec(
        family=c.family, dim=model.n_u, r=r, action_scale=scale,
        cost_scale=c.cost_scale, action_shift=c.action_shift)


def build_problem(cfg: ExperimentConfig) -> Problem:
    model = make_model(cfg.system, cfg.model_overrides)
    fm = value_net.FeatureMap(model.joint_kinds)
    cost_spec = build_cost_spec(cfg, model)
    q_diag = default_q_diag(model, fm) if cfg.reward.q_diag is None \
        else np.asarray(cfg.reward.q_diag, dtype=float)
    if q_diag.shape != (fm.n_out,):
        raise ValueError(
            f"reward.q_diag needs {fm.n_out} entries for {cfg.system} "
            f"(features), got {q_diag.shape}")
    adv = cfg.adversary
    model_box = None
    if adv.model_fraction is not None:
        names = adv.model_params or list(model.param_names)
        delta = np.zeros(model.n_p)
        for name in names:
            if name not in model.param_names:
                raise ValueError(
                    f"adversary.model_params: unknown parameter {name!r} "
                    f"for system {cfg.system}; known: {list(model.param_names)}")
            i = model.param_names.index(name)
            delta[i] = adv.model_fraction * abs(model.theta[i])
        model_box = adversary.AmplitudeBox(nu_min=-delta, nu_max=delta)
    ball = lambda a: None if a is None else adversary.EnergyBall(a)
    return Problem(cfg=cfg, model=model, fm=fm, cost_spec=cost_spec,
                   q_diag=q_diag, state_ball=ball(adv.state),
                   action_ball=ball(adv.action), obs_ball=ball(adv.observation),
                   model_box=model_box)


# -- reward and greedy policy ---------------------------------------------------

def state_reward(problem: Problem, x: np.ndarray) -> np.ndarray:
    """q(x) = -(h(x) - h(x_des))^T Q (h(x) - h(x_des)), Q diagonal."""
    delta = problem.fm(x) - problem.fm(problem.model.x_des)
    return -np.einsum("...f,f,...f->...", delta, problem.q_diag, delta)


def reward(problem: Problem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Separable instantaneous reward r(x, u) = q(x) - g(u), always <= 0
    for centered cost families, and exactly 0 at (x_des, 0)."""
    return state_reward(problem, x) - action_cost.cost(problem.cost_spec, u)


def greedy_action(problem: Problem, ens: value_net.ValueEnsemble,
                  x: np.ndarray, grad_v: np.ndarray | None = None) -> np.ndarray:
    """u*(x) = grad g*(B(x)^T grad V(x)): the closed-form argmax."""
    if grad_v is None:
        grad_v = ens.value_and_grad(x)[1]
    B = problem.model.control_matrix(x)
    w = adversary.action_costate(grad_v, B)
    return action_cost.policy(problem.cost_spec, w)


def _disturbances(problem: Problem, x, u, grad_v, B, levels):
    """Closed-form worst-case bundle at one rollout step (None if inactive).

    The modulation level scales the state/action/observation channels only;
    the model-bias corner is a fixed physical offset and stays unmodulated.
    """
    if not problem.adversarial:
        return None
    scale = 1.0 if levels is None else levels[:, None]
    xi_x = xi_u = xi_o = xi_th = None
    if problem.state_ball is not None:
        xi_x = scale * adversary.state_adversary(grad_v, problem.state_ball)
    if problem.action_ball is not None:
        xi_u = scale * adversary.action_adversary(grad_v, B, problem.action_ball)
    if problem.needs_jacobians:
        jac = problem.model.jacobians(x, u)
        if problem.obs_ball is not None:
            xi_o = scale * adversary.observation_adversary(
                grad_v, jac.da_dx, jac.dB_dx, u, problem.obs_ball)
        if problem.model_box is not None:
            xi_th = adversary.model_adversary(
                grad_v, jac.da_dtheta, jac.dB_dtheta, u, problem.model_box)
    return DisturbanceBundle(state=xi_x, action=xi_u, observation=xi_o,
                             model=xi_th)


@dataclasses.dataclass
class ValueTargetBatch:
    """Targets plus the per-state lookahead return grid R_{t_k} (diagnostic)."""

    states: np.ndarray       # (B, n_x)
    targets: np.ndarray      # (B,)
    return_grid: np.ndarray  # (B, N+1)
    reward_bound: float      # max |r| encountered along the rollouts


def compute_value_targets(problem: Problem, ens: value_net.ValueEnsemble,
                          x0: np.ndarray,
                          rng: np.random.Generator | None = None
                          ) -> ValueTargetBatch:
    """Exponentially averaged n-step targets from batched Euler rollouts.

    rng feeds only the adversary modulation process; nominal runs and
    unmodulated adversaries consume no randomness at all.
    """
    tc = problem.cfg.train
    n_steps = tc.horizon_steps
    t_grid = np.arange(n_steps + 1) * tc.dt
    e_rho = np.exp(-tc.rho * t_grid)
    e_beta = np.exp(-tc.beta * t_grid)
    w_inner = (e_rho[:-1] - e_rho[1:]) / tc.rho
    w_outer = e_beta[:-1] - e_beta[1:]

    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    n_batch = x.shape[0]
    inner = np.zeros(n_batch)
    targets = np.zeros(n_batch)
    grid = np.zeros((n_batch, n_steps + 1))
    reward_bound = 0.0

    modulated = problem.adversarial and problem.cfg.adversary.modulate and \
        any(s is not None for s in (problem.state_ball, problem.action_ball,
                                    problem.obs_ball))
    mod = None
    levels = None
    if modulated:
        if rng is None:
            raise ValueError("modulated adversary needs an rng")
        mod = adversary.WienerModulation(sigma=problem.cfg.adversary.sigma,
                                         level=rng.uniform(size=n_batch))
        levels = mod.level

    for k in range(n_steps + 1):
        v, grad_v = ens.value_and_grad(x)
        r_k = inner + e_rho[k] * v
        grid[:, k] = r_k
        if k > 0:
            targets += w_outer[k - 1] * r_k
        if k == n_steps:
            targets += e_beta[n_steps] * r_k
            break
        B = problem.model.control_matrix(x)
        w = adversary.action_costate(grad_v, B)
        u = action_cost.policy(problem.cost_spec, w)
        r = reward(problem, x, u)
        reward_bound = max(reward_bound, float(np.max(np.abs(r))))
        bundle = _disturbances(problem, x, u, grad_v, B, levels)
        inner = inner + w_inner[k] * r
        x = problem.model.step(x, u, tc.dt, bundle)
        if mod is not None:
            levels = mod.advance(tc.dt, rng)

    return ValueTargetBatch(states=np.atleast_2d(np.asarray(x0, dtype=float)),
                            targets=targets, return_grid=grid,
                            reward_bound=reward_bound)


# -- data sources ----------------------------------------------------------------

def dp_dataset(model, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws over the training domain (the fixed-dataset regime)."""
    return model.sample_states(n, rng)


class ReplayBuffer:
    """Fixed-capacity FIFO state store for the rollout-driven regime."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._data = np.zeros((capacity, dim))
        self._size = 0
        self._head = 0

    def __len__(self) -> int:
        return self._size

    @property
    def capacity(self) -> int:
        return self._data.shape[0]

    def push(self, states: np.ndarray) -> None:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        cap = self.capacity
        if states.shape[0] >= cap:  # keep the newest rows only
            self._data[:] = states[-cap:]
            self._head = 0
            self._size = cap
            return
        n = states.shape[0]
        end = self._head + n
        if end <= cap:
            self._data[self._head:end] = states
        else:
            first = cap - self._head
            self._data[self._head:] = states[:first]
            self._data[:end - cap] = states[first:]
        self._head = end % cap
        self._size = min(cap, self._size + n)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.choice(self._size, size=n, replace=self._size < n)
        return self._data[idx].copy()


def rtdp_collect(problem: Problem, ens: value_net.ValueEnsemble,
                 buffer: ReplayBuffer, rng: np.random.Generator) -> int:
    """Roll the exploring greedy policy from jittered start states and push
    every visited state. Exploration noise is a reflected-Brownian level
    (unit sigma, independent per episode and action dim) mapped to
    [-explore_mag, +explore_mag] * u_max, so it stays temporally correlated
    instead of averaging out within a control interval."""
    from .evaluation import start_states  # local import, avoids a cycle

    tc = problem.cfg.train
    model = problem.model
    n_ep = tc.n_rollouts
    steps = max(1, round(tc.rollout_duration / tc.dt))
    x = start_states(problem, n_ep, rng)
    mod = adversary.WienerModulation(
        sigma=1.0, level=rng.uniform(size=(n_ep, model.n_u)))
    noise_amp = tc.explore_mag * model.u_max
    visited = [x.copy()]
    for _ in range(steps):
        u = greedy_action(problem, ens, x)
        noise = noise_amp * (2.0 * mod.level - 1.0)
        x = model.step(x, u + noise, tc.dt)
        mod.advance(tc.dt, rng)
        visited.append(x.copy())
    states = np.concatenate(visited, axis=0)
    buffer.push(states)
    return states.shape[0]


# -- training loop ----------------------------------------------------------------

@dataclasses.dataclass
class TrainResult:
    out_dir: pathlib.Path
    checkpoint_path: pathlib.Path
    curve_path: pathlib.Path
    config_hash: str
    iterations: int
    final_mean_return: float
    final_success_rate: float
    iterations_to_success: int | None
    wall_time: float


def _fmt(v) -> str:
    return repr(float(v))


def train(cfg: ExperimentConfig, out_dir,
          seed_override: int | None = None) -> TrainResult:
    """Run fitted value iteration; writes config echo, learning-curve CSV,
    and a checkpoint into out_dir. Deterministic given (config, seed)."""
    from . import config as config_mod
    from . import evaluation

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed_override is None else int(seed_override)
    if seed_override is not None:
        cfg = cfg.replace(seed=seed)
    problem = build_problem(cfg)
    cfg_hash = cfg.config_hash()
    config_mod.save(cfg, out / "config.yaml")

    streams = np.random.SeedSequence(seed).spawn(6)
    rng_dataset = np.random.default_rng(streams[0])
    rng_init = np.random.default_rng(streams[1])
    rng_fit = np.random.default_rng(streams[2])
    rng_explore = np.random.default_rng(streams[3])
    rng_mod = np.random.default_rng(streams[4])
    eval_seq = streams[5]

    net_cfg = value_net.NetConfig(
        members=cfg.net.members, hidden=tuple(cfg.net.hidden),
        activation=cfg.net.activation, eps_diag=cfg.net.eps_diag)
    ens = value_net.ValueEnsemble(problem.fm, problem.model.x_des, net_cfg,
                                  rng=rng_init)
    opt = value_net.Adam(ens, lr=cfg.fit.lr)

    tc = cfg.train
    dataset = None
    buffer = None
    if tc.mode == "dp":
        dataset = dp_dataset(problem.model, tc.n_samples, rng_dataset)
    else:
        buffer = ReplayBuffer(tc.buffer_capacity, problem.model.n_x)

    curve_path = out / "learning_curve.csv"
    ckpt_path = out / "checkpoint.bin"
    t_start = time.perf_counter()
    success_iter: int | None = None
    last_stats = {"mean_return": float("nan"), "min_return": float("nan"),
                  "max_return": float("nan"), "success_rate": float("nan")}
    loss = float("nan")

    with open(curve_path, "w") as curve:
        curve.write(f"# config_hash={cfg_hash}\n")
        curve.write(",".join(CURVE_COLUMNS) + "\n")
        for it in range(1, tc.iterations + 1):
            if tc.mode == "dp":
                if tc.resample:
                    dataset = dp_dataset(problem.model, tc.n_samples,
                                         rng_dataset)
                states = dataset
            else:
                rtdp_collect(problem, ens, buffer, rng_explore)
                states = buffer.sample(tc.n_samples, rng_dataset)
            batch = compute_value_targets(problem, ens, states, rng_mod)
            if not np.all(np.isfinite(batch.targets)):
                raise TrainingDiverged(
                    f"iteration {it}: non-finite value targets "
                    f"(last checkpoint kept at {ckpt_path})")
            loss = value_net.fit(ens, states, batch.targets, opt, rng_fit,
                                 epochs=cfg.fit.epochs,
                                 batch_size=cfg.fit.batch_size,
                                 p_norm=cfg.fit.p_norm)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"iteration {it}: non-finite training loss "
                    f"(last checkpoint kept at {ckpt_path})")
            if it % tc.eval_every == 0 or it == tc.iterations:
                rng_eval = np.random.default_rng(eval_seq.spawn(1)[0])
                stats = evaluation.evaluate_policy(
                    problem, ens, n_episodes=tc.eval_episodes,
                    rng=rng_eval, disturbance_mode="none")
                last_stats = {
                    "mean_return": stats.mean_return,
                    "min_return": stats.min_return,
                    "max_return": stats.max_return,
                    "success_rate": stats.success_rate,
                }
                wall = time.perf_counter() - t_start
                curve.write(",".join([
                    str(it), _fmt(stats.mean_return), _fmt(stats.min_return),
                    _fmt(stats.max_return), _fmt(stats.success_rate),
                    f"{wall:.3f}", _fmt(loss)]) + "\n")
                curve.flush()
                value_net.save_checkpoint(
                    ckpt_path, ens, system=cfg.system,
                    config_echo=cfg.to_dict(), config_hash=cfg_hash)
                if success_iter is None and stats.success_rate == 1.0 \
                        and tc.eval_episodes > 0:
                    success_iter = it

    wall_total = time.perf_counter() - t_start
    result = TrainResult(
        out_dir=out, checkpoint_path=ckpt_path, curve_path=curve_path,
        config_hash=cfg_hash, iterations=tc.iterations,
        final_mean_return=float(last_stats["mean_return"]),
        final_success_rate=float(last_stats["success_rate"]),
        iterations_to_success=success_iter, wall_time=wall_total)
    with open(out / "result.yaml", "w") as fh:
        yaml.safe_dump({
            "system": cfg.system, "config_hash": cfg_hash,
            "iterations": result.iterations,
            "final_mean_return": result.final_mean_return,
            "final_success_rate": result.final_success_rate,
            "iterations_to_success": result.iterations_to_success,
            "wall_time": round(wall_total, 3),
        }, fh, sort_keys=True)
    return result

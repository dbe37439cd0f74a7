"""End-to-end acceptance gate.

One test per headline guarantee, so ``pytest -v`` prints one pass/fail
line for each. Every check goes through public entry points and the
independent reference computations in oracles.py.

The identity and oracle checks (1, 2, 4, 8, 9) run in seconds to a
minute. The three training-based checks share two session fixtures:
``robustness_runs`` (ten pendulum trainings plus worst-case evaluations,
feeding 5 and 6) and ``horizon_sweep_runs`` (fifteen trainings, feeding
7); with the LQR run for 3 the whole gate takes roughly half an hour on
one desktop core. Training is deterministic given (config, seed) and the
evaluation generators are pinned, so reruns reproduce these numbers
bit for bit.
"""

import pathlib

import numpy as np
import pytest

from hjvi import action_cost, adversary, config, evaluation, fvi, value_net
from hjvi.action_cost import ActionCostSpec
from hjvi.value_net import NetConfig, ValueEnsemble

from oracles import (dense_target_oracle, grid_argmax_batch, riccati_oracle)

CONFIG_DIR = pathlib.Path(__file__).resolve().parents[1] / "configs"

# Families whose cost gradient is defined on the whole policy range; the
# bang-bang cost has no gradient anywhere and the bang-lin policy sits on
# the saturation boundary for large w, where grad_cost is deliberately
# undefined, so the inverse-identity leg applies to these four only.
SMOOTH_FAMILIES = ("linear", "logistic", "atan", "tanh")

ROBUST_ALPHA = 0.4
SWEEP_BETAS = (1000.0, 30.0, 8.0)


def scaled_spec(family, dim, a, b):
    """Composition of a base family with output scale a and cost weight b,
    shifted so the action domain contains zero (the logistic base lives on
    (0, 1), everything else is already symmetric)."""
    if family == "linear":
        r = np.diag(np.linspace(0.8, 1.6, dim))
        return ActionCostSpec(family, dim=dim, r=r, action_scale=a,
                              cost_scale=b)
    if family == "logistic":
        return ActionCostSpec(family, dim=dim, action_scale=2.0 * a,
                              cost_scale=b, action_shift=a)
    return ActionCostSpec(family, dim=dim, action_scale=a, cost_scale=b)


# ---------------------------------------------------------------------------
# 1. closed-form policies


def test_01_convex_conjugate_policy_identities():
    """For every cost family and 1000 random w per family: the conjugate
    pair satisfies Fenchel-Young with equality to 1e-6, grad g inverts the
    policy to 1e-6 where the gradient exists, and the policy lands within
    one cell of a 10^4-point-per-dim brute-force argmax of w'u - g(u).

    w is drawn uniformly on +-8 cost_scale per dimension: beyond roughly
    8b the smooth policies saturate to within one float64 ulp of the
    boundary and the conjugate comparison degenerates (see the decision
    record on float64 saturation).
    """
    rng = np.random.default_rng(101)
    dim = 2
    for family in action_cost.FAMILIES:
        for a, b in ((2.0, 0.7), (1.3, 1.1)):
            spec = scaled_spec(family, dim, a, b)
            w = rng.uniform(-8.0 * b, 8.0 * b, size=(500, dim))
            u = action_cost.policy(spec, w)

            fy_gap = (action_cost.conjugate(spec, w) + action_cost.cost(spec, u)
                      - np.sum(w * u, axis=-1))
            assert np.max(np.abs(fy_gap)) < 1e-6, (family, a, b)

            if family in SMOOTH_FAMILIES:
                w_back = action_cost.grad_cost(spec, u)
                assert np.max(np.abs(w_back - w)) < 1e-6, (family, a, b)

            window = None
            if family == "linear":
                # hand bracket: u* = shift + (a^2/b) R^{-1} w, R diagonal
                u0 = (a * a / b) * w / np.diag(spec.r)
                window = (u0.min(axis=0) - 1.0, u0.max(axis=0) + 1.0)
            u_grid, cells = grid_argmax_batch(spec, w, n_points=10_000,
                                              window=window)
            assert np.all(np.abs(u - u_grid) <= cells + 1e-12), (family, a, b)


# ---------------------------------------------------------------------------
# 2. closed-form disturbances


def test_02_adversary_closed_forms_beat_dense_sampling():
    """Each of the four disturbance channels (state, action, observation,
    model), instantiated 100 times from real model Jacobians and value
    gradients: the closed form is feasible and its objective z'xi is no
    worse than the best of 10^5 uniform samples from the admissible set,
    up to 1% of the sampled objective range."""
    rng = np.random.default_rng(202)
    n_mc = 100_000
    per_system = 50
    channels = {"state": [], "action": [], "observation": [], "model": []}

    for system, alpha in (("pendulum", 0.7), ("cartpole", 1.3)):
        prob = fvi.build_problem(config.ExperimentConfig.from_dict(
            {"system": system}))
        model = prob.model
        ens = ValueEnsemble(prob.fm, model.x_des, NetConfig(),
                            rng=np.random.default_rng(7))
        x = model.sample_states(per_system, rng)
        _, grad_v = ens.value_and_grad(x)
        B = model.control_matrix(x)
        u = rng.uniform(-model.u_max, model.u_max, size=(per_system, model.n_u))
        jac = model.jacobians(x, u)

        ball_x = adversary.EnergyBall(alpha)
        ball_u = adversary.EnergyBall(0.5 * alpha)
        delta = 0.25 * np.abs(model.theta) + 0.05
        box = adversary.AmplitudeBox(model.theta - delta, model.theta + delta)

        channels["state"].append(
            (grad_v, ball_x, adversary.state_adversary(grad_v, ball_x)))
        channels["action"].append(
            (adversary.action_costate(grad_v, B), ball_u,
             adversary.action_adversary(grad_v, B, ball_u)))
        channels["observation"].append(
            (adversary.observation_costate(grad_v, jac.da_dx, jac.dB_dx, u),
             ball_x,
             adversary.observation_adversary(grad_v, jac.da_dx, jac.dB_dx,
                                             u, ball_x)))
        channels["model"].append(
            (adversary.model_costate(grad_v, jac.da_dtheta, jac.dB_dtheta, u),
             box,
             adversary.model_adversary(grad_v, jac.da_dtheta, jac.dB_dtheta,
                                       u, box)))

    for name, batches in channels.items():
        count = 0
        for z, admissible, xi in batches:
            if isinstance(admissible, adversary.EnergyBall):
                assert np.all(np.linalg.norm(xi, axis=-1)
                              <= admissible.alpha * (1 + 1e-9)), name
            else:
                assert np.all(xi >= admissible.nu_min - 1e-12), name
                assert np.all(xi <= admissible.nu_max + 1e-12), name
            for i in range(z.shape[0]):
                if isinstance(admissible, adversary.EnergyBall):
                    samples = admissible.sample(rng, (n_mc,), z.shape[1])
                else:
                    samples = admissible.sample(rng, (n_mc,))
                obj = samples @ z[i]
                closed = xi[i] @ z[i]
                slack = 0.01 * max(obj.max() - obj.min(), 1e-12)
                assert closed <= obj.min() + slack, (name, i)
                count += 1
        assert count == 2 * per_system, name


# ---------------------------------------------------------------------------
# 3. discounted LQR against a Riccati oracle


@pytest.fixture(scope="session")
def lqr_run(tmp_path_factory):
    cfg = config.load(CONFIG_DIR / "double_integrator_lqr.yaml")
    out = tmp_path_factory.mktemp("lqr")
    result = fvi.train(cfg, out)
    ens, _ = value_net.load_checkpoint(result.checkpoint_path)
    return cfg, result, ens


def test_03_lqr_value_and_gain_match_riccati_oracle(lqr_run):
    """Double integrator with quadratic action cost and no adversary: the
    fitted value matches the discounted Riccati value within 5% relative
    on 100 random states of the training domain, and the linear gain
    implied by the greedy policy matches the Riccati gain within 10%."""
    cfg, _, ens = lqr_run
    prob = fvi.build_problem(cfg)

    a_mat = np.array([[0.0, 1.0], [0.0, 0.0]])
    b_mat = np.array([[0.0], [1.0]])
    x_chk = np.random.default_rng(3).uniform(-2.0, 2.0, size=(16, 2))
    assert np.allclose(prob.model.drift(x_chk), x_chk @ a_mat.T, atol=1e-12)
    assert np.allclose(prob.model.control_matrix(x_chk),
                       np.broadcast_to(b_mat, (16, 2, 1)), atol=1e-12)

    q_mat = np.diag(cfg.reward.q_diag)
    r_eff = (cfg.cost.cost_scale / cfg.cost.action_scale) * np.diag(
        cfg.cost.r_diag)
    p_mat, k_oracle = riccati_oracle(a_mat, b_mat, q_mat, r_eff,
                                     rho=cfg.train.rho)

    x = prob.model.sample_states(100, np.random.default_rng(7))
    v_fit = ens.value(x)
    v_ric = -np.einsum("ni,ij,nj->n", x, p_mat, x)
    rel = np.abs(v_fit - v_ric) / np.abs(v_ric)
    assert np.max(rel) < 0.05, float(np.max(rel))

    u = fvi.greedy_action(prob, ens, x)
    k_fit, *_ = np.linalg.lstsq(-x, u, rcond=None)
    assert np.all(np.abs(k_fit.T - k_oracle) <= 0.10 * np.abs(k_oracle)), \
        (k_fit.T, k_oracle)


# ---------------------------------------------------------------------------
# 4. n-step targets against dense quadrature


def test_04_value_targets_match_dense_quadrature_oracle():
    """compute_value_targets agrees to relative 1e-3 with a dense
    double-integral quadrature (ten sub-steps per dt, no recursion) on 50
    random pendulum states."""
    prob = fvi.build_problem(config.ExperimentConfig())
    ens = ValueEnsemble(prob.fm, prob.model.x_des, NetConfig(),
                        rng=np.random.default_rng(404))
    x0 = prob.model.sample_states(50, np.random.default_rng(44))
    batch = fvi.compute_value_targets(prob, ens, x0)
    for i in range(x0.shape[0]):
        ref = dense_target_oracle(prob, ens, x0[i], substeps=10)
        rel = abs(batch.targets[i] - ref) / max(abs(ref), 1e-9)
        assert rel < 1e-3, (i, batch.targets[i], ref)


# ---------------------------------------------------------------------------
# 5/6. pendulum swing-up and worst-case robustness (shared trainings)


@pytest.fixture(scope="session")
def robustness_runs(tmp_path_factory):
    """Five seeds each of nominal and adversarial pendulum training, then
    30-episode evaluations without disturbance and under the worst-case
    state disturbance at the training amplitude."""
    base = config.ExperimentConfig.from_dict({
        "system": "pendulum",
        "seed": 0,
        "train": {"iterations": 60, "eval_every": 60, "eval_episodes": 4,
                  "resample": True},
    })
    eval_prob = fvi.build_problem(
        base.replace(adversary={"state": ROBUST_ALPHA, "modulate": False}))
    out_root = tmp_path_factory.mktemp("robustness")
    runs = {}
    for variant, cfg in (
            ("nominal", base),
            ("adversarial", base.replace(adversary={"state": ROBUST_ALPHA}))):
        for seed in range(5):
            result = fvi.train(cfg.replace(seed=seed),
                               out_root / f"{variant}_{seed}")
            ens, _ = value_net.load_checkpoint(result.checkpoint_path)
            clean = evaluation.evaluate_policy(
                eval_prob, ens, 30, np.random.default_rng(2000 + seed))
            worst = evaluation.evaluate_policy(
                eval_prob, ens, 30, np.random.default_rng(1000 + seed),
                disturbance_mode="worst_case")
            runs[variant, seed] = (result, clean, worst)
    return runs


def test_05_pendulum_swingup_reaches_full_success(robustness_runs):
    """Nominal training, seed 0: the greedy policy swings up from all 30
    downward starts (success rate exactly 1.0) and the run stays inside a
    30-minute training budget."""
    result, clean, _ = robustness_runs["nominal", 0]
    assert result.wall_time < 1800.0, result.wall_time
    assert clean.success_rate == 1.0, clean.success_rate


def test_06_adversarial_training_defends_worst_case_disturbance(
        robustness_runs):
    """Under the worst-case state disturbance at the training amplitude,
    the adversarially trained policies succeed at least as often as the
    nominally trained ones, aggregated over 5 seeds x 30 episodes."""
    rates = {
        variant: float(np.mean([
            robustness_runs[variant, seed][2].success_rate
            for seed in range(5)]))
        for variant in ("nominal", "adversarial")
    }
    assert rates["adversarial"] >= rates["nominal"], rates


# ---------------------------------------------------------------------------
# 7. longer target horizons converge in fewer iterations


@pytest.fixture(scope="session")
def horizon_sweep_runs(tmp_path_factory):
    """Pendulum trainings over three target-horizon settings x five seeds,
    with per-iteration evaluation so iterations-to-first-success is exact."""
    base = config.ExperimentConfig.from_dict({
        "system": "pendulum",
        "seed": 0,
        "train": {"iterations": 60, "eval_every": 1, "eval_episodes": 5,
                  "resample": True},
        "eval": {"duration": 6.0},
    })
    out_root = tmp_path_factory.mktemp("horizon_sweep")
    runs = {}
    for beta in SWEEP_BETAS:
        for seed in range(5):
            cfg = base.replace(train={"beta": beta}, seed=seed)
            runs[beta, seed] = fvi.train(cfg, out_root / f"beta{beta}_{seed}")
    return runs


def test_07_longer_target_horizons_converge_in_fewer_iterations(
        horizon_sweep_runs):
    """Mean iterations-to-first-success is non-increasing as the target
    horizon grows (beta 1000 -> 30 -> 8 spans one step to about one second
    of lookahead), 5 seeds per setting, at most one inversion allowed.
    Runs that never reach success count as one past the iteration cap."""
    cap = 61
    means = []
    for beta in SWEEP_BETAS:
        its = [horizon_sweep_runs[beta, seed].iterations_to_success
               for seed in range(5)]
        means.append(float(np.mean([cap if v is None else v for v in its])))
    inversions = sum(means[i + 1] > means[i] + 1e-9 for i in range(2))
    assert inversions <= 1, means


# ---------------------------------------------------------------------------
# 8. value-network structure


def test_08_value_network_shape_and_gradient_guarantees():
    """On 10^4 random pendulum states: V <= 0 everywhere, analytic input
    gradients match central differences within 1e-4 relative, and both V
    and its gradient vanish exactly at the goal state."""
    prob = fvi.build_problem(config.ExperimentConfig())
    ens = ValueEnsemble(prob.fm, prob.model.x_des, NetConfig(),
                        rng=np.random.default_rng(808))
    x = prob.model.sample_states(10_000, np.random.default_rng(88))
    v, grad = ens.value_and_grad(x)
    assert np.all(v <= 0.0)

    h = 1e-5
    for i in range(x.shape[1]):
        xp = x.copy()
        xm = x.copy()
        xp[:, i] += h
        xm[:, i] -= h
        fd = (ens.value(xp) - ens.value(xm)) / (2.0 * h)
        rel = np.abs(fd - grad[:, i]) / (1.0 + np.abs(fd))
        assert np.max(rel) < 1e-4, (i, float(np.max(rel)))

    v0, g0 = ens.value_and_grad(prob.model.x_des.reshape(1, -1))
    assert v0[0] == 0.0
    assert np.all(g0 == 0.0)


# ---------------------------------------------------------------------------
# 9. zero-amplitude adversary reduces to nominal training


def _curve_rows_without_wall_time(path):
    lines = pathlib.Path(path).read_text().splitlines()
    wall = lines[1].split(",").index("wall_time")
    return [[cell for j, cell in enumerate(row.split(",")) if j != wall]
            for row in lines[2:]]


def test_09_zero_amplitude_adversary_reduces_to_nominal(tmp_path):
    """Training against an adversary whose admissible sets have zero
    amplitude is bit-identical to training with no adversary at the same
    seed: equal value targets on a shared batch, equal learning-curve rows
    (the wall-time column and the config-hash header line differ by
    construction), and bit-equal checkpoint parameters."""
    base = config.ExperimentConfig.from_dict({
        "system": "pendulum",
        "seed": 11,
        "train": {"iterations": 4, "n_samples": 192, "eval_every": 2,
                  "eval_episodes": 2},
        "fit": {"epochs": 4},
        "eval": {"duration": 4.0},
    })
    degenerate = base.replace(adversary={"state": 0.0, "action": 0.0})

    prob_n = fvi.build_problem(base)
    prob_d = fvi.build_problem(degenerate)
    ens = ValueEnsemble(prob_n.fm, prob_n.model.x_des, NetConfig(),
                        rng=np.random.default_rng(909))
    x0 = prob_n.model.sample_states(64, np.random.default_rng(9))
    t_nominal = fvi.compute_value_targets(prob_n, ens, x0)
    t_degenerate = fvi.compute_value_targets(prob_d, ens, x0,
                                             rng=np.random.default_rng(5))
    assert np.array_equal(t_nominal.targets, t_degenerate.targets)

    res_n = fvi.train(base, tmp_path / "nominal")
    res_d = fvi.train(degenerate, tmp_path / "degenerate")
    assert (_curve_rows_without_wall_time(res_n.curve_path)
            == _curve_rows_without_wall_time(res_d.curve_path))

    ens_n, _ = value_net.load_checkpoint(res_n.checkpoint_path)
    ens_d, _ = value_net.load_checkpoint(res_d.checkpoint_path)
    assert len(ens_n.params) == len(ens_d.params)
    for member_n, member_d in zip(ens_n.params, ens_d.params):
        assert set(member_n) == set(member_d)
        for key in member_n:
            assert np.array_equal(member_n[key], member_d[key]), key

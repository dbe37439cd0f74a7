import dataclasses
import math

import numpy as np
import pytest

from hjvi import evaluation, fvi, value_net
from hjvi.config import ExperimentConfig
from hjvi.dynamics import DynamicsError
from hjvi.evaluation import (RolloutTrace, ablation_sweep, apply_sweep_axis,
                             evaluate_policy, reward_stats, rollout,
                             start_states, success, write_episodes_csv,
                             write_trace_csv)

from conftest import make_ensemble


def make_trace(problem, x_rows, blown_up=False, duration=4.0):
    """Trace skeleton with prescribed states; rewards are irrelevant here."""
    dt = problem.cfg.train.dt
    k = round(duration / dt)
    x = np.tile(np.asarray(x_rows, dtype=float), (k + 1, 1)) \
        if np.ndim(x_rows) == 1 else np.asarray(x_rows, dtype=float)
    return RolloutTrace(
        t=np.arange(k + 1) * dt, x=x, u=np.zeros((k, problem.model.n_u)),
        r_state=np.zeros(k), r_action=np.zeros(k), disturbances={},
        rho=problem.cfg.train.rho, blown_up=blown_up)


class FailingModel:
    """Delegating wrapper whose step() raises after a set number of calls."""

    def __init__(self, model, fail_at):
        self._model = model
        self._fail_at = fail_at
        self._calls = 0

    def __getattr__(self, name):
        return getattr(self._model, name)

    def step(self, *args, **kwargs):
        self._calls += 1
        if self._calls >= self._fail_at:
            raise DynamicsError("forced blow-up")
        return self._model.step(*args, **kwargs)


def test_discounted_return_matches_scalar_recompute(pendulum_problem, rng):
    ens = make_ensemble(pendulum_problem, seed=1)
    x0 = start_states(pendulum_problem, 1, rng)[0]
    tr = rollout(pendulum_problem, ens, x0, duration=2.0)
    rho = tr.rho
    expect = 0.0
    for k in range(tr.n_steps):
        w = (math.exp(-rho * tr.t[k]) - math.exp(-rho * tr.t[k + 1])) / rho
        expect += w * (tr.r_state[k] - tr.r_action[k])
    assert tr.discounted_return() == pytest.approx(expect, abs=1e-10)
    assert tr.discounted_return() == pytest.approx(
        tr.state_return() - tr.action_return(), abs=1e-10)
    assert tr.action_return() >= 0.0


def test_rollout_shape_contract(pendulum_problem, rng):
    ens = make_ensemble(pendulum_problem, seed=1)
    x0 = start_states(pendulum_problem, 1, rng)[0]
    tr = rollout(pendulum_problem, ens, x0, duration=1.0)
    k = round(1.0 / pendulum_problem.cfg.train.dt)
    assert tr.x.shape == (k + 1, 2) and tr.u.shape == (k, 1)
    assert tr.t[0] == 0.0 and tr.t[-1] == pytest.approx(k * 0.02)
    assert tr.r_state.shape == (k,) and not tr.blown_up
    assert tr.disturbances == {}


def test_rollout_rejects_bad_mode(pendulum_problem, rng):
    ens = make_ensemble(pendulum_problem)
    x0 = np.array([1.0, 0.0])
    with pytest.raises(ValueError, match="disturbance_mode"):
        rollout(pendulum_problem, ens, x0, disturbance_mode="adversarial")
    with pytest.raises(ValueError, match="rng"):
        rollout(pendulum_problem, ens, x0, disturbance_mode="random")


def test_worst_case_applies_full_amplitude():
    cfg = ExperimentConfig.from_dict({"adversary": {"state": 0.3}})
    prob = fvi.build_problem(cfg)
    ens = make_ensemble(prob, seed=2)
    tr = rollout(prob, ens, np.array([2.0, 1.0]), duration=0.5,
                 disturbance_mode="worst_case")
    xi = tr.disturbances["state"]
    assert xi.shape == (tr.n_steps, 2)
    norms = np.linalg.norm(xi, axis=-1)
    assert np.allclose(norms, 0.3, atol=1e-12)  # unmodulated, full radius


def test_success_band_semantics(pendulum_problem):
    prob = pendulum_problem  # eps_pos 0.1 closed, eps_vel 0.5 strict, hold 2 s
    ok = make_trace(prob, [0.1, 0.49])
    assert success(prob, ok)
    fast = make_trace(prob, [0.0, 0.5])
    assert not success(prob, fast)  # velocity threshold is strict
    tilted = make_trace(prob, [0.11, 0.0])
    assert not success(prob, tilted)

    k = ok.x.shape[0] - 1
    early_wobble = np.zeros((k + 1, 2))
    early_wobble[: k // 4, 0] = 3.0  # excursion before the hold window
    assert success(prob, make_trace(prob, early_wobble))
    late_wobble = np.zeros((k + 1, 2))
    late_wobble[-3, 0] = 0.2
    assert not success(prob, make_trace(prob, late_wobble))

    wrapped = make_trace(prob, [2.0 * np.pi - 0.05, 0.0])
    assert success(prob, wrapped)  # angle error judged modulo 2 pi

    assert not success(prob, make_trace(prob, [0.0, 0.0], blown_up=True))


def test_blowup_truncates_episode(pendulum_problem, rng):
    prob = dataclasses.replace(
        pendulum_problem, model=FailingModel(pendulum_problem.model, 4))
    ens = make_ensemble(pendulum_problem, seed=1)
    tr = rollout(prob, ens, np.array([1.0, 0.0]), duration=2.0)
    assert tr.blown_up
    assert tr.n_steps == 4  # failed at the 4th step
    assert np.all(np.isnan(tr.x[-1]))  # the post-failure state is unknown
    assert np.all(np.isfinite(tr.x[:-1]))
    assert np.isfinite(tr.discounted_return())
    assert not success(prob, tr)


def test_worst_case_does_not_beat_nominal(tiny_cfg, tiny_run):
    robust_cfg = tiny_cfg.replace(adversary={"state": 0.3})
    prob = fvi.build_problem(robust_cfg)
    ens, _ = value_net.load_checkpoint(tiny_run.checkpoint_path)
    nominal = evaluate_policy(prob, ens, 8, np.random.default_rng(3),
                              disturbance_mode="none", duration=3.0)
    attacked = evaluate_policy(prob, ens, 8, np.random.default_rng(3),
                               disturbance_mode="worst_case", duration=3.0)
    assert attacked.mean_return <= nominal.mean_return + 0.5


def test_random_mode_is_seed_deterministic():
    cfg = ExperimentConfig.from_dict({"adversary": {"state": 0.2,
                                                    "action": 0.1}})
    prob = fvi.build_problem(cfg)
    ens = make_ensemble(prob, seed=0)
    a = evaluate_policy(prob, ens, 4, np.random.default_rng(7),
                        disturbance_mode="random", duration=1.0)
    b = evaluate_policy(prob, ens, 4, np.random.default_rng(7),
                        disturbance_mode="random", duration=1.0)
    assert np.array_equal(a.returns, b.returns)


def test_evaluate_policy_validates_episode_count(pendulum_problem, rng):
    ens = make_ensemble(pendulum_problem)
    with pytest.raises(ValueError, match="n_episodes"):
        evaluate_policy(pendulum_problem, ens, 0, rng)


def test_eval_stats_aggregates(pendulum_problem, rng):
    ens = make_ensemble(pendulum_problem, seed=1)
    stats, traces = evaluate_policy(pendulum_problem, ens, 5, rng,
                                    duration=1.0, collect_traces=True)
    assert stats.n_episodes == 5 and len(traces) == 5
    assert stats.mean_return == pytest.approx(float(np.mean(stats.returns)))
    assert stats.min_return <= stats.mean_return <= stats.max_return
    recomputed = [tr.discounted_return() for tr in traces]
    assert np.allclose(stats.returns, recomputed)


def test_reward_stats_fields(pendulum_problem, rng):
    ens = make_ensemble(pendulum_problem, seed=1)
    _, traces = evaluate_policy(pendulum_problem, ens, 6, rng, duration=1.0,
                                collect_traces=True)
    d = reward_stats(traces)
    ret = np.array([tr.discounted_return() for tr in traces])
    assert d["n_episodes"] == 6
    assert d["mean"] == pytest.approx(float(np.mean(ret)))
    assert d["band_low"] == pytest.approx(float(np.mean(ret) - 2 * np.std(ret)))
    assert d["band_high"] == pytest.approx(float(np.mean(ret) + 2 * np.std(ret)))
    assert d["p25"] <= d["p50"] <= d["p75"]
    assert d["mean"] == pytest.approx(d["state_mean"] - d["action_mean"])
    assert d["blowups"] == 0
    with pytest.raises(ValueError):
        reward_stats([])


def test_start_states_stay_near_rest(pendulum_problem):
    starts = start_states(pendulum_problem, 200, np.random.default_rng(4))
    again = start_states(pendulum_problem, 200, np.random.default_rng(4))
    assert np.array_equal(starts, again)
    from hjvi.dynamics import wrap_angle
    err = wrap_angle(starts[:, 0] - np.pi)
    assert np.all(np.abs(err) <= pendulum_problem.cfg.eval.jitter_pos + 1e-12)
    assert np.all(np.abs(starts[:, 1]) <= pendulum_problem.cfg.eval.jitter_vel)


def test_csv_emitters_are_byte_deterministic(pendulum_problem, rng, tmp_path):
    ens = make_ensemble(pendulum_problem, seed=1)
    stats, traces = evaluate_policy(pendulum_problem, ens, 3, rng,
                                    duration=0.5, collect_traces=True)
    for name, writer, arg in (("e", write_episodes_csv, stats),
                              ("t", write_trace_csv, traces[0])):
        p1, p2 = tmp_path / f"{name}1.csv", tmp_path / f"{name}2.csv"
        writer(p1, arg, config_hash="cafe")
        writer(p2, arg, config_hash="cafe")
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert lines[0] == "# config_hash=cafe"
    assert len((tmp_path / "e1.csv").read_text().splitlines()) == 2 + 3
    assert len((tmp_path / "t1.csv").read_text().splitlines()) \
        == 2 + traces[0].n_steps


def test_apply_sweep_axis_patches_config(pendulum_cfg):
    beta = apply_sweep_axis(pendulum_cfg, "n_step_beta", 7.5)
    assert beta.train.beta == 7.5
    adv = apply_sweep_axis(pendulum_cfg, "adversary_alpha", 0.4)
    assert adv.adversary.state == 0.4
    off = apply_sweep_axis(pendulum_cfg, "adversary_alpha", 0.0)
    assert off.adversary.state is None
    arch = apply_sweep_axis(pendulum_cfg, "architecture", "32x16")
    assert arch.net.hidden == [32, 16]
    with pytest.raises(ValueError, match="architecture"):
        apply_sweep_axis(pendulum_cfg, "architecture", "0x16")
    with pytest.raises(ValueError, match="unknown sweep axis"):
        apply_sweep_axis(pendulum_cfg, "dropout", 0.5)


def micro_cfg(tiny_cfg):
    return tiny_cfg.replace(
        train={"iterations": 2, "n_samples": 64, "eval_every": 2,
               "eval_episodes": 1, "beta": 1000.0},
        fit={"epochs": 2}, eval={"duration": 2.0})


def test_ablation_sweep_runs_and_resumes(tiny_cfg, tmp_path):
    cfg = micro_cfg(tiny_cfg)
    out = tmp_path / "sweep"
    report = ablation_sweep(cfg, "n_step_beta", [1000.0, 500.0], [0], out)
    assert [r["status"] for r in report["runs"]] == ["ok", "ok"]
    assert report["failures"] == []
    for value in (1000.0, 500.0):
        assert (out / f"n_step_beta={value}" / "seed=0" / "result.yaml").exists()
    curves = (out / "sweep_curves.csv").read_text().splitlines()
    assert curves[1].startswith("value,iteration,")
    # one curve row per value (iterations=2, eval_every=2 -> single eval row)
    assert len(curves) == 2 + 2
    summary = (out / "sweep_summary.csv").read_text().splitlines()
    assert len(summary) == 2 + 2

    again = ablation_sweep(cfg, "n_step_beta", [1000.0, 500.0], [0], out)
    assert [r["status"] for r in again["runs"]] == ["skipped", "skipped"]


def test_ablation_sweep_survives_single_failure(tiny_cfg, tmp_path,
                                                monkeypatch):
    cfg = micro_cfg(tiny_cfg)
    orig = fvi.train

    def flaky(train_cfg, out_dir, **kwargs):
        if train_cfg.train.beta == 500.0:
            raise RuntimeError("boom")
        return orig(train_cfg, out_dir, **kwargs)

    monkeypatch.setattr(fvi, "train", flaky)
    report = ablation_sweep(cfg, "n_step_beta", [1000.0, 500.0], [0],
                            tmp_path / "sweep")
    statuses = {r["value"]: r["status"] for r in report["runs"]}
    assert statuses["1000.0"] == "ok"
    assert statuses["500.0"].startswith("failed: boom")
    assert len(report["failures"]) == 1
    # aggregates only cover the completed runs
    summary = (tmp_path / "sweep" / "sweep_summary.csv").read_text()
    assert "500.0" not in summary.splitlines()[-1]


def test_read_curve_skips_comments(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("# config_hash=x\na,b\n1,2.5\n3,4.5\n")
    cols = evaluation._read_curve(p)
    assert cols == {"a": [1.0, 3.0], "b": [2.5, 4.5]}

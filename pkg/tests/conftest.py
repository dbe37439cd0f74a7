import numpy as np
import pytest

from hjvi import config, fvi, value_net


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def pendulum_cfg():
    return config.ExperimentConfig()


@pytest.fixture(scope="session")
def pendulum_problem(pendulum_cfg):
    return fvi.build_problem(pendulum_cfg)


def make_ensemble(problem, seed=0, **kwargs):
    cfg = value_net.NetConfig(**kwargs) if kwargs else value_net.NetConfig()
    return value_net.ValueEnsemble(problem.fm, problem.model.x_des, cfg,
                                   rng=np.random.default_rng(seed))


@pytest.fixture(scope="session")
def tiny_cfg():
    """Pendulum config small enough to train in a few seconds."""
    return config.ExperimentConfig.from_dict({
        "system": "pendulum",
        "seed": 11,
        "train": {"iterations": 4, "n_samples": 192, "eval_every": 2,
                  "eval_episodes": 2},
        "fit": {"epochs": 4},
        "eval": {"duration": 4.0},
    })


@pytest.fixture(scope="session")
def tiny_run(tiny_cfg, tmp_path_factory):
    """One shared miniature training run with its artifacts."""
    out = tmp_path_factory.mktemp("tiny_run")
    result = fvi.train(tiny_cfg, out)
    return result

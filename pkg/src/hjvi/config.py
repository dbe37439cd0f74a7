"""Experiment configuration: one human-readable YAML file per run.

Dataclasses mirror the file structure section by section. Loading fills
defaults and rejects unknown keys with the offending section named; saving
always materializes every field, so load -> save -> load is the identity and
the canonical dict is what gets hashed into every artifact this run produces.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import yaml


class ConfigError(ValueError):
    """Malformed experiment configuration."""


def _check_keys(section: str, d: dict, fields: set[str]) -> None:
    unknown = set(d) - fields
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in section {section!r}; "
            f"known keys: {sorted(fields)}")


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


@dataclasses.dataclass(frozen=True)
class CostConfig:
    family: str = "tanh"
    action_scale: float | list | None = None  # None -> the system's u_max
    cost_scale: float = 0.2
    action_shift: float | list = 0.0
    r_diag: list | None = None  # linear family only; None -> identity

    def __post_init__(self):
        if self.cost_scale <= 0.0:
            raise ConfigError("cost.cost_scale must be > 0")


@dataclasses.dataclass(frozen=True)
class AdversaryConfig:
    """Per-channel admissible sets; None disables a channel, 0 makes it a
    degenerate singleton {0} (useful for reduction tests)."""

    state: float | None = None
    action: float | None = None
    observation: float | None = None
    model_fraction: float | None = None
    model_params: list | None = None  # None -> all named parameters
    modulate: bool = True
    sigma: float = 1.0

    def __post_init__(self):
        for name in ("state", "action", "observation", "model_fraction"):
            v = getattr(self, name)
            if v is not None and v < 0.0:
                raise ConfigError(f"adversary.{name} must be >= 0")
        if self.sigma < 0.0:
            raise ConfigError("adversary.sigma must be >= 0")

    @property
    def any_active(self) -> bool:
        return any(v is not None for v in
                   (self.state, self.action, self.observation,
                    self.model_fraction))


@dataclasses.dataclass(frozen=True)
class FitConfig:
    epochs: int = 12
    batch_size: int = 256
    lr: float = 1e-3
    p_norm: float = 2.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("fit.epochs and fit.batch_size must be >= 1")
        if self.lr <= 0.0:
            raise ConfigError("fit.lr must be > 0")
        if self.p_norm < 1.0:
            raise ConfigError("fit.p_norm must be >= 1 (convex loss)")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    rho: float = 1.25          # continuous-time discount rate, 1/s
    dt: float = 0.02           # integration/control step, s
    beta: float = 2.5          # target-horizon decay rate, 1/s
    iterations: int = 60
    mode: str = "dp"           # dp (fixed dataset) | rtdp (replay buffer)
    n_samples: int = 1536
    resample: bool = False     # dp: redraw the dataset every iteration
    buffer_capacity: int = 20000
    n_rollouts: int = 16
    rollout_duration: float = 5.0
    explore_mag: float = 0.5   # rtdp exploration amplitude (action units)
    eval_every: int = 5
    eval_episodes: int = 10

    def __post_init__(self):
        for name in ("rho", "dt", "beta"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"train.{name} must be > 0")
        if self.mode not in ("dp", "rtdp"):
            raise ConfigError(f"train.mode must be 'dp' or 'rtdp', "
                              f"got {self.mode!r}")
        if self.iterations < 1 or self.n_samples < 1:
            raise ConfigError("train.iterations and train.n_samples "
                              "must be >= 1")
        if self.eval_every < 1 or self.eval_episodes < 0:
            raise ConfigError("train.eval_every must be >= 1 and "
                              "train.eval_episodes >= 0")

    @property
    def gamma(self) -> float:
        """Equivalent discrete discount exp(-rho dt)."""
        import numpy as np
        return float(np.exp(-self.rho * self.dt))

    @property
    def horizon(self) -> float:
        """Target rollout length T with e^{-beta T} = 1e-4."""
        import numpy as np
        return float(-np.log(1e-4) / self.beta)

    @property
    def horizon_steps(self) -> int:
        return max(1, round(self.horizon / self.dt))


@dataclasses.dataclass(frozen=True)
class NetSection:
    members: int = 2
    hidden: list = dataclasses.field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    eps_diag: float = 1e-3


@dataclasses.dataclass(frozen=True)
class RewardConfig:
    q_diag: list | None = None  # None -> per-system default weights


@dataclasses.dataclass(frozen=True)
class EvalConfig:
    duration: float = 10.0
    eps_pos: float = 0.1   # rad (closed threshold)
    eps_vel: float = 0.5   # rad/s (strict threshold)
    t_hold: float = 2.0    # s the tolerance band must hold at episode end
    jitter_pos: float = 0.1
    jitter_vel: float = 0.05
    disturbance_mode: str = "none"

    def __post_init__(self):
        if self.duration <= 0.0 or self.t_hold <= 0.0:
            raise ConfigError("eval.duration and eval.t_hold must be > 0")
        if self.t_hold > self.duration:
            raise ConfigError("eval.t_hold cannot exceed eval.duration")
        if self.disturbance_mode not in ("none", "worst_case", "random"):
            raise ConfigError(
                f"eval.disturbance_mode must be none|worst_case|random, "
                f"got {self.disturbance_mode!r}")


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    system: str = "pendulum"
    seed: int = 0
    model_overrides: dict = dataclasses.field(default_factory=dict)
    cost: CostConfig = dataclasses.field(default_factory=CostConfig)
    adversary: AdversaryConfig = dataclasses.field(default_factory=AdversaryConfig)
    fit: FitConfig = dataclasses.field(default_factory=FitConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    net: NetSection = dataclasses.field(default_factory=NetSection)
    reward: RewardConfig = dataclasses.field(default_factory=RewardConfig)
    eval: EvalConfig = dataclasses.field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config root must be a mapping")
        _check_keys("<root>", d, _field_names(ExperimentConfig))
        sections = {
            "cost": CostConfig, "adversary": AdversaryConfig,
            "fit": FitConfig, "train": TrainConfig, "net": NetSection,
            "reward": RewardConfig, "eval": EvalConfig,
        }
        kwargs: dict = {}
        for key, value in d.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be a mapping")
                _check_keys(key, value, _field_names(sections[key]))
                kwargs[key] = sections[key](**value)
            else:
                kwargs[key] = value
        return ExperimentConfig(**kwargs)

    def replace(self, **section_updates) -> "ExperimentConfig":
        """Functional update, e.g. cfg.replace(train={'beta': 5.0})."""
        d = self.to_dict()
        for key, update in section_updates.items():
            if isinstance(update, dict) and isinstance(d.get(key), dict):
                d[key].update(update)
            else:
                d[key] = update
        return ExperimentConfig.from_dict(d)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    try:
        return ExperimentConfig.from_dict(raw)
    except TypeError as exc:  # wrong value type for a dataclass field
        raise ConfigError(f"{path}: {exc}") from exc


def save(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True,
                       default_flow_style=False)

# tools/config.py
# Resolution order: dataclass defaults <- JSON file <- ``key.path=value`` overrides.
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Iterable

ALGORITHMS = ("IQL", "IQL_INTRINSIC", "ICQL")
BIAS_MODES = ("constant", "average")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


@dataclass
class EnvConfig:
    height: int = 41
    width: int = 10
    n_agents: int = 4
    episode_limit: int = 100
    slip: float = 0.5
    valley_reward: float = 5.0
    mountain_reward: float = 10.0
    obs_radius: int = 2


@dataclass
class LearningConfig:
    lr: float = 0.0005
    gamma: float = 0.99
    batch_size: int = 32
    buffer_size: int = 200
    target_sync: int = 200
    td_lambda: float = 0.8
    localmax_iterations: int = 1
    central_control: float = 0.5
    double_q: bool = True
    shared_batches: bool = False
    rms_alpha: float = 0.99
    rms_eps: float = 1e-5
    agent_hidden: int = 64
    central_hidden: int = 128


@dataclass
class ExplorationConfig:
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_horizon: int = 20000
    central_epsilon: bool = True


@dataclass
class IntrinsicConfig:
    sigma: float = 1.0
    alpha: float = 0.0002
    bias: float = 0.01
    reg: float = 1e-4
    bias_mode: str = "constant"


@dataclass
class RunConfig:
    seeds: list[int] = field(default_factory=lambda: [0])
    total_episodes: int = 20000
    eval_every: int = 200
    eval_episodes: int = 20
    checkpoint_every: int = 1000
    output_dir: str = "runs/icql"
    workers: int = 1
    float64: bool = False


@dataclass
class Config:
    algorithm: str = "ICQL"
    env: EnvConfig = field(default_factory=EnvConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    intrinsic: IntrinsicConfig = field(default_factory=IntrinsicConfig)
    run: RunConfig = field(default_factory=RunConfig)

    # Modes ----------------------------------------------------------------

    @property
    def central_control_probability(self) -> float:
        return self.learning.central_control if self.algorithm == "ICQL" else 0.0

    @property
    def trains_central(self) -> bool:
        return self.algorithm == "ICQL"

    @property
    def iql_reward_mode(self) -> str:
        return "env_plus_intrinsic" if self.algorithm == "IQL_INTRINSIC" else "env_only"

    @property
    def estimator_source(self) -> str:
        """Which value function provides the features of the uncertainty estimator."""
        return {"IQL": "none", "IQL_INTRINSIC": "agent", "ICQL": "central"}[self.algorithm]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def validate(self) -> "Config":
        e, l, x, i, r = self.env, self.learning, self.exploration, self.intrinsic, self.run
        checks = [
            ("algorithm", self.algorithm in ALGORITHMS, f"must be one of {ALGORITHMS}"),
            ("env.height", e.height >= 3, "needs at least 3 rows (valley, agent row, mountain)"),
            ("env.n_agents", e.n_agents >= 1, "must be >= 1"),
            ("env.width", e.width >= e.n_agents, "must be >= env.n_agents so agents start on distinct cells"),
            ("env.episode_limit", e.episode_limit >= 1, "must be >= 1"),
            ("env.slip", 0.0 <= e.slip <= 1.0, "must lie in [0, 1]"),
            ("env.obs_radius", e.obs_radius >= 0, "must be >= 0"),
            ("learning.lr", l.lr > 0, "must be > 0"),
            ("learning.gamma", 0.0 <= l.gamma <= 1.0, "must lie in [0, 1]"),
            ("learning.batch_size", l.batch_size >= 1, "must be >= 1"),
            ("learning.buffer_size", l.buffer_size >= l.batch_size, "must be >= learning.batch_size"),
            ("learning.target_sync", l.target_sync >= 1, "must be >= 1"),
            ("learning.td_lambda", 0.0 <= l.td_lambda <= 1.0, "must lie in [0, 1]"),
            ("learning.localmax_iterations", l.localmax_iterations >= 1, "must be >= 1"),
            ("learning.central_control", 0.0 <= l.central_control <= 1.0, "must lie in [0, 1]"),
            ("learning.rms_alpha", 0.0 <= l.rms_alpha < 1.0, "must lie in [0, 1)"),
            ("learning.rms_eps", l.rms_eps > 0, "must be > 0"),
            ("learning.agent_hidden", l.agent_hidden >= 1, "must be >= 1"),
            ("learning.central_hidden", l.central_hidden >= 1, "must be >= 1"),
            ("exploration.eps_start", 0.0 <= x.eps_start <= 1.0, "must lie in [0, 1]"),
            ("exploration.eps_end", 0.0 <= x.eps_end <= x.eps_start, "must lie in [0, eps_start]"),
            ("exploration.eps_horizon", x.eps_horizon >= 1, "must be >= 1"),
            ("intrinsic.sigma", i.sigma >= 0, "must be >= 0"),
            ("intrinsic.alpha", 0.0 <= i.alpha < 1.0, "must lie in [0, 1)"),
            ("intrinsic.bias", i.bias >= 0, "must be >= 0"),
            ("intrinsic.reg", i.reg > 0, "must be > 0"),
            ("intrinsic.bias_mode", i.bias_mode in BIAS_MODES, f"must be one of {BIAS_MODES}"),
            ("run.seeds", len(r.seeds) >= 1, "needs at least one seed"),
            ("run.total_episodes", r.total_episodes >= 0, "must be >= 0"),
            ("run.eval_every", r.eval_every >= 1, "must be >= 1"),
            ("run.eval_episodes", r.eval_episodes >= 1, "must be >= 1"),
            ("run.checkpoint_every", r.checkpoint_every >= 1, "must be >= 1"),
            ("run.workers", r.workers >= 1, "must be >= 1"),
        ]
        for key, ok, message in checks:
            if not ok:
                raise ConfigError(f"{key}: {message}")
        return self


def _merge(target: Any, values: dict[str, Any], prefix: str = "") -> None:
    """Write ``values`` into the dataclass ``target``, rejecting unknown keys."""
    known = {f.name: f for f in fields(target)}
    for key, value in values.items():
        path = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"{path}: unknown key")
        current = getattr(target, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected a mapping")
            _merge(current, value, prefix=f"{path}.")
        else:
            setattr(target, key, _coerce(path, current, value))


def _coerce(path: str, current: Any, value: Any) -> Any:
    # bool is checked first because it is an int subclass
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, list):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{path}: expected a list of integers, got {value!r}")
        return list(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported value {value!r}")


def _parse_override(item: str) -> dict[str, Any]:
    if "=" not in item:
        raise ConfigError(f"{item}: override must look like key.path=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    nested: dict[str, Any] = value
    for part in reversed(key.split(".")):
        nested = {part: nested}
    return nested


def parse_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> Config:
    """Resolve a :class:`Config` from defaults, an optional JSON file and overrides."""
    config = Config()
    if path is not None:
        path = Path(path)
        text = path.read_text(encoding="utf-8").strip()
        if text:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: not valid JSON ({e})") from e
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: top level must be an object")
            _merge(config, data)
    for item in overrides:
        _merge(config, _parse_override(item))
    return config.validate()


def config_from_dict(data: dict[str, Any]) -> Config:
    """Rebuild a config from its ``to_dict`` form (manifests, checkpoints)."""
    config = Config()
    _merge(config, data)
    return config.validate()

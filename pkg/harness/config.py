"""
Harness Configuration
Run parameters, their defaults, and provenance records for run directories.

Values are resolved as built-in defaults < JSON config file < CLI flags.
A run directory is named ``<env>_<system>_<hash>_seed<seed>`` where the
hash covers every parameter except the seed, so the seeds of one setting
share a hash.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

SYSTEMS = ("rh-reinforce", "h-reinforce", "h-dqn")
ENVIRONMENTS = ("corridor", "stochastic-corridor", "grid")
CONTROLLERS = ("optimal", "learned")

DEFAULT_EPISODES = {"corridor": 10_000, "stochastic-corridor": 10_000, "grid": 20_000}
CORRIDOR_EXPLORATION_EPISODES = 1_000

FILE_KEYS = (
    "learning_rate", "gru_units", "dense_units", "replay_size", "batch_size",
    "target_update_rate", "epsilon_start", "epsilon_end", "epsilon_decay_steps",
    "gamma_meta", "gamma_controller", "intrinsic_reward", "exploration_episodes",
    "episodes", "step_limit", "exploration_updates",
)


class ConfigError(Exception):
    """Raised for unknown configuration keys or invalid values."""


@dataclass(frozen=True)
class RunConfig:
    """
    Everything one training run depends on.

    ``episodes`` and ``exploration_episodes`` left as None take the
    environment's defaults: 10,000 / 10,000 / 20,000 episodes, and a
    1,000-episode random exploration phase for the REINFORCE systems on the
    deterministic corridor only. ``step_limit`` None keeps the
    environment's own budget.
    """

    env: str = "corridor"
    system: str = "rh-reinforce"
    seed: int = 0
    controller: str = "optimal"
    episodes: Optional[int] = None
    exploration_episodes: Optional[int] = None
    exploration_updates: bool = False
    step_limit: Optional[int] = None
    required_visits: int = 2
    learning_rate: float = 0.001
    gru_units: int = 64
    dense_units: Tuple[int, ...] = (16, 32)
    replay_size: int = 100_000
    batch_size: int = 64
    target_update_rate: float = 0.001
    epsilon_start: float = 1.0
    epsilon_end: float = 0.01
    epsilon_decay_steps: int = 15_000
    gamma_meta: float = 1.0
    gamma_controller: float = 0.9
    intrinsic_reward: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "dense_units", tuple(int(u) for u in self.dense_units))
        self.validate()

    def validate(self):
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown env {self.env!r}; choose from {', '.join(ENVIRONMENTS)}")
        if self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}; choose from {', '.join(SYSTEMS)}")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"unknown controller {self.controller!r}; choose from {', '.join(CONTROLLERS)}")
        for name in ("episodes", "exploration_episodes"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value}")
        for name in ("gru_units", "replay_size", "batch_size", "required_visits"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.step_limit is not None and self.step_limit < 1:
            raise ConfigError(f"step_limit must be positive, got {self.step_limit}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.target_update_rate <= 1.0:
            raise ConfigError("target_update_rate must lie in [0, 1]")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ConfigError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.epsilon_decay_steps < 0:
            raise ConfigError("epsilon_decay_steps must be non-negative")
        for name in ("gamma_meta", "gamma_controller"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")

    @property
    def resolved_episodes(self) -> int:
        return self.episodes if self.episodes is not None else DEFAULT_EPISODES[self.env]

    @property
    def resolved_exploration_episodes(self) -> int:
        if self.exploration_episodes is not None:
            return self.exploration_episodes
        if self.env == "corridor" and self.system in ("rh-reinforce", "h-reinforce"):
            return CORRIDOR_EXPLORATION_EPISODES
        return 0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["dense_units"] = list(self.dense_units)
        data["episodes"] = self.resolved_episodes
        data["exploration_episodes"] = self.resolved_exploration_episodes
        return data

    def config_hash(self) -> str:
        """SHA-256 over the canonical JSON of every setting except the seed."""
        data = self.to_dict()
        del data["seed"]
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:12]

    def run_dir_name(self) -> str:
        return f"{self.env}_{self.system}_{self.config_hash()}_seed{self.seed}"

    def provenance_record(self) -> Dict[str, Any]:
        """The record echoed into a run directory as config.json."""
        return {
            "run": self.run_dir_name(),
            "config_hash": self.config_hash(),
            "config": self.to_dict(),
        }

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        clean = {key: value for key, value in overrides.items() if value is not None}
        unknown = set(clean) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return replace(self, **clean)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            return cls(**dict(data))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a JSON object of hyperparameter overrides.

    Only the hyperparameter keys are accepted here; env, system and seed
    come from the command line.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - set(FILE_KEYS))
    if unknown:
        raise ConfigError(f"unknown keys in {path}: {unknown}")
    return data


def build_config(file_values: Optional[Mapping[str, Any]] = None, **flags: Any) -> RunConfig:
    """Combine defaults, config-file values and flags (flags win; None flags are ignored)."""
    merged: Dict[str, Any] = dict(file_values or {})
    merged.update({key: value for key, value in flags.items() if value is not None})
    return RunConfig.from_dict(merged)

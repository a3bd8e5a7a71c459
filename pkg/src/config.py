"""Configuration settings for the ambulance dispatch simulation and agents."""

import hashlib
import json
import math
import os
from dataclasses import dataclass, fields
from typing import Any, Dict, List, Optional, Tuple

from .constants import BASE_SEED_ENV_VAR, MINUTES_PER_DAY


class ConfigError(ValueError):
    """Raised for invalid, unknown or mistyped configuration values."""


def _flat_dict(config) -> Dict[str, Any]:
    """Return dataclass fields as a flat mapping with lower-case keys."""
    flat = {}
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = list(value)
        flat[f.name.lower()] = value
    return flat


def config_hash(flat_config: Dict[str, Any]) -> str:
    """Short, stable hash of a flat effective configuration."""
    payload = json.dumps(flat_config, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:10]


@dataclass
class SimConfig:
    """World parameterisation: geometry, rates, fleet and episode length."""

    # Geometry
    WORLD_SIZE_KM: float = 50.0
    N_DISPATCH_POINTS: int = 25
    DISPATCH_LAYOUT: str = "grid"  # "grid" or "random"
    N_HOSPITALS: int = 1

    # Fleet and demand
    N_AMBULANCES: int = 3
    N_INCIDENT_AREAS: int = 1
    N_EPOCHS_PER_DAY: int = 2
    INCIDENTS_PER_AMBULANCE_PER_DAY: float = 8.0
    INCIDENT_JITTER_KM: float = 2.0
    AMBULANCE_SPEED_KPH: float = 60.0
    ALLOCATE_WHILE_TRAVELLING: bool = False

    # Episode
    EPISODE_DURATION_DAYS: int = 365
    RANDOM_SEED: int = 42

    _DISPATCH_LAYOUTS = ("grid", "random")

    def __post_init__(self):
        """Validate configuration values."""
        self._validate_config()

    def _validate_config(self):
        """Validate configuration values."""
        if self.WORLD_SIZE_KM <= 0:
            raise ConfigError("WORLD_SIZE_KM must be positive")

        for name in ("N_DISPATCH_POINTS", "N_HOSPITALS", "N_AMBULANCES",
                     "N_INCIDENT_AREAS", "N_EPOCHS_PER_DAY", "EPISODE_DURATION_DAYS"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")

        if self.INCIDENTS_PER_AMBULANCE_PER_DAY <= 0:
            raise ConfigError("INCIDENTS_PER_AMBULANCE_PER_DAY must be positive")

        if self.INCIDENT_JITTER_KM < 0:
            raise ConfigError("INCIDENT_JITTER_KM cannot be negative")

        if self.AMBULANCE_SPEED_KPH <= 0:
            raise ConfigError("AMBULANCE_SPEED_KPH must be positive")

        if self.DISPATCH_LAYOUT not in self._DISPATCH_LAYOUTS:
            raise ConfigError(
                f"Unknown DISPATCH_LAYOUT '{self.DISPATCH_LAYOUT}'. "
                f"Valid layouts: {list(self._DISPATCH_LAYOUTS)}"
            )

        if self.DISPATCH_LAYOUT == "grid":
            side = math.isqrt(self.N_DISPATCH_POINTS)
            if side * side != self.N_DISPATCH_POINTS:
                raise ConfigError(
                    f"N_DISPATCH_POINTS ({self.N_DISPATCH_POINTS}) must be a perfect "
                    f"square for grid layout"
                )

    @property
    def incident_rate_per_min(self) -> float:
        """Fleet-wide incident arrival rate per simulated minute."""
        return self.N_AMBULANCES * self.INCIDENTS_PER_AMBULANCE_PER_DAY / MINUTES_PER_DAY

    @property
    def speed_km_per_min(self) -> float:
        return self.AMBULANCE_SPEED_KPH / 60.0

    @property
    def episode_minutes(self) -> int:
        return self.EPISODE_DURATION_DAYS * MINUTES_PER_DAY

    @property
    def observation_size(self) -> int:
        """Dispatch-point counts, awaiting ambulance x and y, time of day."""
        return self.N_DISPATCH_POINTS + 3

    def to_flat_dict(self) -> Dict[str, Any]:
        return _flat_dict(self)


@dataclass
class AgentConfig:
    """Deep Q agent configuration.

    The variant name selects which of the composable features (dueling head,
    noisy layers, prioritized replay, bagging ensemble) are switched on.
    """

    _VARIANT_MAP = {
        "random": {"learns": False, "dueling": False, "noisy": False, "prioritized": False, "bagging": False},
        "ddqn": {"learns": True, "dueling": False, "noisy": False, "prioritized": False, "bagging": False},
        "3dqn": {"learns": True, "dueling": True, "noisy": False, "prioritized": False, "bagging": False},
        "noisy_3dqn": {"learns": True, "dueling": True, "noisy": True, "prioritized": False, "bagging": False},
        "pr_3dqn": {"learns": True, "dueling": True, "noisy": False, "prioritized": True, "bagging": False},
        "pr_noisy_3dqn": {"learns": True, "dueling": True, "noisy": True, "prioritized": True, "bagging": False},
        "bagging_ddqn": {"learns": True, "dueling": False, "noisy": False, "prioritized": False, "bagging": True},
        "bagging_3dqn": {"learns": True, "dueling": True, "noisy": False, "prioritized": False, "bagging": True},
        "bagging_noisy_3dqn": {"learns": True, "dueling": True, "noisy": True, "prioritized": False, "bagging": True},
        "bagging_pr_noisy_3dqn": {"learns": True, "dueling": True, "noisy": True, "prioritized": True, "bagging": True},
    }
    _BAGGING_MEMBERS = 5
    _ENSEMBLE_ACTION_MODES = ("majority_vote", "random_member")

    VARIANT: str = "ddqn"

    # Network and optimiser
    HIDDEN_LAYERS: Tuple[int, ...] = (128, 128)
    NOISY_SIGMA_INIT: float = 0.5
    LEARNING_RATE: float = 1e-3
    ADAM_BETA1: float = 0.9
    ADAM_BETA2: float = 0.999
    ADAM_EPSILON: float = 1e-8
    MAX_GRAD_NORM: Optional[float] = None  # None disables clipping

    # Q-learning
    GAMMA: float = 0.99
    TARGET_SYNC_INTERVAL: int = 1000
    BATCH_SIZE: int = 64
    LEARN_EVERY: int = 1
    REWARD_SCALE: float = 100.0

    # Replay memory
    MEMORY_CAPACITY: int = 100_000
    PRIORITY_ALPHA: float = 0.6
    PRIORITY_BETA_START: float = 0.4
    PRIORITY_BETA_END: float = 1.0
    PRIORITY_EPSILON: float = 1e-5

    # Exploration
    EPSILON_START: float = 1.0
    EPSILON_DECAY: float = 0.97
    EPSILON_MIN: float = 0.02
    ENSEMBLE_ACTION_MODE: str = "majority_vote"

    def __post_init__(self):
        """Normalise the variant name and validate configuration."""
        self.VARIANT = self.VARIANT.lower().replace("-", "_").replace(" ", "_")
        self.HIDDEN_LAYERS = tuple(int(h) for h in self.HIDDEN_LAYERS)
        self._validate_config()

    def _validate_config(self):
        """Validate configuration values."""
        if self.VARIANT not in self._VARIANT_MAP:
            raise ConfigError(
                f"Unknown VARIANT '{self.VARIANT}'. "
                f"Valid variants: {list(self._VARIANT_MAP.keys())}"
            )

        if any(h < 1 for h in self.HIDDEN_LAYERS):
            raise ConfigError("HIDDEN_LAYERS sizes must be positive")

        if not 0.0 <= self.GAMMA <= 1.0:
            raise ConfigError("GAMMA must be in [0, 1]")

        if self.LEARNING_RATE < 0:
            raise ConfigError("LEARNING_RATE cannot be negative")

        if self.MAX_GRAD_NORM is not None and self.MAX_GRAD_NORM <= 0:
            raise ConfigError("MAX_GRAD_NORM must be positive or None")

        for name in ("TARGET_SYNC_INTERVAL", "BATCH_SIZE", "LEARN_EVERY", "MEMORY_CAPACITY"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")

        if self.REWARD_SCALE <= 0:
            raise ConfigError("REWARD_SCALE must be positive")

        if self.PRIORITY_ALPHA < 0:
            raise ConfigError("PRIORITY_ALPHA cannot be negative")

        if not 0.0 <= self.PRIORITY_BETA_START <= self.PRIORITY_BETA_END <= 1.0:
            raise ConfigError("PRIORITY_BETA_START/PRIORITY_BETA_END must satisfy 0 <= start <= end <= 1")

        if self.PRIORITY_EPSILON <= 0:
            raise ConfigError("PRIORITY_EPSILON must be positive")

        for name in ("EPSILON_START", "EPSILON_MIN"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")

        if self.EPSILON_MIN > self.EPSILON_START:
            raise ConfigError("EPSILON_MIN cannot exceed EPSILON_START")

        if not 0.0 < self.EPSILON_DECAY <= 1.0:
            raise ConfigError("EPSILON_DECAY must be in (0, 1]")

        if self.ENSEMBLE_ACTION_MODE not in self._ENSEMBLE_ACTION_MODES:
            raise ConfigError(
                f"Unknown ENSEMBLE_ACTION_MODE '{self.ENSEMBLE_ACTION_MODE}'. "
                f"Valid modes: {list(self._ENSEMBLE_ACTION_MODES)}"
            )

    def _variant_flags(self) -> dict:
        return self._VARIANT_MAP[self.VARIANT]

    @classmethod
    def variant_names(cls) -> List[str]:
        return list(cls._VARIANT_MAP.keys())

    @property
    def learns(self) -> bool:
        return self._variant_flags()["learns"]

    @property
    def dueling(self) -> bool:
        return self._variant_flags()["dueling"]

    @property
    def noisy(self) -> bool:
        return self._variant_flags()["noisy"]

    @property
    def prioritized(self) -> bool:
        return self._variant_flags()["prioritized"]

    @property
    def bagging(self) -> bool:
        return self._variant_flags()["bagging"]

    @property
    def n_ensemble(self) -> int:
        return self._BAGGING_MEMBERS if self.bagging else 1

    @property
    def uses_epsilon(self) -> bool:
        """Noisy and bagging variants explore without epsilon-greedy after warmup."""
        return self.learns and not (self.noisy or self.bagging)

    def to_flat_dict(self) -> Dict[str, Any]:
        return _flat_dict(self)


@dataclass
class HarnessConfig:
    """Training and evaluation protocol."""

    N_TRAIN_EPISODES: int = 50
    N_WARMUP_EPISODES: int = 10
    N_TEST_RUNS: int = 30
    PROFILE_EPISODE_DAYS: Optional[int] = None  # overrides SimConfig.EPISODE_DURATION_DAYS

    BASE_SEED: int = 0
    EVAL_SEED_OFFSET: int = 1_000_000
    EVAL_WORKERS: int = 1

    OUTPUT_DIR: str = "runs"
    RECORD_WALL_CLOCK: bool = False  # when off, wall_clock_s is written as 0.0
    SHOW_PROGRESS: bool = True
    RENDER_EVERY: int = 0  # render every N steps at DEBUG level; 0 disables

    def __post_init__(self):
        """Validate configuration values."""
        self._validate_config()

    def _validate_config(self):
        """Validate configuration values."""
        if self.N_TRAIN_EPISODES < 1:
            raise ConfigError("N_TRAIN_EPISODES must be at least 1")

        if not 0 <= self.N_WARMUP_EPISODES <= self.N_TRAIN_EPISODES:
            raise ConfigError("N_WARMUP_EPISODES must be in [0, N_TRAIN_EPISODES]")

        if self.N_TEST_RUNS < 1:
            raise ConfigError("N_TEST_RUNS must be at least 1")

        if self.PROFILE_EPISODE_DAYS is not None and self.PROFILE_EPISODE_DAYS < 1:
            raise ConfigError("PROFILE_EPISODE_DAYS must be positive or None")

        if self.EVAL_SEED_OFFSET < self.N_TRAIN_EPISODES + 1:
            raise ConfigError("EVAL_SEED_OFFSET must leave training seeds disjoint")

        if self.EVAL_WORKERS < 1:
            raise ConfigError("EVAL_WORKERS must be at least 1")

        if self.RENDER_EVERY < 0:
            raise ConfigError("RENDER_EVERY cannot be negative")

        if not self.OUTPUT_DIR:
            raise ConfigError("OUTPUT_DIR cannot be empty")

    @classmethod
    def from_environment(cls, **overrides) -> "HarnessConfig":
        """Build a config honouring the base-seed environment variable."""
        env_seed = os.environ.get(BASE_SEED_ENV_VAR)
        if env_seed is not None and "BASE_SEED" not in overrides:
            try:
                overrides["BASE_SEED"] = int(env_seed)
            except ValueError:
                raise ConfigError(f"{BASE_SEED_ENV_VAR} must be an integer, got '{env_seed}'")
        return cls(**overrides)

    def train_seed(self, episode: int) -> int:
        """Run seed of a 1-indexed training episode."""
        return self.BASE_SEED + episode

    def eval_seeds(self, n_runs: Optional[int] = None) -> List[int]:
        """Run seeds for evaluation, disjoint from every training seed."""
        n_runs = self.N_TEST_RUNS if n_runs is None else n_runs
        start = self.BASE_SEED + self.EVAL_SEED_OFFSET
        return [start + i for i in range(n_runs)]

    def to_flat_dict(self) -> Dict[str, Any]:
        return _flat_dict(self)


@dataclass
class FastHarnessConfig(HarnessConfig):
    """Desk-scale profile for acceptance runs."""

    N_TRAIN_EPISODES: int = 15
    N_WARMUP_EPISODES: int = 5
    N_TEST_RUNS: int = 10
    PROFILE_EPISODE_DAYS: Optional[int] = 30

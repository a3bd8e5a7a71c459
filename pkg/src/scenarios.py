"""Scenario presets and flat-key configuration loading."""

import logging
import typing
from dataclasses import dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from .config import (
    AgentConfig,
    ConfigError,
    FastHarnessConfig,
    HarnessConfig,
    SimConfig,
    config_hash,
)
from .constants import EFFECTIVE_CONFIG_FILE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scenario:
    """Named set of SimConfig overrides."""

    name: str
    description: str
    overrides: Dict[str, Any] = field(default_factory=dict)

    def sim_config(self, **extra) -> SimConfig:
        return SimConfig(**{**self.overrides, **extra})


SCENARIOS: Dict[str, Scenario] = {
    "scenario1": Scenario(
        "scenario1", "One incident area at any time of day, three ambulances",
        {"N_INCIDENT_AREAS": 1, "N_AMBULANCES": 3},
    ),
    "scenario2": Scenario(
        "scenario2", "Two incident areas at any time of day, six ambulances",
        {"N_INCIDENT_AREAS": 2, "N_AMBULANCES": 6},
    ),
    "scenario3": Scenario(
        "scenario3", "Three incident areas at any time of day, nine ambulances",
        {"N_INCIDENT_AREAS": 3, "N_AMBULANCES": 9},
    ),
}

DEFAULT_SCENARIO = "scenario1"


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ConfigError(f"Unknown scenario '{name}'. Known scenarios: {list(SCENARIOS)}")


@dataclass
class RunConfig:
    """Fully resolved configuration of one run."""

    scenario: str
    sim: SimConfig
    agent: AgentConfig
    harness: HarnessConfig

    def to_flat_dict(self) -> Dict[str, Any]:
        flat = {"scenario": self.scenario}
        flat.update(self.sim.to_flat_dict())
        flat.update(self.agent.to_flat_dict())
        flat.update(self.harness.to_flat_dict())
        return flat

    @property
    def hash(self) -> str:
        return config_hash(self.to_flat_dict())

    def run_dir_name(self, now: Optional[datetime] = None) -> str:
        now = now or datetime.now()
        return f"{now.strftime('%Y%m%d-%H%M%S')}-{self.hash}"


_CONFIG_CLASSES = {"sim": SimConfig, "agent": AgentConfig, "harness": HarnessConfig}


def _field_table() -> Dict[str, tuple]:
    """lower-case key -> (section, field name, annotation)"""
    table = {}
    for section, cls in _CONFIG_CLASSES.items():
        for f in fields(cls):
            table[f.name.lower()] = (section, f.name, f.type)
    return table


def _coerce(key: str, value: Any, annotation) -> Any:
    """Check a raw value against a field annotation; raise ConfigError on mismatch."""
    origin = typing.get_origin(annotation)

    if origin is Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if value is None:
            return None
        return _coerce(key, value, args[0])

    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"Config key '{key}' expects a list, got {type(value).__name__}")
        item_type = typing.get_args(annotation)[0]
        return tuple(_coerce(key, v, item_type) for v in value)

    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"Config key '{key}' expects true/false, got {value!r}")
        return value

    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"Config key '{key}' expects an integer, got {value!r}")
        return value

    if annotation is float:
        if isinstance(value, bool):
            raise ConfigError(f"Config key '{key}' expects a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        # YAML 1.1 reads exponent literals without a dot (1e-3) as strings
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(f"Config key '{key}' expects a number, got {value!r}")

    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"Config key '{key}' expects a string, got {value!r}")
        return value

    return value


def _read_config_file(path: Path) -> Dict[str, Any]:
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse config file {path}: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a flat mapping of keys")
    return data


def load_config(source: Optional[Union[str, Path]] = None, fast: bool = False,
                overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Resolve a preset name or flat YAML config file into a RunConfig.

    Args:
        source: Preset name (``scenario1``..``scenario3``), path to a YAML
            file, or None for the default preset
        fast: Use the desk-scale harness profile
        overrides: Extra flat keys applied after the file (e.g. from CLI flags)

    Returns:
        RunConfig with every field resolved

    Raises:
        ConfigError: unknown preset or key, type mismatch or invalid value
    """
    raw: Dict[str, Any] = {}
    if source is None:
        scenario_name = DEFAULT_SCENARIO
    elif str(source) in SCENARIOS:
        scenario_name = str(source)
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"Unknown scenario or missing config file: '{source}'")
        raw = _read_config_file(path)
        scenario_name = raw.pop("scenario", DEFAULT_SCENARIO)

    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key.lower()] = value

    scenario = get_scenario(scenario_name)
    table = _field_table()
    sections: Dict[str, Dict[str, Any]] = {"sim": dict(scenario.overrides), "agent": {}, "harness": {}}

    for key, value in raw.items():
        lowered = str(key).lower()
        if lowered not in table:
            raise ConfigError(f"Unknown config key '{key}'")
        section, name, annotation = table[lowered]
        sections[section][name] = _coerce(lowered, value, annotation)

    harness_cls = FastHarnessConfig if fast else HarnessConfig
    harness = harness_cls.from_environment(**sections["harness"])
    if harness.PROFILE_EPISODE_DAYS is not None:
        sections["sim"]["EPISODE_DURATION_DAYS"] = harness.PROFILE_EPISODE_DAYS

    run_config = RunConfig(
        scenario=scenario.name,
        sim=SimConfig(**sections["sim"]),
        agent=AgentConfig(**sections["agent"]),
        harness=harness,
    )
    logger.debug(f"[Config] Resolved {scenario.name} / {run_config.agent.VARIANT} (hash {run_config.hash})")
    return run_config


def write_effective_config(run_config: RunConfig, run_dir) -> Path:
    """Write every resolved field so the run can be reproduced with ``load_config``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / EFFECTIVE_CONFIG_FILE
    path.write_text(yaml.safe_dump(run_config.to_flat_dict(), sort_keys=False), encoding="utf-8")
    return path

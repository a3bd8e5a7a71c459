"""Tests for configuration dataclasses, scenario presets and config loading."""

import sys
from pathlib import Path

import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import (
    AgentConfig,
    ConfigError,
    FastHarnessConfig,
    HarnessConfig,
    SimConfig,
    config_hash,
)
from src.constants import BASE_SEED_ENV_VAR, EFFECTIVE_CONFIG_FILE
from src.scenarios import SCENARIOS, get_scenario, load_config, write_effective_config


# --- SimConfig ---


def test_sim_config_defaults():
    """SimConfig() 기본값이 기대한 값과 일치한다."""
    config = SimConfig()
    assert config.WORLD_SIZE_KM == 50.0
    assert config.N_DISPATCH_POINTS == 25
    assert config.N_AMBULANCES == 3
    assert config.EPISODE_DURATION_DAYS == 365
    assert config.observation_size == 28
    assert config.episode_minutes == 365 * 1440


def test_sim_config_incident_rate():
    config = SimConfig(N_AMBULANCES=6, INCIDENTS_PER_AMBULANCE_PER_DAY=4.0)
    assert config.incident_rate_per_min == pytest.approx(24 / 1440)
    assert SimConfig(AMBULANCE_SPEED_KPH=90.0).speed_km_per_min == pytest.approx(1.5)


def test_sim_config_grid_requires_square():
    """grid 배치에서는 배치 지점 수가 완전제곱수여야 한다."""
    with pytest.raises(ConfigError, match="perfect square"):
        SimConfig(N_DISPATCH_POINTS=24)
    SimConfig(N_DISPATCH_POINTS=24, DISPATCH_LAYOUT="random")


@pytest.mark.parametrize("field, value", [
    ("WORLD_SIZE_KM", 0.0),
    ("N_AMBULANCES", 0),
    ("INCIDENTS_PER_AMBULANCE_PER_DAY", 0.0),
    ("AMBULANCE_SPEED_KPH", -1.0),
    ("INCIDENT_JITTER_KM", -0.5),
    ("DISPATCH_LAYOUT", "hexagonal"),
])
def test_sim_config_rejects_invalid(field, value):
    with pytest.raises(ConfigError):
        SimConfig(**{field: value})


# --- AgentConfig ---


def test_agent_config_variant_names():
    names = AgentConfig.variant_names()
    assert len(names) == 10
    assert "random" in names and "bagging_pr_noisy_3dqn" in names


@pytest.mark.parametrize("name, expected", [
    ("bagging noisy 3dqn", "bagging_noisy_3dqn"),
    ("PR-3DQN", "pr_3dqn"),
    ("ddqn", "ddqn"),
])
def test_agent_config_normalises_variant(name, expected):
    """공백/하이픈/대소문자가 섞인 변형 이름을 정규화한다."""
    assert AgentConfig(VARIANT=name).VARIANT == expected


def test_agent_config_unknown_variant():
    with pytest.raises(ConfigError, match="Unknown VARIANT"):
        AgentConfig(VARIANT="rainbow")


@pytest.mark.parametrize("variant, dueling, noisy, prioritized, members, uses_epsilon", [
    ("ddqn", False, False, False, 1, True),
    ("3dqn", True, False, False, 1, True),
    ("noisy_3dqn", True, True, False, 1, False),
    ("pr_3dqn", True, False, True, 1, True),
    ("pr_noisy_3dqn", True, True, True, 1, False),
    ("bagging_ddqn", False, False, False, 5, False),
    ("bagging_pr_noisy_3dqn", True, True, True, 5, False),
])
def test_agent_config_feature_flags(variant, dueling, noisy, prioritized, members, uses_epsilon):
    config = AgentConfig(VARIANT=variant)
    assert config.learns
    assert config.dueling is dueling
    assert config.noisy is noisy
    assert config.prioritized is prioritized
    assert config.n_ensemble == members
    assert config.uses_epsilon is uses_epsilon


def test_random_variant_does_not_learn():
    config = AgentConfig(VARIANT="random")
    assert not config.learns
    assert not config.uses_epsilon


@pytest.mark.parametrize("overrides", [
    {"GAMMA": 1.5},
    {"BATCH_SIZE": 0},
    {"EPSILON_MIN": 0.5, "EPSILON_START": 0.1},
    {"EPSILON_DECAY": 0.0},
    {"PRIORITY_BETA_START": 0.9, "PRIORITY_BETA_END": 0.5},
    {"ENSEMBLE_ACTION_MODE": "weighted"},
    {"MAX_GRAD_NORM": 0.0},
])
def test_agent_config_rejects_invalid(overrides):
    with pytest.raises(ConfigError):
        AgentConfig(**overrides)


# --- HarnessConfig ---


def test_harness_defaults_match_protocol():
    """기본 프로토콜: 50 에피소드 학습, 10 워밍업, 30 평가."""
    config = HarnessConfig()
    assert config.N_TRAIN_EPISODES == 50
    assert config.N_WARMUP_EPISODES == 10
    assert config.N_TEST_RUNS == 30
    assert config.RECORD_WALL_CLOCK is False


def test_fast_profile():
    config = FastHarnessConfig()
    assert (config.N_TRAIN_EPISODES, config.N_WARMUP_EPISODES, config.N_TEST_RUNS) == (15, 5, 10)
    assert config.PROFILE_EPISODE_DAYS == 30
    assert config.RECORD_WALL_CLOCK is False


def test_train_and_eval_seeds_disjoint():
    config = HarnessConfig(BASE_SEED=7)
    train_seeds = {config.train_seed(e) for e in range(1, config.N_TRAIN_EPISODES + 1)}
    eval_seeds = config.eval_seeds()
    assert len(eval_seeds) == 30
    assert train_seeds.isdisjoint(eval_seeds)
    assert config.train_seed(1) == 8


def test_harness_rejects_warmup_longer_than_training():
    with pytest.raises(ConfigError):
        HarnessConfig(N_TRAIN_EPISODES=5, N_WARMUP_EPISODES=6)


def test_base_seed_from_environment(monkeypatch):
    monkeypatch.setenv(BASE_SEED_ENV_VAR, "123")
    assert HarnessConfig.from_environment().BASE_SEED == 123
    assert HarnessConfig.from_environment(BASE_SEED=5).BASE_SEED == 5


def test_base_seed_from_environment_rejects_text(monkeypatch):
    monkeypatch.setenv(BASE_SEED_ENV_VAR, "abc")
    with pytest.raises(ConfigError, match=BASE_SEED_ENV_VAR):
        HarnessConfig.from_environment()


def test_config_hash_is_stable():
    flat = SimConfig().to_flat_dict()
    assert config_hash(flat) == config_hash(dict(reversed(list(flat.items()))))
    assert config_hash(flat) != config_hash(SimConfig(N_AMBULANCES=4).to_flat_dict())


# --- Scenarios and load_config ---


def test_three_presets():
    assert list(SCENARIOS) == ["scenario1", "scenario2", "scenario3"]


@pytest.mark.parametrize("name, areas, ambulances", [
    ("scenario1", 1, 3),
    ("scenario2", 2, 6),
    ("scenario3", 3, 9),
])
def test_preset_values(name, areas, ambulances):
    """프리셋 시나리오의 사건 지역 수와 구급차 수를 확인한다."""
    run_config = load_config(name)
    assert run_config.scenario == name
    assert run_config.sim.N_INCIDENT_AREAS == areas
    assert run_config.sim.N_AMBULANCES == ambulances


def test_unknown_preset():
    with pytest.raises(ConfigError, match="Unknown scenario"):
        get_scenario("scenario9")
    with pytest.raises(ConfigError):
        load_config("scenario9")


def test_load_config_default_is_scenario1(monkeypatch):
    monkeypatch.delenv(BASE_SEED_ENV_VAR, raising=False)
    run_config = load_config()
    assert run_config.scenario == "scenario1"
    assert run_config.harness.BASE_SEED == 0


def test_load_config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "scenario: scenario2\n"
        "variant: pr_3dqn\n"
        "learning_rate: 1e-4\n"
        "hidden_layers: [32, 16]\n"
        "n_train_episodes: 4\n"
        "n_warmup_episodes: 1\n"
        "incident_jitter_km: 1\n",
        encoding="utf-8",
    )
    run_config = load_config(path)
    assert run_config.scenario == "scenario2"
    assert run_config.sim.N_AMBULANCES == 6
    assert run_config.sim.INCIDENT_JITTER_KM == 1.0
    assert run_config.agent.VARIANT == "pr_3dqn"
    assert run_config.agent.LEARNING_RATE == pytest.approx(1e-4)
    assert run_config.agent.HIDDEN_LAYERS == (32, 16)
    assert run_config.harness.N_TRAIN_EPISODES == 4


def test_load_config_rejects_misspelled_key(tmp_path):
    """잘못된 키가 있으면 해당 키 이름을 포함한 오류를 낸다."""
    path = tmp_path / "bad.yaml"
    path.write_text("n_ambulence: 4\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="n_ambulence"):
        load_config(path)


@pytest.mark.parametrize("line", [
    "n_ambulances: three",
    "n_ambulances: 2.5",
    "allocate_while_travelling: 1",
    "hidden_layers: 64",
    "variant: 3",
])
def test_load_config_rejects_type_mismatch(tmp_path, line):
    path = tmp_path / "typed.yaml"
    path.write_text(line + "\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_config_rejects_non_mapping(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(path)


def test_load_config_missing_file():
    with pytest.raises(ConfigError):
        load_config("does/not/exist.yaml")


def test_fast_profile_shortens_episodes():
    run_config = load_config("scenario1", fast=True)
    assert run_config.sim.EPISODE_DURATION_DAYS == 30
    assert run_config.harness.N_TRAIN_EPISODES == 15


def test_overrides_skip_none():
    run_config = load_config("scenario1", overrides={"variant": None, "base_seed": 9})
    assert run_config.agent.VARIANT == "ddqn"
    assert run_config.harness.BASE_SEED == 9


def test_effective_config_reproduces_run(tmp_path):
    """effective_config.yaml을 다시 읽으면 동일한 설정(해시)이 된다."""
    original = load_config("scenario3", fast=True,
                           overrides={"variant": "bagging_3dqn", "base_seed": 11})
    path = write_effective_config(original, tmp_path)
    assert path.name == EFFECTIVE_CONFIG_FILE

    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    assert data["scenario"] == "scenario3"
    assert data["variant"] == "bagging_3dqn"

    reloaded = load_config(path)
    assert reloaded.to_flat_dict() == original.to_flat_dict()
    assert reloaded.hash == original.hash


def test_run_dir_name_contains_hash():
    run_config = load_config("scenario1")
    name = run_config.run_dir_name()
    assert name.endswith(run_config.hash)
    assert len(run_config.hash) == 10

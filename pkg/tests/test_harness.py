"""Tests for the training/evaluation protocol and result comparison."""

import hashlib
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.agents import Mode, build_agent, read_manifest
from src.config import AgentConfig, HarnessConfig, SimConfig, config_hash
from src.constants import CHECKPOINT_DIR, EVAL_COLUMNS, HISTORY_COLUMNS, HISTORY_FILE
from src.env import AmbulanceEnv
from src.harness import (
    ComparisonError,
    EvaluationResult,
    best_episode_from_history,
    compare,
    evaluate,
    load_evaluation,
    read_history,
    run_episode,
    train,
    write_evaluation,
    write_history,
)
from src.models import RunRecord
from src.scenarios import load_config


def _sim_config() -> SimConfig:
    return SimConfig(WORLD_SIZE_KM=10.0, N_DISPATCH_POINTS=4, N_AMBULANCES=2,
                     EPISODE_DURATION_DAYS=1, INCIDENT_JITTER_KM=1.0)


def _agent_config(variant="ddqn") -> AgentConfig:
    return AgentConfig(VARIANT=variant, HIDDEN_LAYERS=(16, 16), BATCH_SIZE=8,
                       MEMORY_CAPACITY=2_000, TARGET_SYNC_INTERVAL=20)


def _harness(**overrides) -> HarnessConfig:
    values = dict(SHOW_PROGRESS=False)
    values.update(overrides)
    return HarnessConfig(**values)


def _train(tmp_path, variant="ddqn", seed=0, **harness_overrides):
    config = _harness(**harness_overrides)
    env = AmbulanceEnv(_sim_config())
    agent = build_agent(_agent_config(variant), env.config, seed=seed,
                        warmup_episodes=config.N_WARMUP_EPISODES)
    return agent, train(env, agent, config, tmp_path)


def _record(episode, call_to_arrival):
    return RunRecord(episode=episode, total_reward=-call_to_arrival ** 2,
                     mean_call_to_arrival=call_to_arrival, mean_assign_to_arrival=call_to_arrival,
                     total_calls=10, fraction_met=1.0, epsilon=0.0)


def _result(name, values, scenario="scenario1", seeds=None, sim_hash=None):
    seeds = list(range(len(values))) if seeds is None else seeds
    return EvaluationResult(agent_name=name, scenario=scenario, seeds=seeds,
                            records=[_record(i + 1, v) for i, v in enumerate(values)],
                            sim_config_hash=sim_hash)


def _file_digests(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(Path(directory).iterdir())}


# --- run_episode ---


def test_greedy_episode_does_not_touch_memory():
    env = AmbulanceEnv(_sim_config())
    agent = build_agent(_agent_config(), env.config)
    outcome = run_episode(env, agent, seed=3, mode=Mode.GREEDY)
    assert len(agent.memory) == 0
    assert outcome.steps > 0
    assert outcome.total_calls >= len(outcome.call_to_arrival_times)


def test_train_episode_pushes_every_step():
    env = AmbulanceEnv(_sim_config())
    agent = build_agent(_agent_config(), env.config)
    agent.begin_episode(1, 1)
    outcome = run_episode(env, agent, seed=3, mode=Mode.TRAIN)
    assert len(agent.memory) == outcome.steps


# --- training ---


def test_default_protocol_history(tmp_path):
    """기본 프로토콜: 50 에피소드, 처음 10개는 epsilon = 1."""
    agent, result = _train(tmp_path)

    assert [r.episode for r in result.history] == list(range(1, 51))
    epsilons = [r.epsilon for r in result.history]
    assert epsilons[:10] == [1.0] * 10
    assert epsilons[10] == pytest.approx(0.97)
    assert all(e < 1.0 for e in epsilons[10:])

    frame = pd.read_csv(tmp_path / HISTORY_FILE)
    assert list(frame.columns) == HISTORY_COLUMNS
    assert len(frame) == 50
    assert (frame.wall_clock_s == 0.0).all()
    assert (frame.total_reward <= 0).all()


def test_best_checkpoint_matches_history(tmp_path):
    agent, result = _train(tmp_path, N_TRAIN_EPISODES=8, N_WARMUP_EPISODES=2)
    history = read_history(result.history_path)
    assert result.best_episode == best_episode_from_history(history)
    assert read_manifest(tmp_path / CHECKPOINT_DIR)["episode"] == result.best_episode
    assert agent.best_total_reward == max(r.total_reward for r in history)


def test_best_episode_from_history_prefers_earliest():
    history = [_record(1, 5.0), _record(2, 3.0), _record(3, 3.0)]
    assert best_episode_from_history(history) == 2
    assert best_episode_from_history([]) is None


def test_warmup_does_not_learn(tmp_path):
    """워밍업 에피소드에서는 전이를 모으지만 파라미터는 바뀌지 않는다."""
    env = AmbulanceEnv(_sim_config())
    config = _harness(N_TRAIN_EPISODES=3, N_WARMUP_EPISODES=3)
    agent = build_agent(_agent_config(), env.config, warmup_episodes=3)
    before = [p.copy() for p in agent.members[0].policy.parameters()]

    train(env, agent, config, tmp_path)

    assert len(agent.memory) > 0
    for b, p in zip(before, agent.members[0].policy.parameters()):
        np.testing.assert_array_equal(b, p)


def test_training_is_deterministic(tmp_path):
    _, first = _train(tmp_path / "a", variant="pr_3dqn", N_TRAIN_EPISODES=6, N_WARMUP_EPISODES=2)
    _, second = _train(tmp_path / "b", variant="pr_3dqn", N_TRAIN_EPISODES=6, N_WARMUP_EPISODES=2)
    pd.testing.assert_frame_equal(pd.read_csv(first.history_path), pd.read_csv(second.history_path))


def test_train_reports_each_episode(tmp_path, mocker):
    reporter = mocker.Mock()
    env = AmbulanceEnv(_sim_config())
    config = _harness(N_TRAIN_EPISODES=4, N_WARMUP_EPISODES=1)
    agent = build_agent(_agent_config("random"), env.config, warmup_episodes=1)
    train(env, agent, config, tmp_path, reporter=reporter)
    assert reporter.report_episode.call_count == 4
    first_record, first_saved = reporter.report_episode.call_args_list[0].args
    assert first_record.episode == 1
    assert first_saved is True


# --- evaluation ---


@pytest.fixture
def trained_run(tmp_path):
    _train(tmp_path, variant="3dqn", N_TRAIN_EPISODES=4, N_WARMUP_EPISODES=1)
    return tmp_path


def test_evaluate_thirty_runs(trained_run):
    """체크포인트 평가는 30회 실행 기록을 만들고 재실행해도 동일하다."""
    seeds = HarnessConfig().eval_seeds()
    checkpoint = trained_run / CHECKPOINT_DIR
    digests = _file_digests(checkpoint)

    env = AmbulanceEnv(_sim_config())
    first = evaluate(env, checkpoint, seeds, scenario="tiny")
    second = evaluate(env, checkpoint, seeds, scenario="tiny")

    assert len(first.records) == 30
    assert [r.episode for r in first.records] == list(range(1, 31))
    assert first.agent_name == "3dqn"
    assert first.sim_config_hash == config_hash(_sim_config().to_flat_dict())
    np.testing.assert_array_equal(first.metric("mean_call_to_arrival"),
                                  second.metric("mean_call_to_arrival"))
    np.testing.assert_array_equal(first.metric("total_reward"), second.metric("total_reward"))
    assert _file_digests(checkpoint) == digests


def test_parallel_evaluation_matches_serial(trained_run):
    seeds = HarnessConfig().eval_seeds(6)
    checkpoint = trained_run / CHECKPOINT_DIR
    env = AmbulanceEnv(_sim_config())
    serial = evaluate(env, checkpoint, seeds, workers=1)
    parallel = evaluate(env, checkpoint, seeds, workers=2)
    np.testing.assert_array_equal(serial.metric("total_reward"), parallel.metric("total_reward"))
    assert [r.episode for r in parallel.records] == list(range(1, 7))


def test_evaluate_requires_seeds(trained_run):
    with pytest.raises(ValueError):
        evaluate(AmbulanceEnv(_sim_config()), trained_run / CHECKPOINT_DIR, [])


def test_write_and_load_evaluation(tmp_path):
    result = _result("ddqn", [4.0, 6.0, 8.0, 10.0])
    write_evaluation(result, tmp_path)

    frame = pd.read_csv(tmp_path / "eval.csv")
    assert list(frame.columns) == EVAL_COLUMNS

    loaded = load_evaluation(tmp_path)
    assert loaded.agent_name == "ddqn"
    assert loaded.seeds == [0, 1, 2, 3]
    assert loaded.call_to_arrival_summary.median == pytest.approx(7.0)
    assert loaded.call_to_arrival_summary.maximum == 10.0
    assert loaded.sim_config_hash is None


def test_evaluation_files_keep_exact_values_and_sim_hash(tmp_path):
    sim_hash = config_hash(_sim_config().to_flat_dict())
    values = [245.96534899985855 ** 0.5, 0.1 + 0.2, 1 / 3]
    result = _result("ddqn", values, sim_hash=sim_hash)
    write_evaluation(result, tmp_path)

    loaded = load_evaluation(tmp_path)
    assert loaded.sim_config_hash == sim_hash
    assert loaded.metric("mean_call_to_arrival").tolist() == result.metric("mean_call_to_arrival").tolist()
    assert loaded.metric("total_reward").tolist() == result.metric("total_reward").tolist()


# --- history.csv ---


def test_history_round_trip_is_exact(tmp_path):
    """history.csv를 다시 읽어도 total_reward가 비트 단위로 같다."""
    rewards = [-245.96534899985855, -245.96534899985858, -(0.1 + 0.2), -1 / 3]
    history = [
        RunRecord(episode=i + 1, total_reward=r, mean_call_to_arrival=1 / 7,
                  mean_assign_to_arrival=2 / 7, total_calls=3, fraction_met=2 / 3, epsilon=0.97 ** 5)
        for i, r in enumerate(rewards)
    ]
    path = write_history(history, tmp_path / HISTORY_FILE)
    reloaded = read_history(path)

    assert [r.total_reward for r in reloaded] == rewards
    assert [r.epsilon for r in reloaded] == [0.97 ** 5] * 4
    assert reloaded[0].fraction_met == 2 / 3
    assert best_episode_from_history(reloaded) == best_episode_from_history(history) == 3
    # one ulp apart before and after reload
    assert reloaded[0].total_reward > reloaded[1].total_reward


def test_load_evaluation_missing(tmp_path):
    with pytest.raises(ComparisonError):
        load_evaluation(tmp_path)


# --- compare ---


def test_compare_median_difference():
    table = compare([_result("random", [20.0, 20.0, 20.0]), _result("ddqn", [10.0, 10.0, 10.0])])
    row = table.set_index("agent").loc["ddqn"]
    assert row.median_diff == -10.0
    assert row.n_runs == 3
    assert np.isnan(table.set_index("agent").loc["random"].p_value)


def test_compare_rank_sum_statistic():
    """완전히 분리된 표본: U = 0, 단측 정확 p = 1/20."""
    table = compare([_result("random", [4.0, 5.0, 6.0]), _result("3dqn", [1.0, 2.0, 3.0])])
    row = table.set_index("agent").loc["3dqn"]
    assert row.mannwhitney_u == 0.0
    assert row.p_value == pytest.approx(0.05)
    assert row["min"] == 1.0 and row["max"] == 3.0


def test_compare_other_metric_and_baseline():
    a = _result("ddqn", [1.0, 2.0, 3.0])
    b = _result("3dqn", [2.0, 3.0, 4.0])
    table = compare([a, b], baseline="ddqn", metric="mean_assign_to_arrival")
    assert table.set_index("agent").loc["3dqn"].median_diff == 1.0


@pytest.mark.parametrize("results, match", [
    ([_result("random", [1.0])], "at least two"),
    ([_result("random", [1.0]), _result("random", [2.0])], "Duplicate"),
    ([_result("random", [1.0]), _result("ddqn", [2.0], scenario="scenario2")], "scenarios"),
    ([_result("random", [1.0, 2.0]), _result("ddqn", [2.0, 3.0], seeds=[5, 6])], "seed"),
    ([_result("ddqn", [1.0]), _result("3dqn", [2.0])], "Baseline"),
])
def test_compare_rejects_incompatible_results(results, match):
    with pytest.raises(ComparisonError, match=match):
        compare(results)


def test_compare_rejects_same_scenario_name_with_different_sim_config():
    """시나리오 이름이 같아도 시뮬레이션 설정 해시가 다르면 비교하지 않는다."""
    random_hash = config_hash(_sim_config().to_flat_dict())
    ddqn_hash = config_hash(SimConfig(WORLD_SIZE_KM=20.0, N_DISPATCH_POINTS=4, N_AMBULANCES=2,
                                      EPISODE_DURATION_DAYS=1).to_flat_dict())
    results = [_result("random", [2.0, 3.0], sim_hash=random_hash),
               _result("ddqn", [1.0, 2.0], sim_hash=ddqn_hash)]
    with pytest.raises(ComparisonError, match="simulation configs"):
        compare(results)


def test_compare_accepts_matching_sim_config_hash():
    sim_hash = config_hash(_sim_config().to_flat_dict())
    table = compare([_result("random", [2.0, 3.0], scenario="custom", sim_hash=sim_hash),
                     _result("ddqn", [1.0, 2.0], scenario="scenario1", sim_hash=sim_hash)])
    assert list(table.agent) == ["random", "ddqn"]


# --- end to end ---


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("RUN_SLOW_TESTS") != "1", reason="set RUN_SLOW_TESTS=1")
def test_ddqn_beats_random_on_fast_profile(tmp_path):
    run_config = load_config("scenario1", fast=True, overrides={"show_progress": False})
    env = AmbulanceEnv(run_config.sim)
    seeds = run_config.harness.eval_seeds()

    results = []
    for variant in ("random", "ddqn"):
        agent_config = AgentConfig(VARIANT=variant)
        agent = build_agent(agent_config, run_config.sim, seed=run_config.harness.BASE_SEED,
                            warmup_episodes=run_config.harness.N_WARMUP_EPISODES)
        result = train(env, agent, run_config.harness, tmp_path / variant)
        results.append(evaluate(env, result.checkpoint_dir, seeds, scenario="scenario1"))

    table = compare(results).set_index("agent")
    assert table.loc["ddqn"].median_diff < 0
    assert table.loc["ddqn"].p_value < 0.05

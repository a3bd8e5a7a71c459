"""Tests for the ambulance-rl command line."""

import json
import logging
import sys
from pathlib import Path

import pandas as pd
import pytest
import yaml
from click.testing import CliRunner

sys.path.insert(0, str(Path(__file__).parent.parent))

from main import cli, main
from src.constants import (
    BASE_SEED_ENV_VAR,
    CHECKPOINT_DIR,
    COMPARISON_FILE,
    EFFECTIVE_CONFIG_FILE,
    EVAL_FILE,
    HISTORY_FILE,
    MANIFEST_FILE,
)

TINY_CONFIG = {
    "scenario": "scenario1",
    "world_size_km": 10,
    "n_dispatch_points": 4,
    "n_ambulances": 2,
    "episode_duration_days": 1,
    "hidden_layers": [16, 16],
    "batch_size": 8,
    "memory_capacity": 500,
    "n_train_episodes": 3,
    "n_warmup_episodes": 1,
    "n_test_runs": 3,
}

# fast profile sizes (15 train / 5 warmup / 10 test) with one-day episodes
FAST_TINY_CONFIG = {
    **{k: v for k, v in TINY_CONFIG.items()
       if k not in ("n_train_episodes", "n_warmup_episodes", "n_test_runs")},
    "profile_episode_days": 1,
}


@pytest.fixture(autouse=True)
def _reset_logging(monkeypatch):
    monkeypatch.delenv(BASE_SEED_ENV_VAR, raising=False)
    yield
    # setup_logging points the root logger at the runner's captured stdout
    logging.getLogger().handlers.clear()


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_CONFIG), encoding="utf-8")
    return path


def _invoke(*args):
    result = CliRunner().invoke(cli, ["--no-color", *args])
    assert result.exit_code == 0, result.output
    return result


def _train(config_path, output_dir, *extra):
    _invoke("train", "--config", str(config_path), "--output-dir", str(output_dir), "--no-progress", *extra)
    run_dirs = [p for p in Path(output_dir).iterdir() if p.is_dir()]
    assert len(run_dirs) == 1
    return run_dirs[0]


# --- list-scenarios / render-demo ---


def test_list_scenarios():
    result = _invoke("list-scenarios")
    lines = [line for line in result.output.splitlines() if line.startswith("scenario")]
    assert len(lines) == 3
    assert "n_ambulances=3" in lines[0]
    assert "n_incident_areas=3" in lines[2]


def test_render_demo():
    result = _invoke("render-demo", "--steps", "2", "--seed", "1")
    assert "Clock:" in result.output
    assert "step 1: dispatch point" in result.output


# --- train / test / compare ---


def test_train_writes_run_directory(tiny_config, tmp_path):
    """train은 기록, 유효 설정, 체크포인트를 실행 디렉터리에 남긴다."""
    run_dir = _train(tiny_config, tmp_path / "runs", "--agent", "3dqn")

    history = pd.read_csv(run_dir / HISTORY_FILE)
    assert list(history.episode) == [1, 2, 3]

    effective = yaml.safe_load((run_dir / EFFECTIVE_CONFIG_FILE).read_text(encoding="utf-8"))
    assert effective["variant"] == "3dqn"
    assert effective["n_dispatch_points"] == 4

    manifest = json.loads((run_dir / CHECKPOINT_DIR / MANIFEST_FILE).read_text(encoding="utf-8"))
    assert manifest["variant"] == "3dqn"
    assert not (run_dir / EVAL_FILE).exists()


def test_train_then_test(tiny_config, tmp_path):
    run_dir = _train(tiny_config, tmp_path / "runs", "--then-test")
    frame = pd.read_csv(run_dir / EVAL_FILE)
    assert len(frame) == 3
    assert list(frame.episode) == [1, 2, 3]


def test_fast_train_is_reproducible(tmp_path):
    """같은 시드의 --fast 학습은 바이트 단위로 같은 기록을 남긴다."""
    config_path = tmp_path / "fast.yaml"
    config_path.write_text(yaml.safe_dump(FAST_TINY_CONFIG), encoding="utf-8")

    first = _train(config_path, tmp_path / "first", "--fast", "--seed", "7")
    second = _train(config_path, tmp_path / "second", "--fast", "--seed", "7")

    history = pd.read_csv(first / HISTORY_FILE)
    assert list(history.episode) == list(range(1, 16))
    assert (history.wall_clock_s == 0.0).all()
    assert (first / HISTORY_FILE).read_bytes() == (second / HISTORY_FILE).read_bytes()

    effective = yaml.safe_load((first / EFFECTIVE_CONFIG_FILE).read_text(encoding="utf-8"))
    assert effective["n_train_episodes"] == 15
    assert effective["episode_duration_days"] == 1


def test_train_reports_run_setup_and_artifacts(tiny_config, tmp_path):
    result = CliRunner().invoke(cli, ["--no-color", "train", "--config", str(tiny_config),
                                      "--output-dir", str(tmp_path / "runs"), "--no-progress", "--then-test"])
    assert result.exit_code == 0, result.output

    assert "4 dispatch points, 2 ambulances" in result.output
    assert "Profile: 3 episodes (1 warmup)" in result.output
    for name in (HISTORY_FILE, CHECKPOINT_DIR, EVAL_FILE, "summary.json"):
        assert f"{name}: written" in result.output
    assert ": missing" not in result.output


def test_test_command_uses_effective_config(tiny_config, tmp_path):
    run_dir = _train(tiny_config, tmp_path / "runs")
    out_dir = tmp_path / "eval"
    _invoke("test", "--checkpoint", str(run_dir / CHECKPOINT_DIR), "--runs", "2", "--output-dir", str(out_dir))

    frame = pd.read_csv(out_dir / EVAL_FILE)
    assert len(frame) == 2
    summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["agent"] == "ddqn"
    assert summary["scenario"] == "scenario1"


def test_compare_command(tiny_config, tmp_path):
    """무작위 기준선과 학습 에이전트의 평가 결과를 비교표로 쓴다."""
    random_dir = _train(tiny_config, tmp_path / "random", "--agent", "random", "--then-test")
    ddqn_dir = _train(tiny_config, tmp_path / "ddqn", "--agent", "ddqn", "--then-test")

    out_dir = tmp_path / "comparison"
    result = _invoke("compare", str(random_dir), str(ddqn_dir), "--output-dir", str(out_dir))

    table = pd.read_csv(out_dir / COMPARISON_FILE)
    assert list(table.agent) == ["random", "ddqn"]
    assert table.p_value.isna().tolist() == [True, False]
    assert "median_diff" in result.output


def test_base_seed_from_environment(tiny_config, tmp_path, monkeypatch):
    monkeypatch.setenv(BASE_SEED_ENV_VAR, "42")
    run_dir = _train(tiny_config, tmp_path / "runs")
    effective = yaml.safe_load((run_dir / EFFECTIVE_CONFIG_FILE).read_text(encoding="utf-8"))
    assert effective["base_seed"] == 42


def test_seed_flag_overrides_environment(tiny_config, tmp_path, monkeypatch):
    monkeypatch.setenv(BASE_SEED_ENV_VAR, "42")
    run_dir = _train(tiny_config, tmp_path / "runs", "--seed", "5")
    effective = yaml.safe_load((run_dir / EFFECTIVE_CONFIG_FILE).read_text(encoding="utf-8"))
    assert effective["base_seed"] == 5


# --- main() exit status ---


def test_main_success():
    assert main(["--no-color", "list-scenarios"]) == 0


def test_main_unknown_command():
    assert main(["--no-color", "fly"]) != 0


def test_main_bad_config_key(tmp_path):
    """잘못된 설정 키는 0이 아닌 종료 코드로 끝난다."""
    path = tmp_path / "bad.yaml"
    path.write_text("n_ambulence: 4\n", encoding="utf-8")
    assert main(["--no-color", "train", "--config", str(path), "--output-dir", str(tmp_path)]) == 1


def test_main_reports_failed_command(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("n_ambulence: 4\n", encoding="utf-8")
    main(["--no-color", "train", "--config", str(path), "--output-dir", str(tmp_path)])
    assert "'train' run failed: ConfigError: Unknown config key 'n_ambulence'" in capsys.readouterr().out


def test_main_unknown_agent(tmp_path):
    assert main(["--no-color", "train", "--agent", "rainbow", "--output-dir", str(tmp_path)]) == 1


def test_main_missing_checkpoint(tmp_path):
    assert main(["--no-color", "test", "--checkpoint", str(tmp_path / "nope")]) != 0

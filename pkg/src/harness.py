"""Training and evaluation protocol.

Training runs warmup episodes with uniform random dispatch (transitions are
still collected), then learns after every step. The policy networks are
checkpointed whenever an episode beats the best total reward so far.
Evaluation replays the best checkpoint greedily over a block of run seeds
disjoint from the training seeds.
"""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import mannwhitneyu
from tqdm import tqdm

from .agents import BaseAgent, Mode, load_agent, read_manifest
from .config import HarnessConfig, SimConfig, config_hash
from .constants import (
    CHECKPOINT_DIR,
    EVAL_COLUMNS,
    EVAL_FILE,
    HISTORY_COLUMNS,
    HISTORY_FILE,
    SUMMARY_FILE,
)
from .env import AmbulanceEnv
from .models import BoxSummary, RunRecord, Transition

logger = logging.getLogger(__name__)


class ComparisonError(ValueError):
    """Raised when evaluation results cannot be compared."""


@dataclass
class EpisodeOutcome:
    total_reward: float
    call_to_arrival_times: List[float]
    assign_to_arrival_times: List[float]
    total_calls: int
    fraction_met: float
    steps: int
    mean_agreement: Optional[float] = None

    def to_record(self, episode: int, epsilon: float, wall_clock_s: float = 0.0) -> RunRecord:
        return RunRecord(
            episode=episode,
            total_reward=self.total_reward,
            mean_call_to_arrival=_mean(self.call_to_arrival_times),
            mean_assign_to_arrival=_mean(self.assign_to_arrival_times),
            total_calls=self.total_calls,
            fraction_met=self.fraction_met,
            epsilon=epsilon,
            wall_clock_s=wall_clock_s,
            mean_agreement=self.mean_agreement,
        )


@dataclass
class TrainingResult:
    history: List[RunRecord]
    checkpoint_dir: Path
    best_episode: Optional[int]
    history_path: Path


@dataclass
class EvaluationResult:
    """Per-run evaluation records of one agent plus box statistics."""

    agent_name: str
    scenario: str
    seeds: List[int]
    records: List[RunRecord]
    sim_config_hash: Optional[str] = None
    call_to_arrival_summary: BoxSummary = field(init=False)
    assign_to_arrival_summary: BoxSummary = field(init=False)

    def __post_init__(self):
        if not self.records:
            raise ValueError("EvaluationResult needs at least one run record")
        self.call_to_arrival_summary = BoxSummary.from_values(self.metric("mean_call_to_arrival"))
        self.assign_to_arrival_summary = BoxSummary.from_values(self.metric("mean_assign_to_arrival"))

    def metric(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def summary_dict(self) -> dict:
        return {
            "agent": self.agent_name,
            "scenario": self.scenario,
            "n_runs": len(self.records),
            "seeds": list(self.seeds),
            "sim_config_hash": self.sim_config_hash,
            "mean_call_to_arrival": self.call_to_arrival_summary.as_dict(),
            "mean_assign_to_arrival": self.assign_to_arrival_summary.as_dict(),
        }


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else 0.0


def run_episode(env: AmbulanceEnv, agent: BaseAgent, seed: int, mode: Mode = Mode.TRAIN,
                learn: bool = False, render_every: int = 0) -> EpisodeOutcome:
    """Play one episode; in train mode every transition is pushed to the agent's memory.

    Args:
        env: Environment (reset with ``seed``)
        agent: Acting agent
        seed: Run seed
        mode: Train (exploration, memory writes) or Greedy (evaluation)
        learn: Whether to run learning steps (train mode only)
        render_every: Log a render snapshot at DEBUG level every N steps
    """
    observation = env.reset(seed=seed)
    total_reward = 0.0
    steps = 0
    agreements = []
    pushes = mode is Mode.TRAIN and agent.memory is not None

    while True:
        action = agent.select_action(observation, mode)
        if agent.last_agreement is not None:
            agreements.append(agent.last_agreement)

        result = env.step(action)
        total_reward += result.reward
        steps += 1

        if pushes:
            agent.memory.push(Transition(
                observation=observation.features,
                action=action,
                reward=result.reward,
                next_observation=result.observation.features,
                terminal=result.terminal,
                truncated=result.truncated,
            ))
            if learn and steps % agent.config.LEARN_EVERY == 0:
                agent.learn_step()

        if render_every and steps % render_every == 0:
            logger.debug(f"[Harness] Step {steps}\n{env.render()}")

        observation = result.observation
        if result.terminal:
            break

    info = result.info
    return EpisodeOutcome(
        total_reward=total_reward,
        call_to_arrival_times=list(info.call_to_arrival_times),
        assign_to_arrival_times=list(info.assignment_to_arrival_times),
        total_calls=info.total_calls,
        fraction_met=info.fraction_demand_met,
        steps=steps,
        mean_agreement=_mean(agreements) if agreements else None,
    )


def write_history(history: Sequence[RunRecord], path) -> Path:
    path = Path(path)
    frame = pd.DataFrame([r.as_history_row() for r in history], columns=HISTORY_COLUMNS)
    frame.to_csv(path, index=False)
    return path


def read_history(path) -> List[RunRecord]:
    frame = pd.read_csv(path, float_precision="round_trip")
    return [
        RunRecord(
            episode=int(row.episode),
            total_reward=float(row.total_reward),
            mean_call_to_arrival=float(row.mean_call_to_arrival),
            mean_assign_to_arrival=float(row.mean_assign_to_arrival),
            total_calls=int(row.total_calls),
            fraction_met=float(row.fraction_met),
            epsilon=float(row.epsilon),
            wall_clock_s=float(row.wall_clock_s),
        )
        for row in frame.itertuples(index=False)
    ]


def best_episode_from_history(history: Sequence[RunRecord]) -> Optional[int]:
    """Episode with the maximum total reward; earliest wins ties."""
    best = None
    for record in history:
        if best is None or record.total_reward > best.total_reward:
            best = record
    return None if best is None else best.episode


def train(env: AmbulanceEnv, agent: BaseAgent, config: HarnessConfig, run_dir,
          reporter=None) -> TrainingResult:
    """Train an agent and keep the best checkpoint.

    ``history.csv`` is rewritten after every episode, so an aborted run
    leaves the history of all finished episodes behind.

    Args:
        env: Environment
        agent: Agent built with the same warmup length as ``config``
        config: Harness protocol
        run_dir: Output directory
        reporter: Optional RunReporter for per-episode log lines

    Returns:
        TrainingResult with history, checkpoint directory and best episode
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_dir = run_dir / CHECKPOINT_DIR
    history_path = run_dir / HISTORY_FILE

    n_episodes = config.N_TRAIN_EPISODES
    history: List[RunRecord] = []

    logger.info(
        f"[Harness] Training {agent.variant} for {n_episodes} episodes "
        f"({config.N_WARMUP_EPISODES} warmup)"
    )

    episodes = tqdm(range(1, n_episodes + 1), desc=f"Training {agent.variant}",
                    unit="episode", disable=not config.SHOW_PROGRESS)
    for episode in episodes:
        agent.begin_episode(episode, n_episodes)
        learn = episode > config.N_WARMUP_EPISODES

        started = time.perf_counter()
        outcome = run_episode(env, agent, config.train_seed(episode), Mode.TRAIN,
                              learn=learn, render_every=config.RENDER_EVERY)
        wall_clock = time.perf_counter() - started if config.RECORD_WALL_CLOCK else 0.0

        record = outcome.to_record(episode, agent.epsilon, wall_clock)
        history.append(record)
        write_history(history, history_path)

        saved = agent.save_best(record.total_reward, checkpoint_dir, episode)
        if reporter:
            reporter.report_episode(record, saved)
        if record.mean_agreement is not None:
            logger.debug(f"[Harness] Episode {episode} mean ensemble agreement {record.mean_agreement:.3f}")
        episodes.set_postfix(reward=f"{record.total_reward:,.0f}", eps=f"{agent.epsilon:.3f}")

    return TrainingResult(
        history=history,
        checkpoint_dir=checkpoint_dir,
        best_episode=agent.best_episode,
        history_path=history_path,
    )


def _evaluate_runs(sim_config: SimConfig, checkpoint_dir, seeds: Sequence[int],
                   record_wall_clock: bool, env: Optional[AmbulanceEnv] = None) -> List[RunRecord]:
    env = env or AmbulanceEnv(sim_config)
    agent = load_agent(checkpoint_dir, sim_config)

    records = []
    for seed in seeds:
        agent.reseed(seed)
        started = time.perf_counter()
        outcome = run_episode(env, agent, seed, Mode.GREEDY)
        wall_clock = time.perf_counter() - started if record_wall_clock else 0.0
        records.append(outcome.to_record(0, 0.0, wall_clock))
    return records


def evaluate(env: AmbulanceEnv, checkpoint_dir, seeds: Sequence[int], workers: int = 1,
             scenario: str = "custom", record_wall_clock: bool = False) -> EvaluationResult:
    """Greedy evaluation of a checkpoint over independent run seeds.

    Runs never learn or write memory. With ``workers > 1`` runs are spread
    over worker processes, each rebuilding the environment from its config;
    records are merged back in seed order.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("evaluate needs at least one run seed")

    agent_name = read_manifest(checkpoint_dir)["variant"]
    logger.info(f"[Harness] Evaluating {agent_name} over {len(seeds)} runs ({workers} worker(s))")

    if workers > 1:
        chunks = [list(c) for c in np.array_split(seeds, min(workers, len(seeds)))]
        parts = Parallel(n_jobs=len(chunks))(
            delayed(_evaluate_runs)(env.config, checkpoint_dir, [int(s) for s in chunk], record_wall_clock)
            for chunk in chunks
        )
        records = [r for part in parts for r in part]
    else:
        records = _evaluate_runs(env.config, checkpoint_dir, seeds, record_wall_clock, env=env)

    for index, record in enumerate(records, 1):
        record.episode = index

    return EvaluationResult(agent_name=agent_name, scenario=scenario, seeds=seeds, records=records,
                            sim_config_hash=config_hash(env.config.to_flat_dict()))


def write_evaluation(result: EvaluationResult, run_dir) -> Path:
    """Write ``eval.csv`` and ``summary.json``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.as_eval_row() for r in result.records], columns=EVAL_COLUMNS)
    frame.to_csv(run_dir / EVAL_FILE, index=False)
    (run_dir / SUMMARY_FILE).write_text(json.dumps(result.summary_dict(), indent=2), encoding="utf-8")
    logger.info(f"[Harness] Evaluation written to {run_dir}")
    return run_dir


def load_evaluation(run_dir) -> EvaluationResult:
    """Read back an evaluation written by ``write_evaluation``."""
    run_dir = Path(run_dir)
    summary_path = run_dir / SUMMARY_FILE
    eval_path = run_dir / EVAL_FILE
    if not summary_path.exists() or not eval_path.exists():
        raise ComparisonError(f"No evaluation results in {run_dir}")

    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    frame = pd.read_csv(eval_path, float_precision="round_trip")
    records = [
        RunRecord(
            episode=int(row.episode),
            total_reward=float(row.total_reward),
            mean_call_to_arrival=float(row.mean_call_to_arrival),
            mean_assign_to_arrival=float(row.mean_assign_to_arrival),
            total_calls=int(row.total_calls),
            fraction_met=float(row.fraction_met),
            epsilon=0.0,
            wall_clock_s=float(row.wall_clock_s),
        )
        for row in frame.itertuples(index=False)
    ]
    return EvaluationResult(
        agent_name=summary["agent"],
        scenario=summary["scenario"],
        seeds=[int(s) for s in summary["seeds"]],
        records=records,
        sim_config_hash=summary.get("sim_config_hash"),
    )


def compare(results: Sequence[EvaluationResult], baseline: str = "random",
            metric: str = "mean_call_to_arrival") -> pd.DataFrame:
    """Box statistics per agent and a one-sided rank-sum test against the baseline.

    The test alternative is that the agent's per-run metric is lower than
    the baseline's. The baseline row carries no test statistic. Result sets
    must share the simulation config hash; results written without one fall
    back to matching scenario names.
    """
    if len(results) < 2:
        raise ComparisonError("compare needs at least two result sets")

    names = [r.agent_name for r in results]
    if len(set(names)) != len(names):
        raise ComparisonError(f"Duplicate agents in comparison: {names}")
    hashes = {r.sim_config_hash for r in results}
    if None not in hashes:
        if len(hashes) != 1:
            described = {f"{r.agent_name} ({r.scenario})": r.sim_config_hash for r in results}
            raise ComparisonError(f"Results come from different simulation configs: {described}")
    elif len({r.scenario for r in results}) != 1:
        raise ComparisonError(f"Results come from different scenarios: {sorted({r.scenario for r in results})}")
    if any(list(r.seeds) != list(results[0].seeds) for r in results):
        raise ComparisonError("Results were evaluated on different seed lists")

    by_name = {r.agent_name: r for r in results}
    if baseline not in by_name:
        raise ComparisonError(f"Baseline agent '{baseline}' not among results {names}")

    base_values = by_name[baseline].metric(metric)
    base_median = float(np.median(base_values))

    rows = []
    for result in results:
        values = result.metric(metric)
        row = {"agent": result.agent_name, "n_runs": len(values)}
        row.update(BoxSummary.from_values(values).as_dict())
        row["median_diff"] = float(np.median(values)) - base_median
        if result.agent_name == baseline:
            row["mannwhitney_u"] = np.nan
            row["p_value"] = np.nan
        else:
            test = mannwhitneyu(values, base_values, alternative="less")
            row["mannwhitney_u"] = float(test.statistic)
            row["p_value"] = float(test.pvalue)
        rows.append(row)

    return pd.DataFrame(rows)

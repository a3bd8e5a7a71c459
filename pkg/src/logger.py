"""Console logging setup and banner reports for dispatch training and evaluation runs."""

import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional, Union

import colorlog

from .constants import LOG_FORMAT, DATE_FORMAT

LOG_COLORS = {
    'DEBUG': 'cyan',
    'INFO': 'green',
    'WARNING': 'yellow',
    'ERROR': 'red',
    'CRITICAL': 'red,bg_white',
}


def setup_logging(verbose: bool = False, use_colors: bool = True,
                  log_file: Optional[str] = None):
    """Point the root logger at stdout and, optionally, a plain-text log file.

    Args:
        verbose: Log at DEBUG instead of INFO (includes rendered env snapshots)
        use_colors: Colour console lines by level
        log_file: Optional log file path
    """
    level = logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger()
    root.setLevel(level)
    root.handlers.clear()

    console_handler = logging.StreamHandler(sys.stdout)
    if use_colors:
        console_handler.setFormatter(colorlog.ColoredFormatter(
            '%(log_color)s' + LOG_FORMAT, datefmt=DATE_FORMAT, log_colors=LOG_COLORS))
    else:
        console_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    root.addHandler(console_handler)

    if log_file:
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        root.addHandler(file_handler)


class RunReporter:
    """Banner-style log reports about training, evaluation and comparison runs."""

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.start_time = datetime.now()

    def report_start(self, command: str, run_config, run_dir: Union[str, Path]):
        """Report the run setup: scenario, agent, dispatch world and episode profile.

        Args:
            command: Subcommand being executed
            run_config: Resolved RunConfig
            run_dir: Output directory
        """
        sim, harness = run_config.sim, run_config.harness
        self.logger.info("=" * 60)
        self.logger.info(f"AMBULANCE DISPATCH RL - {command.upper()}")
        self.logger.info("=" * 60)
        self.logger.info(f"Scenario: {run_config.scenario} (config {run_config.hash})")
        self.logger.info(f"Agent: {run_config.agent.VARIANT}")
        self.logger.info(
            f"World: {sim.WORLD_SIZE_KM:g} km, {sim.N_DISPATCH_POINTS} dispatch points, "
            f"{sim.N_AMBULANCES} ambulances, {sim.N_INCIDENT_AREAS} incident area(s)"
        )
        self.logger.info(f"Episode length: {sim.EPISODE_DURATION_DAYS} day(s)")
        if command == "train":
            self.logger.info(
                f"Profile: {harness.N_TRAIN_EPISODES} episodes "
                f"({harness.N_WARMUP_EPISODES} warmup), base seed {harness.BASE_SEED}"
            )
        else:
            self.logger.info(f"Profile: {harness.N_TEST_RUNS} evaluation runs, base seed {harness.BASE_SEED}")
        self.logger.info(f"Run directory: {run_dir}")
        self.logger.info("-" * 60)

    def report_episode(self, record, saved: bool = False):
        """Report one finished training episode.

        Args:
            record: RunRecord of the episode
            saved: Whether the episode produced a new best checkpoint
        """
        marker = " [best]" if saved else ""
        self.logger.info(
            f"Episode {record.episode}: reward {record.total_reward:,.0f} | "
            f"call-to-arrival {record.mean_call_to_arrival:.1f} min | "
            f"assign-to-arrival {record.mean_assign_to_arrival:.1f} min | "
            f"met {record.fraction_met:.3f} | eps {record.epsilon:.3f}{marker}"
        )

    def report_training(self, history, best_episode: Optional[int], checkpoint_dir: str):
        """Report training statistics.

        Args:
            history: List of RunRecord objects
            best_episode: Episode index of the saved checkpoint
            checkpoint_dir: Checkpoint directory
        """
        self.logger.info("-" * 60)
        self.logger.info("TRAINING STATISTICS")
        self.logger.info("-" * 60)
        self.logger.info(f"Episodes: {len(history)}")
        if history:
            best = max(history, key=lambda r: r.total_reward)
            self.logger.info(f"Best total reward: {best.total_reward:,.0f} (episode {best.episode})")
            self.logger.info(f"Best mean call-to-arrival: {best.mean_call_to_arrival:.2f} min")
        self.logger.info(f"Checkpoint episode: {best_episode}")
        self.logger.info(f"Checkpoint: {checkpoint_dir}")

    def report_evaluation(self, result):
        """Report evaluation box statistics.

        Args:
            result: EvaluationResult
        """
        s = result.call_to_arrival_summary
        self.logger.info("-" * 60)
        self.logger.info(f"EVALUATION ({result.agent_name}, {len(result.records)} runs)")
        self.logger.info("-" * 60)
        self.logger.info(
            f"Call-to-arrival (min): min {s.minimum:.2f} | Q1 {s.q1:.2f} | "
            f"median {s.median:.2f} | Q3 {s.q3:.2f} | max {s.maximum:.2f}"
        )
        a = result.assign_to_arrival_summary
        self.logger.info(f"Assign-to-arrival median: {a.median:.2f} min")

    def report_comparison(self, table):
        """Report comparison table.

        Args:
            table: pandas DataFrame from harness.compare
        """
        self.logger.info("-" * 60)
        self.logger.info("COMPARISON")
        self.logger.info("-" * 60)
        for line in table.to_string(index=False).splitlines():
            self.logger.info(line)

    def report_completion(self, run_dir: Union[str, Path], artifacts: Iterable[str]):
        """Report which run artifacts were written and how long the run took.

        Args:
            run_dir: Directory holding the artifacts
            artifacts: File or directory names relative to run_dir
        """
        run_dir = Path(run_dir)
        elapsed = (datetime.now() - self.start_time).total_seconds()

        self.logger.info("-" * 60)
        self.logger.info("RUN COMPLETED")
        self.logger.info("-" * 60)
        for name in artifacts:
            path = run_dir / name
            status = "written" if path.exists() else "missing"
            self.logger.info(f"{name}: {status} ({path})")
        self.logger.info(f"Elapsed: {elapsed:.1f} s")
        self.logger.info("=" * 60)

    def report_error(self, error: Exception, command: Optional[str] = None):
        """Log a failed run as one line naming the command and the error."""
        where = f"'{command}' run" if command else "Run"
        self.logger.error(f"{where} failed: {type(error).__name__}: {error}")

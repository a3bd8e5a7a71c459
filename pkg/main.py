#!/usr/bin/env python3
"""Command-line entry point for ambulance dispatch reinforcement learning runs."""

import sys
from pathlib import Path
from typing import Optional, Sequence

import click

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from src.agents import Mode, RandomAgent, build_agent, read_manifest
from src.config import AgentConfig
from src.constants import (
    BASE_SEED_ENV_VAR,
    CHECKPOINT_DIR,
    COMPARISON_FILE,
    EFFECTIVE_CONFIG_FILE,
    EVAL_FILE,
    HISTORY_FILE,
    SUMMARY_FILE,
)
from src.env import AmbulanceEnv
from src.harness import compare, evaluate, load_evaluation, train, write_evaluation
from src.logger import RunReporter, setup_logging
from src.scenarios import SCENARIOS, load_config, write_effective_config


def _reporter(ctx: click.Context) -> RunReporter:
    return ctx.obj["reporter"]


def _run_evaluation(env, checkpoint_dir, run_config, run_dir, reporter, runs=None, workers=None):
    harness = run_config.harness
    result = evaluate(
        env,
        checkpoint_dir,
        harness.eval_seeds(runs),
        workers=workers or harness.EVAL_WORKERS,
        scenario=run_config.scenario,
        record_wall_clock=harness.RECORD_WALL_CLOCK,
    )
    write_evaluation(result, run_dir)
    reporter.report_evaluation(result)
    return result


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose (DEBUG) logging")
@click.option("--log-file", default=None, help="Log file path (optional)")
@click.option("--no-color", is_flag=True, help="Disable coloured console output")
@click.pass_context
def cli(ctx: click.Context, verbose: bool, log_file: Optional[str], no_color: bool):
    """Train and evaluate Deep Q ambulance dispatch agents."""
    setup_logging(verbose=verbose, use_colors=not no_color, log_file=log_file)
    ctx.obj = {"reporter": RunReporter()}


@cli.command("train")
@click.option("--scenario", "-s", default=None, help="Preset scenario name (default: scenario1)")
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False),
              help="Flat YAML config file (overrides --scenario)")
@click.option("--agent", "-a", default=None, help=f"Agent variant: {', '.join(AgentConfig.variant_names())}")
@click.option("--fast", is_flag=True, help="Desk-scale profile: 30-day episodes, 15 train / 5 warmup / 10 test")
@click.option("--seed", type=int, default=None, envvar=BASE_SEED_ENV_VAR, help="Base seed for run seeds")
@click.option("--output-dir", "-o", default=None, help="Parent directory for run directories")
@click.option("--then-test", is_flag=True, help="Evaluate the best checkpoint after training")
@click.option("--workers", type=int, default=None, help="Evaluation worker processes (with --then-test)")
@click.option("--no-progress", is_flag=True, help="Hide the episode progress bar")
@click.pass_context
def train_command(ctx, scenario, config_path, agent, fast, seed, output_dir, then_test, workers, no_progress):
    """Train an agent and save its best checkpoint."""
    reporter = _reporter(ctx)
    overrides = {"variant": agent, "base_seed": seed, "output_dir": output_dir}
    if no_progress:
        overrides["show_progress"] = False
    run_config = load_config(config_path or scenario, fast=fast, overrides=overrides)

    run_dir = Path(run_config.harness.OUTPUT_DIR) / run_config.run_dir_name()
    write_effective_config(run_config, run_dir)
    reporter.report_start("train", run_config, run_dir)

    env = AmbulanceEnv(run_config.sim)
    dispatcher = build_agent(
        run_config.agent,
        run_config.sim,
        seed=run_config.harness.BASE_SEED,
        warmup_episodes=run_config.harness.N_WARMUP_EPISODES,
    )
    result = train(env, dispatcher, run_config.harness, run_dir, reporter)
    reporter.report_training(result.history, result.best_episode, str(result.checkpoint_dir))

    if then_test:
        _run_evaluation(env, result.checkpoint_dir, run_config, run_dir, reporter, workers=workers)

    artifacts = [EFFECTIVE_CONFIG_FILE, HISTORY_FILE, CHECKPOINT_DIR]
    if then_test:
        artifacts += [EVAL_FILE, SUMMARY_FILE]
    reporter.report_completion(run_dir, artifacts)
    click.echo(f"Run directory: {run_dir}")


@cli.command("test")
@click.option("--checkpoint", "-c", required=True, type=click.Path(exists=True, file_okay=False),
              help="Checkpoint directory written by train")
@click.option("--runs", "-n", type=int, default=None, help="Number of evaluation runs")
@click.option("--workers", type=int, default=None, help="Evaluation worker processes")
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False),
              help="Config file (default: the run's effective config)")
@click.option("--seed", type=int, default=None, envvar=BASE_SEED_ENV_VAR, help="Base seed for run seeds")
@click.option("--output-dir", "-o", default=None, help="Where to write eval.csv (default: the run directory)")
@click.pass_context
def test_command(ctx, checkpoint, runs, workers, config_path, seed, output_dir):
    """Evaluate a saved checkpoint greedily over independent runs."""
    reporter = _reporter(ctx)
    checkpoint_dir = Path(checkpoint)
    run_dir = checkpoint_dir.parent

    source = config_path or run_dir / EFFECTIVE_CONFIG_FILE
    variant = read_manifest(checkpoint_dir)["variant"]
    run_config = load_config(source, overrides={"base_seed": seed, "variant": variant})
    out_dir = Path(output_dir) if output_dir else run_dir

    reporter.report_start("test", run_config, out_dir)
    env = AmbulanceEnv(run_config.sim)
    _run_evaluation(env, checkpoint_dir, run_config, out_dir, reporter, runs=runs, workers=workers)
    reporter.report_completion(out_dir, [EVAL_FILE, SUMMARY_FILE])


@cli.command("compare")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--baseline", default="random", help="Agent treated as the baseline")
@click.option("--metric", default="mean_call_to_arrival",
              type=click.Choice(["mean_call_to_arrival", "mean_assign_to_arrival"]))
@click.option("--output-dir", "-o", default="runs", help=f"Directory for {COMPARISON_FILE}")
@click.pass_context
def compare_command(ctx, run_dirs, baseline, metric, output_dir):
    """Compare evaluated runs against a baseline agent."""
    reporter = _reporter(ctx)
    results = [load_evaluation(d) for d in run_dirs]
    table = compare(results, baseline=baseline, metric=metric)

    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / COMPARISON_FILE, index=False)

    reporter.report_comparison(table)
    click.echo(table.to_string(index=False))


@cli.command("render-demo")
@click.option("--scenario", "-s", default=None, help="Preset scenario name")
@click.option("--steps", type=int, default=5, show_default=True, help="Allocations to render")
@click.option("--seed", type=int, default=0, show_default=True, help="Run seed")
def render_demo_command(scenario, steps, seed):
    """Print simulation snapshots under a random dispatch policy."""
    run_config = load_config(scenario)
    env = AmbulanceEnv(run_config.sim)
    dispatcher = RandomAgent(
        AgentConfig(VARIANT="random"),
        n_dispatch_points=run_config.sim.N_DISPATCH_POINTS,
        n_ambulances=run_config.sim.N_AMBULANCES,
        world_size_km=run_config.sim.WORLD_SIZE_KM,
        seed=seed,
    )

    observation = env.reset(seed=seed)
    click.echo(env.render())
    for step in range(1, steps + 1):
        action = dispatcher.select_action(observation, Mode.GREEDY)
        result = env.step(action)
        click.echo(f"\n--- step {step}: dispatch point {action}, reward {result.reward:,.0f} ---")
        click.echo(env.render())
        observation = result.observation
        if result.terminal:
            break


@cli.command("list-scenarios")
def list_scenarios_command():
    """List preset scenarios."""
    for name, scenario in SCENARIOS.items():
        settings = ", ".join(f"{k.lower()}={v}" for k, v in scenario.overrides.items())
        click.echo(f"{name}: {scenario.description} ({settings})")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main application entry point.

    Returns:
        Process exit status (0 on success)
    """
    args = list(argv) if argv is not None else sys.argv[1:]
    command = next((arg for arg in args if arg in cli.commands), None)
    try:
        status = cli.main(args=args,
                          prog_name="ambulance-rl", standalone_mode=False)
        return status if isinstance(status, int) else 0

    except click.ClickException as e:
        e.show()
        return e.exit_code

    except (KeyboardInterrupt, click.Abort):
        click.echo("\n⚠️  Run interrupted by user", err=True)
        return 1

    except Exception as e:
        RunReporter().report_error(e, command)
        click.echo(f"❌ Error: {e}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())

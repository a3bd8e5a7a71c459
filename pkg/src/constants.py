"""Constants used throughout the application."""

# Logging
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Simulation clock
MINUTES_PER_DAY = 1440

# Output files
HISTORY_COLUMNS = [
    "episode", "total_reward", "mean_call_to_arrival", "mean_assign_to_arrival",
    "total_calls", "fraction_met", "epsilon", "wall_clock_s",
]
EVAL_COLUMNS = [c for c in HISTORY_COLUMNS if c != "epsilon"]
INCIDENT_LOG_COLUMNS = [
    "incident_id", "call_time", "assign_time", "arrival_time",
    "incident_x", "incident_y", "ambulance_id",
]

HISTORY_FILE = "history.csv"
EVAL_FILE = "eval.csv"
SUMMARY_FILE = "summary.json"
COMPARISON_FILE = "comparison.csv"
EFFECTIVE_CONFIG_FILE = "effective_config.yaml"
CHECKPOINT_DIR = "checkpoint"
MANIFEST_FILE = "manifest.json"

# Checkpoint format
CHECKPOINT_FORMAT_VERSION = 1

# Environment variable overriding the base seed
BASE_SEED_ENV_VAR = "AMBULANCE_RL_BASE_SEED"

"""
Artifact Directories.

Every subcommand writes into a fixed subdirectory of the configured output
directory and leaves the resolved config beside its outputs. Inputs produced by
an earlier subcommand are looked up here too, so a missing prerequisite is
reported with the subcommand that creates it.
"""

from pathlib import Path

from lstm_nmpc.config import ExperimentConfig, save_config
from lstm_nmpc.errors import MissingArtifactError
from lstm_nmpc.nn_core import NetworkWeights
from lstm_nmpc.trainer import Dataset
from lstm_nmpc.weights_io import load_weights

DATASET_DIR = "dataset"
MODEL_DIR = "model"
EVAL_DIR = "eval"
CLOSED_LOOP_DIR = "closed_loop"
BENCH_DIR = "bench"
SPLIT_DIR = "split"
REPORT_DIR = "report"

DATASET_FILE = "dataset.csv"
WEIGHTS_FILE = "weights.nnw"
WEIGHTS_JSON_FILE = "weights.json"
RUN_LOG_FILE = "run_log.csv"
PLANT_LOG_FILE = "plant_log.csv"
CONTROLLER_LOG_FILE = "controller_log.csv"
TELEMETRY_FILE = "solver_telemetry.csv"


def stage_dir(config: ExperimentConfig, stage: str) -> Path:
    """Create the stage directory and write its config snapshot."""
    directory = Path(config.output_dir) / stage
    directory.mkdir(parents=True, exist_ok=True)
    save_config(config, directory)
    return directory


def require(path: Path, prerequisite: str) -> Path:
    """Return `path` if it exists, otherwise name the subcommand that makes it."""
    if not path.exists():
        raise MissingArtifactError(path, prerequisite)
    return path


def dataset_path(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / DATASET_DIR / DATASET_FILE


def weights_path(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / MODEL_DIR / WEIGHTS_FILE


def load_dataset(config: ExperimentConfig) -> Dataset:
    path = require(dataset_path(config), "gen-data")
    return Dataset.read_csv(path, config.dataset.train_fraction)


def load_trained_weights(config: ExperimentConfig) -> NetworkWeights:
    return load_weights(require(weights_path(config), "train"))

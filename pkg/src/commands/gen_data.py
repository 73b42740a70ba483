"""
Dataset Generation Stage.

Runs the synthetic plant under randomised excitation and writes the closed-chain
dataset used by `train` and `eval`.
"""

import logging

from commands.utils.artifacts import DATASET_DIR, DATASET_FILE, stage_dir
from lstm_nmpc.config import ExperimentConfig
from lstm_nmpc.trainer import generate_dataset

logger = logging.getLogger(__name__)


def main(config: ExperimentConfig, args=None):
    """
    Generate and save the dataset.

    Parameters:
        config (ExperimentConfig): Resolved experiment configuration.
        args (argparse.Namespace | None): Unused; kept for a uniform signature.

    Returns:
        pathlib.Path: Path of the written CSV.
    """
    dataset = generate_dataset(
        config.plant,
        config.dataset.n_cycles,
        config.seed,
        bounds=config.bounds.actuators,
        train_fraction=config.dataset.train_fraction,
        max_hold=config.dataset.max_hold,
    )
    path = dataset.to_csv(stage_dir(config, DATASET_DIR) / DATASET_FILE)
    logger.debug("Dataset split at cycle %d", dataset.split_index)
    print(f"Dataset of {len(dataset)} cycles written to {path}")
    return path

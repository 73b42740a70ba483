"""
Training Stage.

Fits the network to the generated dataset and writes the weights container, its
JSON export and the fit report.
"""

import logging

from commands.utils.artifacts import (
    MODEL_DIR,
    WEIGHTS_FILE,
    WEIGHTS_JSON_FILE,
    load_dataset,
    stage_dir,
)
from lstm_nmpc.config import ExperimentConfig
from lstm_nmpc.trainer import train
from lstm_nmpc.weights_io import export_weights_json, save_weights

logger = logging.getLogger(__name__)


def main(config: ExperimentConfig, args=None):
    """Train, save the weights and print the accuracy table."""
    dataset = load_dataset(config)
    spec = config.network.spec()
    logger.info(
        "Training %d-parameter network on %d cycles", spec.parameter_count, len(dataset)
    )
    weights, report = train(dataset, spec, config.training)
    directory = stage_dir(config, MODEL_DIR)
    path = save_weights(weights, directory / WEIGHTS_FILE)
    export_weights_json(weights, directory / WEIGHTS_JSON_FILE)
    report.save(directory)
    print(report.summary())
    print(f"Weights written to {path}")
    return weights, report

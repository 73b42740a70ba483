"""
Model Evaluation Stage.

Scores trained weights against the dataset: one-step RMSE and NRMSE per output
on the training and validation splits.
"""

from commands.utils.artifacts import EVAL_DIR, load_dataset, load_trained_weights, stage_dir
from lstm_nmpc.config import ExperimentConfig
from lstm_nmpc.trainer import evaluate


def main(config: ExperimentConfig, args=None):
    weights = load_trained_weights(config)
    report = evaluate(weights, load_dataset(config))
    report.save(stage_dir(config, EVAL_DIR))
    print(report.summary())
    return report

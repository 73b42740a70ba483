"""
Split-Node Stages.

`plant-node` and `controller-node` run the two halves of the loop as separate
processes talking UDP on the configured endpoints. Start the controller first;
each node writes its run log into the `split` directory.
"""

import logging

from commands.closed_loop import summarise_run
from commands.utils.artifacts import (
    CONTROLLER_LOG_FILE,
    PLANT_LOG_FILE,
    SPLIT_DIR,
    TELEMETRY_FILE,
    load_trained_weights,
    stage_dir,
)
from lstm_nmpc.config import ExperimentConfig
from lstm_nmpc.controller import NmpcController
from lstm_nmpc.domain import Actuation
from lstm_nmpc.rt_bridge.nodes import ControllerNode, PlantNode
from lstm_nmpc.rt_bridge.timing import CycleClock, collect_timing
from lstm_nmpc.rt_bridge.wire import STATUS_FALLBACK
from lstm_nmpc.surrogate_plant import SurrogatePlant

logger = logging.getLogger(__name__)


def _clock(config: ExperimentConfig) -> CycleClock:
    return CycleClock(config.clock.period_ms, config.clock.budget_ms)


def plant_main(config: ExperimentConfig, args=None):
    """Run the plant node for the scenario length and score its log."""
    endpoints = config.endpoints
    scenario = config.closed_loop
    node = PlantNode(
        SurrogatePlant(config.plant),
        scenario.reference(),
        _clock(config),
        bind=(endpoints.plant_host, endpoints.plant_port),
        controller=(endpoints.controller_host, endpoints.controller_port),
        u_init=Actuation.from_array(scenario.u_init),
        bounds=config.bounds.actuators,
        loss_rate=config.clock.loss_rate,
        seed=config.seed,
    )
    with node:
        log = node.run(scenario.n_cycles)
    fallbacks = int((log["status"] == STATUS_FALLBACK).sum())
    logger.info("Plant node ran %d cycles, %d fell back", len(log), fallbacks)
    directory = stage_dir(config, SPLIT_DIR)
    log.to_csv(directory / PLANT_LOG_FILE, index=False)
    report = summarise_run(
        log, config.bounds, scenario.warmup_cycles, config.clock.budget_ms, config.plant.noise_imep
    )
    report.save(directory)
    print(report.summary())
    return log


def controller_main(config: ExperimentConfig, args=None):
    """Serve measurements until the scenario length or an idle timeout."""
    endpoints = config.endpoints
    scenario = config.closed_loop
    controller = NmpcController(
        load_trained_weights(config),
        Actuation.from_array(scenario.u_init),
        horizon=config.horizon,
        cost=config.cost,
        bounds=config.bounds,
        solver=config.solver,
        settle_cycles=scenario.settle_cycles,
    )
    node = ControllerNode(
        controller,
        bind=(endpoints.controller_host, endpoints.controller_port),
        clock=_clock(config),
        plant=(endpoints.plant_host, endpoints.plant_port),
    )
    with node:
        log = node.run(
            max_cycles=scenario.n_cycles, idle_timeout_s=getattr(args, "idle_timeout", None)
        )
    directory = stage_dir(config, SPLIT_DIR)
    log.to_csv(directory / CONTROLLER_LOG_FILE, index=False)
    controller.telemetry.to_csv(directory / TELEMETRY_FILE)
    if len(log):
        stats = collect_timing(log, config.clock.budget_ms)
        print(
            f"answered {len(log)} measurements: mean solve {stats.mean_ms:.3f} ms, "
            f"p99 {stats.p99_ms:.3f} ms, over budget {stats.misses}"
        )
    return log

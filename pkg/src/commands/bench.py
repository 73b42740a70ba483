"""
Solver Benchmark.

Times repeated `solve_ocp` calls on perturbed problems around a settled operating
point. The same seeded problem sequence is used with warm starts (shifted
previous solution) and, with `--cold`, also with cold starts for a paired
comparison.
"""

import logging
from dataclasses import replace

import numpy as np
import pandas as pd

from commands.utils.artifacts import BENCH_DIR, load_trained_weights, stage_dir
from lstm_nmpc.config import ExperimentConfig
from lstm_nmpc.domain import Actuation, LstmState
from lstm_nmpc.nn_core import NetworkWeights, settle_state
from lstm_nmpc.ocp import AugmentedState, OcpProblem, Reference, assemble_model_input
from lstm_nmpc.rt_bridge.timing import TimingStats, collect_timing
from lstm_nmpc.sqp_solver import solve_ocp
from lstm_nmpc.surrogate_plant import steady_output

logger = logging.getLogger(__name__)

STATE_NOISE = 0.05
# fraction of each actuator range used to perturb the previous actuation
ACTUATION_NOISE = 0.02
REFERENCE_HOLD = 50


def _problems(config: ExperimentConfig, weights: NetworkWeights, n_solves: int, seed: int):
    rng = np.random.default_rng(seed)
    bounds = config.bounds.actuators
    u_base = Actuation.from_array(config.closed_loop.u_init)
    _, y_base = steady_output(config.plant, u_base)
    base = settle_state(weights, assemble_model_input(y_base.feedback(), u_base.as_array()))
    r_imep = float(y_base.imep)
    for index in range(n_solves):
        if index and index % REFERENCE_HOLD == 0:
            r_imep = float(rng.uniform(2.0, 5.0))
        state = LstmState.from_array(base.as_array() + STATE_NOISE * rng.standard_normal(8))
        u_prev = bounds.clip(u_base.as_array() + ACTUATION_NOISE * bounds.span * rng.standard_normal(3))
        feedback = (y_base.imep + 0.1 * rng.standard_normal(), y_base.ca50 + 0.5 * rng.standard_normal())
        yield OcpProblem(
            weights=weights,
            x0=AugmentedState(state, Actuation.from_array(u_prev)),
            y_feedback=feedback,
            reference=Reference.constant(
                r_imep, config.closed_loop.ca50_reference, config.horizon + 1
            ),
            horizon=config.horizon,
            cost=config.cost,
            bounds=config.bounds,
        )


def bench_solver(
    config: ExperimentConfig,
    weights: NetworkWeights,
    n_solves: int = 1000,
    cold: bool = False,
    seed: int = 0,
) -> tuple[TimingStats, pd.DataFrame]:
    """
    Time `n_solves` solves and summarise them against the compute budget.

    Returns:
        tuple: (TimingStats, per-solve frame with solve_time_us, iteration
        counts, final cost and the degraded flag).
    """
    if n_solves < 1:
        raise ValueError("n_solves must be at least 1")
    solver = replace(config.solver, warm_start="cold" if cold else "shift")
    budget_us = 1e3 * config.clock.budget_ms
    rows = []
    warm = None
    for index, problem in enumerate(_problems(config, weights, n_solves, seed)):
        result = solve_ocp(problem, solver, warm)
        warm = result.du
        solve_time_us = max(1, int(round(1e6 * result.solve_time_s)))
        if solve_time_us > budget_us:
            logger.warning("Solve %d took %d us, over the %.1f ms budget", index, solve_time_us,
                           config.clock.budget_ms)
        rows.append(
            [index, solve_time_us, result.iterations, sum(result.qp_iterations),
             result.final_cost, result.degraded]
        )
    frame = pd.DataFrame(
        rows,
        columns=["solve", "solve_time_us", "sqp_iterations", "qp_iterations", "final_cost", "degraded"],
    )
    stats = collect_timing(frame, config.clock.budget_ms)
    logger.info(
        "%s-start benchmark: mean %.3f ms, p99 %.3f ms, max %.3f ms over %d solves",
        "cold" if cold else "warm",
        stats.mean_ms,
        stats.p99_ms,
        stats.max_ms,
        stats.count,
    )
    return stats, frame


def main(config: ExperimentConfig, args=None):
    """Run the warm benchmark, and the paired cold one with `--cold`."""
    n_solves = getattr(args, "n_solves", 1000)
    weights = load_trained_weights(config)
    directory = stage_dir(config, BENCH_DIR)
    results = {}
    modes = ["warm", "cold"] if getattr(args, "cold", False) else ["warm"]
    for mode in modes:
        stats, frame = bench_solver(config, weights, n_solves, cold=mode == "cold", seed=config.seed)
        frame.to_csv(directory / f"bench_{mode}.csv", index=False)
        results[mode] = stats
    summary = pd.concat(
        [stats.to_frame().assign(mode=mode) for mode, stats in results.items()], ignore_index=True
    )
    summary.to_csv(directory / "timing_summary.csv", index=False)
    for mode, stats in results.items():
        print(
            f"{mode}: mean {stats.mean_ms:.3f} ms, p50 {stats.p50_ms:.3f} ms, "
            f"p99 {stats.p99_ms:.3f} ms, max {stats.max_ms:.3f} ms, "
            f"over budget {stats.misses}/{stats.count}"
        )
    return results

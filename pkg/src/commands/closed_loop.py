"""
In-Process Closed Loop.

Couples the synthetic plant and the NMPC controller without sockets:

    for each cycle k: y(k) = plant(u(k)); u(k+1) = controller(y(k), r(k+1))

and logs every cycle, LSTM cell and hidden states included. The run is scored
by `summarise_run` into a `ClosedLoopReport`: tracking RMSE after a warm-up
window, one-step model error, an actuator/output constraint audit, settling
cycles after each IMEP step and solve timing.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.metrics import mean_squared_error

from commands.utils.artifacts import (
    CLOSED_LOOP_DIR,
    RUN_LOG_FILE,
    TELEMETRY_FILE,
    load_trained_weights,
    stage_dir,
)
from lstm_nmpc.config import ExperimentConfig
from lstm_nmpc.controller import NmpcController
from lstm_nmpc.domain import (
    ACTUATOR_NAMES,
    HIDDEN_SIZE,
    OUTPUT_NAMES,
    Actuation,
)
from lstm_nmpc.errors import UnstableLoopError
from lstm_nmpc.nn_core import NetworkWeights
from lstm_nmpc.ocp import Bounds, Reference
from lstm_nmpc.rt_bridge.timing import TimingStats, collect_timing
from lstm_nmpc.surrogate_plant import SurrogatePlant

logger = logging.getLogger(__name__)

STATE_COLUMNS = [f"c{i}" for i in range(HIDDEN_SIZE)] + [f"h{i}" for i in range(HIDDEN_SIZE)]
PREDICTION_COLUMNS = [f"pred_{name}" for name in OUTPUT_NAMES]
RUN_LOG_COLUMNS = [
    "cycle",
    *OUTPUT_NAMES,
    "r_imep",
    "r_ca50",
    *ACTUATOR_NAMES,
    *PREDICTION_COLUMNS,
    *STATE_COLUMNS,
    "cost",
    "sqp_iterations",
    "max_slack",
    "solve_time_us",
    "status",
]
# settling band when the plant is noise-free, bar
NOISE_FREE_BAND = 0.05


@dataclass
class ClosedLoopReport:
    """Scores of one closed-loop run, computed after the warm-up window."""

    n_cycles: int
    warmup_cycles: int
    imep_rmse: float
    ca50_rmse: float
    model_rmse: dict
    actuation_violations: int
    output_exceedances: dict
    worst_exceedance: dict
    settling_cycles: list = field(default_factory=list)
    timing: TimingStats = None

    def to_frame(self) -> pd.DataFrame:
        rows = [
            ("n_cycles", self.n_cycles),
            ("warmup_cycles", self.warmup_cycles),
            ("imep_rmse_bar", self.imep_rmse),
            ("ca50_rmse_cad", self.ca50_rmse),
            ("actuation_violations", self.actuation_violations),
        ]
        rows += [(f"model_rmse_{name}", value) for name, value in self.model_rmse.items()]
        rows += [(f"exceedances_{name}", value) for name, value in self.output_exceedances.items()]
        rows += [(f"worst_exceedance_{name}", value) for name, value in self.worst_exceedance.items()]
        if self.settling_cycles:
            rows += [
                ("settling_cycles_max", max(self.settling_cycles)),
                ("settling_cycles_mean", float(np.mean(self.settling_cycles))),
            ]
        if self.timing is not None:
            rows += [(f"timing_{key}", value) for key, value in self.timing.to_frame().iloc[0].items()]
        return pd.DataFrame(rows, columns=["metric", "value"])

    def summary(self) -> str:
        lines = [
            f"cycles {self.n_cycles} (first {self.warmup_cycles} excluded)",
            f"IMEP tracking RMSE  {self.imep_rmse:.4f} bar",
            f"CA50 tracking RMSE  {self.ca50_rmse:.4f} CAD",
            f"actuation bound violations  {self.actuation_violations}",
        ]
        for name in self.output_exceedances:
            if self.output_exceedances[name]:
                lines.append(
                    f"{name} above/below bound on {self.output_exceedances[name]} cycles, "
                    f"worst by {self.worst_exceedance[name]:.4g}"
                )
        if self.settling_cycles:
            lines.append(f"settling cycles per IMEP step  {self.settling_cycles}")
        if self.timing is not None:
            lines.append(
                f"solve time mean {self.timing.mean_ms:.3f} ms, p99 {self.timing.p99_ms:.3f} ms, "
                f"max {self.timing.max_ms:.3f} ms, misses {self.timing.misses}"
            )
        return "\n".join(lines)

    def save(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(directory / "closed_loop_report.csv", index=False)
        (directory / "closed_loop_report.txt").write_text(self.summary() + "\n", encoding="utf-8")
        if self.timing is not None:
            self.timing.to_csv(directory / "timing_summary.csv")


def _rmse(actual: np.ndarray, target: np.ndarray) -> float:
    if actual.size == 0:
        return float("nan")
    return float(np.sqrt(mean_squared_error(target, actual)))


def settling_cycles(imep: np.ndarray, reference: np.ndarray, band: float, start: int = 0) -> list:
    """
    Cycles after each reference step until IMEP stays within `band` of the target.

    A step that never settles before the next one counts its full segment length.
    """
    steps = [s for s in np.flatnonzero(np.diff(reference)) + 1 if s >= start]
    ends = steps[1:] + [reference.size]
    result = []
    for step, end in zip(steps, ends):
        inside = np.abs(imep[step:end] - reference[step]) <= band
        outside = np.flatnonzero(~inside)
        result.append(int(outside[-1] + 1) if outside.size else 0)
    return result


def summarise_run(
    log: pd.DataFrame,
    bounds: Bounds,
    warmup_cycles: int,
    budget_ms: float,
    imep_noise: float = 0.0,
) -> ClosedLoopReport:
    """Score a run log written by `run_closed_loop` or by the plant node."""
    scored = log[log["cycle"] >= warmup_cycles]
    imep = log["imep"].to_numpy(float)
    model_rmse = {}
    for name in OUTPUT_NAMES:
        column = f"pred_{name}"
        if column in scored:
            model_rmse[name] = _rmse(scored[name].to_numpy(float), scored[column].to_numpy(float))

    applied = log[list(ACTUATOR_NAMES)].to_numpy(float)
    violations = int(
        np.count_nonzero(
            np.any((applied < np.array(bounds.u_min)) | (applied > np.array(bounds.u_max)), axis=1)
        )
    )
    exceedances, worst = {}, {}
    for index in bounds.output_channels:
        name = OUTPUT_NAMES[index]
        values = log[name].to_numpy(float)
        excess = np.maximum(values - bounds.y_max[index], bounds.y_min[index] - values)
        excess = np.maximum(excess, 0.0)
        exceedances[name] = int(np.count_nonzero(excess))
        worst[name] = float(excess.max(initial=0.0))

    band = 3.0 * imep_noise if imep_noise > 0 else NOISE_FREE_BAND
    return ClosedLoopReport(
        n_cycles=len(log),
        warmup_cycles=warmup_cycles,
        imep_rmse=_rmse(scored["imep"].to_numpy(float), scored["r_imep"].to_numpy(float)),
        ca50_rmse=_rmse(scored["ca50"].to_numpy(float), scored["r_ca50"].to_numpy(float)),
        model_rmse=model_rmse,
        actuation_violations=violations,
        output_exceedances=exceedances,
        worst_exceedance=worst,
        settling_cycles=settling_cycles(imep, log["r_imep"].to_numpy(float), band, warmup_cycles),
        timing=collect_timing(log, budget_ms) if log["solve_time_us"].notna().any() else None,
    )


def _check_envelope(cycle: int, measured: np.ndarray, bounds: Bounds, factor: float) -> None:
    lo, hi = np.array(bounds.y_min), np.array(bounds.y_max)
    middle, half_range = 0.5 * (lo + hi), 0.5 * (hi - lo)
    if not np.all(np.isfinite(measured)) or np.any(np.abs(measured - middle) > factor * half_range):
        raise UnstableLoopError(cycle, dict(zip(OUTPUT_NAMES, measured.tolist())))


def _log_exceedances(cycle: int, measured: np.ndarray, bounds: Bounds) -> None:
    for index in bounds.output_channels:
        value = measured[index]
        if value > bounds.y_max[index] or value < bounds.y_min[index]:
            limit = bounds.y_max[index] if value > bounds.y_max[index] else bounds.y_min[index]
            logger.warning(
                "Cycle %d: %s = %.4g outside its bound %.4g by %.4g",
                cycle,
                OUTPUT_NAMES[index],
                value,
                limit,
                abs(value - limit),
            )


def run_closed_loop(
    config: ExperimentConfig,
    weights: NetworkWeights,
    plant=None,
    reference: Reference | None = None,
    controller: NmpcController | None = None,
) -> tuple[ClosedLoopReport, pd.DataFrame, NmpcController]:
    """
    Run the in-process loop for `config.closed_loop.n_cycles` cycles.

    Parameters:
        config (ExperimentConfig): Cost, bounds, horizon, solver and scenario.
        weights (NetworkWeights): Controller model.
        plant: Anything with `step(Actuation) -> ModelOutput`; defaults to a
            `SurrogatePlant` with `config.plant`.
        reference (Reference | None): Targets; defaults to the scenario profile.
        controller (NmpcController | None): Controller to drive; built from the
            config when omitted.

    Returns:
        tuple: (ClosedLoopReport, per-cycle run log, the controller).

    Raises:
        UnstableLoopError: If a measured output leaves the envelope of
            `envelope_factor` times the half-range of its bounds.
    """
    scenario = config.closed_loop
    plant = plant or SurrogatePlant(config.plant)
    reference = reference or scenario.reference()
    u_init = Actuation.from_array(scenario.u_init)
    controller = controller or NmpcController(
        weights,
        u_init,
        horizon=config.horizon,
        cost=config.cost,
        bounds=config.bounds,
        solver=config.solver,
        settle_cycles=scenario.settle_cycles,
    )
    rows = []
    actuation = controller.u_prev
    for cycle in range(scenario.n_cycles):
        measured = plant.step(actuation)
        values = measured.as_array()
        _check_envelope(cycle, values, config.bounds, scenario.envelope_factor)
        _log_exceedances(cycle, values, config.bounds)
        step = controller.step(cycle, measured, reference.at(cycle + 1), applied=actuation)
        result = step.result
        rows.append(
            [
                cycle,
                *values,
                *reference.at(cycle),
                *actuation.as_array(),
                *step.predicted.as_array(),
                *step.state.as_array(),
                result.final_cost,
                result.iterations,
                result.max_slack,
                max(1, int(round(1e6 * result.solve_time_s))),
                int(result.degraded),
            ]
        )
        actuation = step.actuation
    log = pd.DataFrame(rows, columns=RUN_LOG_COLUMNS)
    report = summarise_run(
        log,
        config.bounds,
        scenario.warmup_cycles,
        config.clock.budget_ms,
        getattr(getattr(plant, "params", None), "noise_imep", 0.0),
    )
    logger.info(
        "Closed loop finished: IMEP RMSE %.4f bar, CA50 RMSE %.4f CAD",
        report.imep_rmse,
        report.ca50_rmse,
    )
    return report, log, controller


def main(config: ExperimentConfig, args=None):
    """Run the scenario with the trained weights and write the run directory."""
    weights = load_trained_weights(config)
    report, log, controller = run_closed_loop(config, weights)
    directory = stage_dir(config, CLOSED_LOOP_DIR)
    log.to_csv(directory / RUN_LOG_FILE, index=False)
    controller.telemetry.to_csv(directory / TELEMETRY_FILE)
    report.save(directory)
    print(report.summary())
    return report

"""
Optimal Control Problem.

Builds the increment-augmented control problem around the network model,
independent of any solver:

- augmented state  x~ = [c; h; u_prev] (11 values)
- decision         du_0 .. du_{N-1}, increments of the three actuators
- stage i          u_i = u_{i-1} + du_i (du_N = 0 at the terminal stage),
                   model input [imep, ca50 fed back; u_i], output y_i
- cost             sum over i = 0..N of
                   q_imep (r_imep - imep)^2 + q_ca50 (r_ca50 - ca50)^2
                   + r_fuel fuel^2 + r_water water^2 + q_nox nox^2 + du' R du
- bounds           selected actuator and output channels at every stage

Inside the horizon the (imep, ca50) fed back at stage i >= 1 are the model's
predictions of stage i-1; stage 0 uses the last measurement. Problems are
immutable once built and can be shared by concurrent solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from os import PathLike
from typing import Sequence

import numpy as np
import pandas as pd

from lstm_nmpc.domain import (
    ACTUATOR_NAMES,
    N_ACTUATORS,
    N_OUTPUTS,
    OUTPUT_NAMES,
    ENGINE_ACTUATOR_MAX,
    ENGINE_ACTUATOR_MIN,
    ENGINE_OUTPUT_MAX,
    ENGINE_OUTPUT_MIN,
    Actuation,
    ActuatorBounds,
    LstmState,
    ModelOutput,
)
from lstm_nmpc.nn_core import NetworkWeights, model_step_array

N_RESIDUALS = 5 + N_ACTUATORS
DEFAULT_HORIZON = 3
BOUND_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CostWeights:
    """Stage weights of the tracking, consumption, emission and increment terms."""

    q_imep: float = 10.0
    q_ca50: float = 1.0
    q_nox: float = 1e-6
    r_doi_fuel: float = 0.1
    r_doi_water: float = 0.1
    r_delta: tuple = (1.0, 1.0, 2e-4)

    def __post_init__(self):
        object.__setattr__(self, "r_delta", tuple(float(v) for v in self.r_delta))
        scalars = (self.q_imep, self.q_ca50, self.q_nox, self.r_doi_fuel, self.r_doi_water)
        if any(value < 0 for value in scalars):
            raise ValueError("cost weights must be non-negative")
        if len(self.r_delta) != N_ACTUATORS or any(value <= 0 for value in self.r_delta):
            raise ValueError("the increment weight R must be positive definite")

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r_delta)

    def residual_scales(self) -> np.ndarray:
        """Square roots of the weights, ordered like `stage_residuals`."""
        return np.sqrt(
            [
                self.q_imep,
                self.q_ca50,
                self.r_doi_fuel,
                self.r_doi_water,
                self.q_nox,
                *self.r_delta,
            ]
        )


@dataclass(frozen=True)
class Bounds:
    """
    Output and actuator limits with diagonal selector maps.

    `output_selected` and `input_selected` are the diagonals of F_y and F_u: a
    channel is constrained only when its flag is set.
    """

    y_min: tuple = ENGINE_OUTPUT_MIN
    y_max: tuple = ENGINE_OUTPUT_MAX
    u_min: tuple = ENGINE_ACTUATOR_MIN
    u_max: tuple = ENGINE_ACTUATOR_MAX
    output_selected: tuple = (True, True, True, True)
    input_selected: tuple = (True, True, True)

    def __post_init__(self):
        for name, size in (("y_min", N_OUTPUTS), ("y_max", N_OUTPUTS)):
            if len(getattr(self, name)) != size:
                raise ValueError(f"{name} needs {size} values")
        for name, size in (("u_min", N_ACTUATORS), ("u_max", N_ACTUATORS)):
            if len(getattr(self, name)) != size:
                raise ValueError(f"{name} needs {size} values")
        for name in ("y_min", "y_max", "u_min", "u_max"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "output_selected", tuple(bool(v) for v in self.output_selected))
        object.__setattr__(self, "input_selected", tuple(bool(v) for v in self.input_selected))
        if len(self.output_selected) != N_OUTPUTS or len(self.input_selected) != N_ACTUATORS:
            raise ValueError("selector maps must cover every channel")
        if any(lo > hi for lo, hi in zip(self.y_min, self.y_max)):
            raise ValueError("output lower bound exceeds upper bound")
        if any(lo > hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("actuator lower bound exceeds upper bound")

    @property
    def F_u(self) -> np.ndarray:
        return np.diag(np.array(self.input_selected, dtype=float))

    @property
    def F_y(self) -> np.ndarray:
        return np.diag(np.array(self.output_selected, dtype=float))

    @property
    def actuators(self) -> ActuatorBounds:
        return ActuatorBounds(self.u_min, self.u_max)

    @property
    def input_channels(self) -> np.ndarray:
        return np.flatnonzero(self.input_selected)

    @property
    def output_channels(self) -> np.ndarray:
        return np.flatnonzero(self.output_selected)


@dataclass(frozen=True, eq=False)
class Reference:
    """IMEP and CA50 targets per cycle with step-hold semantics past the end."""

    r_imep: np.ndarray
    r_ca50: np.ndarray

    def __post_init__(self):
        r_imep = np.atleast_1d(np.asarray(self.r_imep, dtype=float))
        r_ca50 = np.atleast_1d(np.asarray(self.r_ca50, dtype=float))
        if r_imep.shape != r_ca50.shape or r_imep.size == 0:
            raise ValueError("reference channels must be non-empty and of equal length")
        object.__setattr__(self, "r_imep", r_imep)
        object.__setattr__(self, "r_ca50", r_ca50)

    def __len__(self) -> int:
        return self.r_imep.size

    @classmethod
    def constant(cls, imep: float, ca50: float, length: int) -> "Reference":
        return cls(np.full(length, imep), np.full(length, ca50))

    def at(self, cycle: int) -> tuple[float, float]:
        """Reference of one cycle, holding the last value past the end."""
        index = min(max(cycle, 0), len(self) - 1)
        return float(self.r_imep[index]), float(self.r_ca50[index])

    def slice(self, start: int, length: int) -> "Reference":
        """Return `length` consecutive stages from `start`, step-held at the end."""
        index = np.clip(np.arange(start, start + length), 0, len(self) - 1)
        return Reference(self.r_imep[index], self.r_ca50[index])

    @classmethod
    def step_profile(
        cls,
        n_cycles: int = 650,
        levels: Sequence[float] = (3.0, 4.0, 2.5, 5.0, 3.5, 2.0, 4.5),
        hold: int = 50,
        ca50: float = 6.0,
    ) -> "Reference":
        """IMEP steps cycling through `levels` every `hold` cycles, CA50 held."""
        if hold < 1 or not levels:
            raise ValueError("a step profile needs levels and a positive hold")
        index = (np.arange(n_cycles) // hold) % len(levels)
        return cls(np.asarray(levels, dtype=float)[index], np.full(n_cycles, ca50))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, n_cycles: int | None = None) -> "Reference":
        """
        Expand (cycle, r_imep, r_ca50) rows into a per-cycle reference.

        Each row's values hold from its cycle until the next row's cycle.
        """
        frame = frame.sort_values("cycle")
        cycles = frame["cycle"].to_numpy(int)
        if cycles.size == 0:
            raise ValueError("reference profile has no rows")
        n_cycles = n_cycles or int(cycles[-1]) + 1
        rows = np.clip(np.searchsorted(cycles, np.arange(n_cycles), side="right") - 1, 0, None)
        return cls(frame["r_imep"].to_numpy(float)[rows], frame["r_ca50"].to_numpy(float)[rows])

    @classmethod
    def read_csv(cls, source: str | PathLike, n_cycles: int | None = None) -> "Reference":
        return cls.from_frame(pd.read_csv(source), n_cycles)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"cycle": np.arange(len(self)), "r_imep": self.r_imep, "r_ca50": self.r_ca50}
        )


@dataclass(frozen=True)
class AugmentedState:
    """LSTM state joined with the actuation applied in the previous cycle."""

    lstm: LstmState
    u_prev: Actuation

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.lstm.as_array(), self.u_prev.as_array()])

    @classmethod
    def from_array(cls, values: np.ndarray) -> "AugmentedState":
        values = np.asarray(values, dtype=float)
        return cls(
            LstmState.from_array(values[:-N_ACTUATORS]),
            Actuation.from_array(values[-N_ACTUATORS:]),
        )


@dataclass(frozen=True, eq=False)
class OcpProblem:
    """Everything one solve needs: model, horizon, weights, bounds, references, x~0."""

    weights: NetworkWeights
    x0: AugmentedState
    y_feedback: tuple
    reference: Reference
    horizon: int = DEFAULT_HORIZON
    cost: CostWeights = field(default_factory=CostWeights)
    bounds: Bounds = field(default_factory=Bounds)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least one cycle")
        if len(self.reference) < self.horizon + 1:
            raise ValueError("reference must cover stages 0..N")
        if len(self.y_feedback) != 2:
            raise ValueError("feedback is the (imep, ca50) pair of the previous cycle")
        object.__setattr__(self, "y_feedback", tuple(float(v) for v in self.y_feedback))
        if not self.bounds.actuators.contains(self.x0.u_prev, tol=BOUND_TOLERANCE):
            raise ValueError(f"previous actuation {self.x0.u_prev} violates actuator bounds")

    @property
    def n_decision(self) -> int:
        return N_ACTUATORS * self.horizon


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Horizon rollout: stage quantities for i = 0..N and states x~_0..x~_{N+1}."""

    states: np.ndarray  # (N+2, 11)
    u: np.ndarray  # (N+1, 3)
    du: np.ndarray  # (N+1, 3), last row zero
    y: np.ndarray  # (N+1, 4)
    feedback: np.ndarray  # (N+1, 2)

    @property
    def model_inputs(self) -> np.ndarray:
        return np.hstack([self.feedback, self.u])


def assemble_model_input(feedback: Sequence[float], u: np.ndarray) -> np.ndarray:
    """Model input [imep(k-1), ca50(k-1), doi_fuel, doi_water, nvo]."""
    return np.concatenate([np.asarray(feedback, dtype=float)[:2], np.asarray(u, dtype=float)])


def _step_array(
    weights: NetworkWeights, x_aug: np.ndarray, du: np.ndarray, feedback: Sequence[float]
) -> tuple[np.ndarray, np.ndarray]:
    u = x_aug[-N_ACTUATORS:] + du
    x_next, y = model_step_array(weights, x_aug[:-N_ACTUATORS], assemble_model_input(feedback, u))
    return np.concatenate([x_next, u]), y


def augmented_step(
    problem: OcpProblem,
    x_aug: AugmentedState,
    du: Sequence[float],
    y_feedback: Sequence[float],
) -> tuple[AugmentedState, ModelOutput]:
    """
    Apply u = u_prev + du, evaluate the model and return x~(k+1) and y(k).

    Parameters:
        problem (OcpProblem): Supplies the network weights.
        x_aug (AugmentedState): Current augmented state.
        du (Sequence[float]): Actuator increments (3 values).
        y_feedback (Sequence[float]): (imep, ca50) of the previous cycle.

    Returns:
        tuple: (next AugmentedState, stage ModelOutput).
    """
    du = np.asarray(du, dtype=float)
    if du.shape != (N_ACTUATORS,) or not np.all(np.isfinite(du)):
        raise ValueError("du must be a finite 3-vector")
    x_next, y = _step_array(problem.weights, x_aug.as_array(), du, y_feedback)
    return AugmentedState.from_array(x_next), ModelOutput.from_array(y)


def rollout(problem: OcpProblem, du_sequence: np.ndarray) -> Trajectory:
    """
    Simulate the horizon for increments du_0..du_{N-1}.

    The terminal stage N repeats u_{N-1} (zero increment) and feeds back the
    prediction of stage N-1, like every other stage.
    """
    horizon = problem.horizon
    du_sequence = np.asarray(du_sequence, dtype=float).reshape(horizon, N_ACTUATORS)
    du_all = np.vstack([du_sequence, np.zeros((1, N_ACTUATORS))])
    states = np.empty((horizon + 2, problem.x0.as_array().size))
    outputs = np.empty((horizon + 1, N_OUTPUTS))
    feedback = np.empty((horizon + 1, 2))
    states[0] = problem.x0.as_array()
    feedback[0] = problem.y_feedback
    for stage in range(horizon + 1):
        states[stage + 1], outputs[stage] = _step_array(
            problem.weights, states[stage], du_all[stage], feedback[stage]
        )
        if stage < horizon:
            feedback[stage + 1] = outputs[stage, :2]
    return Trajectory(
        states=states,
        u=states[1:, -N_ACTUATORS:].copy(),
        du=du_all,
        y=outputs,
        feedback=feedback,
    )


def stage_residuals(
    problem: OcpProblem, y: np.ndarray, u: np.ndarray, du: np.ndarray, stage_index: int
) -> np.ndarray:
    """Weighted residuals whose squared norm is the stage cost."""
    if not 0 <= stage_index <= problem.horizon:
        raise ValueError(f"stage index {stage_index} outside 0..{problem.horizon}")
    r_imep, r_ca50 = problem.reference.at(stage_index)
    raw = np.array([y[0] - r_imep, y[1] - r_ca50, u[0], u[1], y[2], *du])
    return problem.cost.residual_scales() * raw


def residual_jacobians(cost: CostWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constant derivatives of `stage_residuals` with respect to y, u and du."""
    scales = cost.residual_scales()
    d_y = np.zeros((N_RESIDUALS, N_OUTPUTS))
    d_u = np.zeros((N_RESIDUALS, N_ACTUATORS))
    d_du = np.zeros((N_RESIDUALS, N_ACTUATORS))
    d_y[0, 0], d_y[1, 1], d_y[4, 2] = scales[0], scales[1], scales[4]
    d_u[2, 0], d_u[3, 1] = scales[2], scales[3]
    d_du[5:, :] = np.diag(scales[5:])
    return d_y, d_u, d_du


def stage_cost(
    problem: OcpProblem,
    stage_output: ModelOutput | np.ndarray,
    u: Actuation | np.ndarray,
    du: Sequence[float],
    stage_index: int,
) -> float:
    """
    Cost of one stage.

    q_imep (r - imep)^2 + q_ca50 (r - ca50)^2 + r_fuel fuel^2 + r_water water^2
    + q_nox nox^2 + du' R du, with the references of `stage_index`.
    """
    y = stage_output.as_array() if isinstance(stage_output, ModelOutput) else np.asarray(stage_output)
    u = u.as_array() if isinstance(u, Actuation) else np.asarray(u)
    residuals = stage_residuals(problem, y, u, np.asarray(du, dtype=float), stage_index)
    return float(residuals @ residuals)


def total_cost(problem: OcpProblem, trajectory: Trajectory) -> float:
    """Sum of stage costs over i = 0..N."""
    return sum(
        stage_cost(problem, trajectory.y[i], trajectory.u[i], trajectory.du[i], i)
        for i in range(problem.horizon + 1)
    )


def constraint_residuals(problem: OcpProblem, trajectory: Trajectory) -> np.ndarray:
    """
    Signed bound margins, positive when satisfied.

    Per stage: selected actuators (value - lower, upper - value), then selected
    outputs (value - lower, upper - value). Names are given by `residual_labels`.
    """
    bounds = problem.bounds
    inputs = bounds.input_channels
    outputs = bounds.output_channels
    u_min, u_max = np.array(bounds.u_min)[inputs], np.array(bounds.u_max)[inputs]
    y_min, y_max = np.array(bounds.y_min)[outputs], np.array(bounds.y_max)[outputs]
    parts = []
    for stage in range(problem.horizon + 1):
        u = trajectory.u[stage, inputs]
        y = trajectory.y[stage, outputs]
        parts.extend([u - u_min, u_max - u, y - y_min, y_max - y])
    return np.concatenate(parts)


def residual_labels(problem: OcpProblem) -> list[str]:
    """Names of the entries returned by `constraint_residuals`."""
    inputs = [ACTUATOR_NAMES[i] for i in problem.bounds.input_channels]
    outputs = [OUTPUT_NAMES[i] for i in problem.bounds.output_channels]
    labels = []
    for stage in range(problem.horizon + 1):
        labels += [f"{name}_min[{stage}]" for name in inputs]
        labels += [f"{name}_max[{stage}]" for name in inputs]
        labels += [f"{name}_min[{stage}]" for name in outputs]
        labels += [f"{name}_max[{stage}]" for name in outputs]
    return labels

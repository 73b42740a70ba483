"""
Real-Time Gauss-Newton SQP.

Each solve runs a fixed number of full-step iterations of

    rollout -> linearize_horizon -> condense -> solve_qp -> du += step

around the increment-augmented control problem. Linearisation chains the
analytic network sensitivities through the augmentation and through the
feedback of predicted IMEP/CA50 between stages. Condensing eliminates the
states, leaving a dense QP in the stacked increments plus one slack per stage
and constrained output. Output bounds are softened with L1 + L2 slack penalties
while actuator bounds stay hard.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path

import numpy as np
import pandas as pd

from lstm_nmpc.domain import N_ACTUATORS, N_OUTPUTS, N_STATES, Actuation
from lstm_nmpc.errors import NmpcError
from lstm_nmpc.nn_core import model_step_with_jacobians
from lstm_nmpc.ocp import (
    OcpProblem,
    Trajectory,
    assemble_model_input,
    residual_jacobians,
    rollout,
    stage_residuals,
    total_cost,
)
from lstm_nmpc.qp_solver import CONVERGED, CondensedQp, QpSolution, solve_qp

logger = logging.getLogger(__name__)

WARM_START_MODES = ("shift", "cold")
N_AUGMENTED = N_STATES + N_ACTUATORS


@dataclass(frozen=True)
class SolverConfig:
    """Iteration budget, QP settings, slack penalties, warm start and regularisation."""

    max_sqp_iters: int = 3
    qp_max_iters: int = 50
    qp_tolerance: float = 1e-10
    slack_l1: float = 1e4
    slack_l2: float = 1e2
    warm_start: str = "shift"
    regularization: float = 1e-8

    def __post_init__(self):
        if self.max_sqp_iters < 1:
            raise ValueError("max_sqp_iters must be at least 1")
        if self.qp_max_iters < 1 or self.qp_tolerance <= 0:
            raise ValueError("qp_max_iters and qp_tolerance must be positive")
        if self.slack_l1 <= 0 or self.slack_l2 <= 0:
            raise ValueError("slack penalties must be positive")
        if self.warm_start not in WARM_START_MODES:
            raise ValueError(f"warm_start must be one of {WARM_START_MODES}")
        if self.regularization < 0:
            raise ValueError("regularization must be non-negative")


@dataclass(frozen=True, eq=False)
class StageSensitivity:
    """
    Derivatives of one stage with respect to x~_i, du_i and the feedback pair.

    A, B, E map into x~_{i+1}; C, D, Ey map into y_i.
    """

    A: np.ndarray  # (11, 11)
    B: np.ndarray  # (11, 3)
    E: np.ndarray  # (11, 2)
    C: np.ndarray  # (4, 11)
    D: np.ndarray  # (4, 3)
    Ey: np.ndarray  # (4, 2)


@dataclass(frozen=True, eq=False)
class HorizonLinearization:
    """
    Linearisation of a whole horizon around a nominal trajectory.

    `output_sens[i]` and `input_sens[i]` are dy_i/d(du) and du_i/d(du) over the
    stacked increments du_0..du_{N-1}; `residuals[i]` are the stage residuals.
    """

    nominal: Trajectory
    stages: tuple
    output_sens: np.ndarray  # (N+1, 4, 3N)
    input_sens: np.ndarray  # (N+1, 3, 3N)
    increment_sens: np.ndarray  # (N+1, 3, 3N)
    residuals: np.ndarray  # (N+1, 8)


def _stage_sensitivity(problem: OcpProblem, trajectory: Trajectory, stage: int) -> StageSensitivity:
    x_aug = trajectory.states[stage]
    u = trajectory.u[stage]
    _, _, jac = model_step_with_jacobians(
        problem.weights,
        x_aug[:N_STATES],
        assemble_model_input(trajectory.feedback[stage], u),
    )
    fb, act = slice(0, 2), slice(2, 2 + N_ACTUATORS)
    A = np.zeros((N_AUGMENTED, N_AUGMENTED))
    A[:N_STATES, :N_STATES] = jac.dx_dx
    A[:N_STATES, N_STATES:] = jac.dx_du[:, act]
    A[N_STATES:, N_STATES:] = np.eye(N_ACTUATORS)
    B = np.vstack([jac.dx_du[:, act], np.eye(N_ACTUATORS)])
    E = np.vstack([jac.dx_du[:, fb], np.zeros((N_ACTUATORS, 2))])
    C = np.hstack([jac.dy_dx, jac.dy_du[:, act]])
    return StageSensitivity(A, B, E, C, jac.dy_du[:, act], jac.dy_du[:, fb])


def linearize_horizon(problem: OcpProblem, trajectory: Trajectory) -> HorizonLinearization:
    """
    Linearise the rollout with forward sensitivity accumulation.

    Starting from dx~_0/d(du) = 0, each stage propagates
    Y_i = C X_i + D S_i + Ey F_i and X_{i+1} = A X_i + B S_i + E F_i, where S_i
    selects du_i (zero at the terminal stage) and F_i = Y_{i-1}[imep, ca50] is the
    sensitivity of the fed-back prediction.
    """
    horizon = problem.horizon
    n = problem.n_decision
    stages = tuple(_stage_sensitivity(problem, trajectory, i) for i in range(horizon + 1))
    X = np.zeros((N_AUGMENTED, n))
    F = np.zeros((2, n))
    output_sens = np.zeros((horizon + 1, N_OUTPUTS, n))
    input_sens = np.zeros((horizon + 1, N_ACTUATORS, n))
    increment_sens = np.zeros((horizon + 1, N_ACTUATORS, n))
    for i, stage in enumerate(stages):
        S = increment_sens[i]
        if i < horizon:
            S[:, N_ACTUATORS * i : N_ACTUATORS * (i + 1)] = np.eye(N_ACTUATORS)
        output_sens[i] = stage.C @ X + stage.D @ S + stage.Ey @ F
        X = stage.A @ X + stage.B @ S + stage.E @ F
        input_sens[i] = X[N_STATES:]
        F = output_sens[i, :2]
    residuals = np.array(
        [
            stage_residuals(problem, trajectory.y[i], trajectory.u[i], trajectory.du[i], i)
            for i in range(horizon + 1)
        ]
    )
    return HorizonLinearization(
        trajectory, stages, output_sens, input_sens, increment_sens, residuals
    )


def minimum_slacks(problem: OcpProblem, trajectory: Trajectory) -> np.ndarray:
    """Smallest slacks that make the output bounds of `trajectory` feasible."""
    channels = problem.bounds.output_channels
    y = trajectory.y[:, channels]
    lower = np.array(problem.bounds.y_min)[channels] - y
    upper = y - np.array(problem.bounds.y_max)[channels]
    return np.maximum(np.maximum(lower, upper), 0.0).ravel()


def condense(
    problem: OcpProblem, linearization: HorizonLinearization, config: SolverConfig
) -> CondensedQp:
    """
    Build the dense QP in the step of the stacked increments and the slacks.

    The objective is the Gauss-Newton model sum_i ||r_i + J_i p||^2 of the stage
    costs plus slack_l1 * sum(s) + slack_l2 * ||s||^2, so its value at zero is the
    nonlinear cost of the nominal trajectory.
    """
    horizon = problem.horizon
    n_du = problem.n_decision
    bounds = problem.bounds
    inputs, outputs = bounds.input_channels, bounds.output_channels
    n_slack = (horizon + 1) * outputs.size
    n = n_du + n_slack
    d_y, d_u, d_du = residual_jacobians(problem.cost)
    nominal = linearization.nominal

    hessian = np.zeros((n_du, n_du))
    gradient = np.zeros(n_du)
    for i in range(horizon + 1):
        J = (
            d_y @ linearization.output_sens[i]
            + d_u @ linearization.input_sens[i]
            + d_du @ linearization.increment_sens[i]
        )
        hessian += J.T @ J
        gradient += J.T @ linearization.residuals[i]
    H = np.zeros((n, n))
    H[:n_du, :n_du] = 2.0 * hessian + config.regularization * np.eye(n_du)
    H[n_du:, n_du:] = 2.0 * config.slack_l2 * np.eye(n_slack)
    g = np.concatenate([2.0 * gradient, np.full(n_slack, config.slack_l1)])
    constant = float(np.sum(linearization.residuals**2))

    rows, limits = [], []
    u_min, u_max = np.array(bounds.u_min)[inputs], np.array(bounds.u_max)[inputs]
    # u_N repeats u_{N-1}, so stages 0..N-1 cover every actuator bound
    for i in range(horizon):
        sens = np.hstack([linearization.input_sens[i, inputs], np.zeros((inputs.size, n_slack))])
        u = nominal.u[i, inputs]
        rows += [sens, -sens]
        limits += [u_max - u, u - u_min]
    y_min, y_max = np.array(bounds.y_min)[outputs], np.array(bounds.y_max)[outputs]
    for i in range(horizon + 1):
        slack = np.zeros((outputs.size, n_slack))
        slack[:, i * outputs.size : (i + 1) * outputs.size] = np.eye(outputs.size)
        sens = linearization.output_sens[i, outputs]
        y = nominal.y[i, outputs]
        rows += [np.hstack([sens, -slack]), np.hstack([-sens, -slack])]
        limits += [y_max - y, y - y_min]
    if n_slack:
        rows.append(np.hstack([np.zeros((n_slack, n_du)), -np.eye(n_slack)]))
        limits.append(np.zeros(n_slack))
    G = np.vstack(rows) if rows else np.zeros((0, n))
    h = np.concatenate(limits) if limits else np.zeros(0)
    assert G.shape == (h.size, n), "condensed constraint bookkeeping"
    return CondensedQp(H, g, G, h, constant, n_du=n_du, n_slack=n_slack)


@dataclass(eq=False)
class SolveResult:
    """Outcome of one `solve_ocp` call with per-iteration telemetry."""

    du: np.ndarray  # (N, 3)
    u0: Actuation
    trajectory: Trajectory
    iterations: int
    costs: list = field(default_factory=list)
    predicted_changes: list = field(default_factory=list)
    kkt_residuals: list = field(default_factory=list)
    qp_iterations: list = field(default_factory=list)
    qp_status: list = field(default_factory=list)
    slacks: np.ndarray = field(default_factory=lambda: np.zeros(0))
    final_cost: float = float("nan")
    clamp_magnitude: float = 0.0
    solve_time_s: float = 0.0
    aborted: bool = False

    @property
    def degraded(self) -> bool:
        return self.aborted or any(status != CONVERGED for status in self.qp_status)

    @property
    def max_slack(self) -> float:
        return float(np.max(self.slacks, initial=0.0))


def initial_guess(
    problem: OcpProblem, config: SolverConfig, previous: np.ndarray | None = None
) -> np.ndarray:
    """
    Starting increments for a solve.

    Shift mode drops the first stage of `previous` and holds the last actuation
    (zero final increment); cold mode, or no previous solution, starts from zero.
    The guess is projected so that every actuation it implies is within bounds.
    """
    shape = (problem.horizon, N_ACTUATORS)
    if config.warm_start == "cold" or previous is None:
        return np.zeros(shape)
    previous = np.asarray(previous, dtype=float).reshape(-1, N_ACTUATORS)
    shifted = np.zeros(shape)
    count = min(problem.horizon - 1, previous.shape[0] - 1)
    if count > 0:
        shifted[:count] = previous[1 : count + 1]
    if not np.all(np.isfinite(shifted)):
        return np.zeros(shape)
    u = np.clip(
        problem.x0.u_prev.as_array() + np.cumsum(shifted, axis=0),
        problem.bounds.u_min,
        problem.bounds.u_max,
    )
    return np.diff(np.vstack([problem.x0.u_prev.as_array(), u]), axis=0)


def _finite_solution(solution: QpSolution) -> bool:
    return bool(np.all(np.isfinite(solution.z)))


def solve_ocp(
    problem: OcpProblem, config: SolverConfig | None = None, warm_start: np.ndarray | None = None
) -> SolveResult:
    """
    Solve the control problem with exactly `config.max_sqp_iters` full SQP steps.

    Parameters:
        problem (OcpProblem): Problem to solve.
        config (SolverConfig | None): Solver settings, defaults when omitted.
        warm_start (np.ndarray | None): Increments returned by the previous solve;
            shifted by one stage in shift mode, ignored in cold mode.

    Returns:
        SolveResult: Increments, the clamped first actuation, the predicted
        trajectory and per-iteration telemetry. If an iterate turns non-finite
        the solve stops with the last finite iterate and `aborted` set.
    """
    config = config or SolverConfig()
    started = time.perf_counter()
    du = initial_guess(problem, config, warm_start)
    result = SolveResult(du=du, u0=problem.x0.u_prev, trajectory=None, iterations=0)
    trajectory = None
    try:
        trajectory = rollout(problem, du)
        for _ in range(config.max_sqp_iters):
            linearization = linearize_horizon(problem, trajectory)
            qp = condense(problem, linearization, config)
            solution = solve_qp(qp, config.qp_max_iters, config.qp_tolerance)
            if not _finite_solution(solution):
                raise FloatingPointError("QP returned a non-finite step")
            slack_start = minimum_slacks(problem, trajectory)
            start_value = qp.objective(np.concatenate([np.zeros(qp.n_du), slack_start]))
            candidate = du + solution.z[: qp.n_du].reshape(du.shape)
            candidate_trajectory = rollout(problem, candidate)

            result.iterations += 1
            result.costs.append(qp.constant)
            result.predicted_changes.append(solution.objective - start_value)
            result.kkt_residuals.append(
                (solution.stationarity, solution.primal_residual, solution.complementarity)
            )
            result.qp_iterations.append(solution.iterations)
            result.qp_status.append(solution.status)
            result.slacks = solution.z[qp.n_du :]
            du, trajectory = candidate, candidate_trajectory
    except (NmpcError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.warning("SQP aborted after %d iterations: %s", result.iterations, exc)
        result.aborted = True
        if trajectory is None:
            # even the initial rollout failed; hold the previous actuation
            result.solve_time_s = time.perf_counter() - started
            result.du = np.zeros_like(du)
            return result

    bounds = problem.bounds.actuators
    raw_u0 = problem.x0.u_prev.as_array() + du[0]
    u0 = bounds.clip(raw_u0)
    clamp = float(np.abs(u0 - raw_u0).max())
    if clamp > 0:
        relative = clamp / max(float(bounds.span.max()), np.finfo(float).tiny)
        log = logger.warning if relative > 1e-8 else logger.debug
        log("Clamped first actuation by %.3e (%.1e of the actuator range)", clamp, relative)
    result.du = du
    result.u0 = Actuation.from_array(u0)
    result.trajectory = trajectory
    result.final_cost = total_cost(problem, trajectory)
    result.clamp_magnitude = clamp
    result.solve_time_s = time.perf_counter() - started
    logger.debug(
        "SQP solve: %d iterations, cost %.6g, KKT %s, %.3f ms",
        result.iterations,
        result.final_cost,
        result.kkt_residuals[-1] if result.kkt_residuals else None,
        1e3 * result.solve_time_s,
    )
    return result


class SolveTelemetry:
    """Accumulates one row per SQP iteration and writes them as CSV."""

    COLUMNS = [
        "cycle",
        "iteration",
        "cost",
        "predicted_change",
        "kkt_stationarity",
        "kkt_primal",
        "kkt_complementarity",
        "qp_iterations",
        "qp_status",
        "max_slack",
        "solve_time_us",
    ]

    def __init__(self):
        self.rows = []

    def record(self, cycle: int, result: SolveResult) -> None:
        solve_time_us = 1e6 * result.solve_time_s
        for iteration in range(result.iterations):
            stationarity, primal, complementarity = result.kkt_residuals[iteration]
            self.rows.append(
                [
                    cycle,
                    iteration + 1,
                    result.costs[iteration],
                    result.predicted_changes[iteration],
                    stationarity,
                    primal,
                    complementarity,
                    result.qp_iterations[iteration],
                    result.qp_status[iteration],
                    result.max_slack,
                    solve_time_us,
                ]
            )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.COLUMNS)

    def to_csv(self, destination: str | PathLike) -> Path:
        path = Path(destination)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

"""
Cycle-to-Cycle NMPC Controller.

Owns everything that persists between engine cycles: the LSTM state estimate,
the previous measurement (fed back as model input), the actuation last sent and
the warm start. The in-process closed loop and the UDP controller node both
drive the same object, so the transport does not change what is computed.

Timing convention for cycle k:
- the plant has just produced y(k) under u(k), the actuation sent last cycle;
- the model is advanced with [y(k-1), u(k)] to x(k+1), which also yields the
  one-step prediction of y(k);
- the control problem starts from x~0 = (x(k+1), u(k)) with feedback y(k) and
  returns u(k+1) = u(k) + du_0.
u(k) is the actuation the caller reports as applied when it passes one, and the
controller's previous reply otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from lstm_nmpc.domain import Actuation, LstmState, ModelOutput
from lstm_nmpc.nn_core import NetworkWeights, model_step_array, settle_state
from lstm_nmpc.ocp import (
    DEFAULT_HORIZON,
    AugmentedState,
    Bounds,
    CostWeights,
    OcpProblem,
    Reference,
    assemble_model_input,
)
from lstm_nmpc.sqp_solver import SolverConfig, SolveResult, SolveTelemetry, solve_ocp

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ControlStep:
    """What the controller decided on one cycle and why."""

    cycle: int
    actuation: Actuation
    predicted: ModelOutput
    state: LstmState
    result: SolveResult


class NmpcController:
    """
    Stateful NMPC wrapper around `solve_ocp`.

    Parameters:
        weights (NetworkWeights): Trained model.
        u_init (Actuation): Actuation in force before the first cycle.
        horizon (int): Prediction horizon N.
        cost (CostWeights | None): Stage weights.
        bounds (Bounds | None): Actuator and output limits.
        solver (SolverConfig | None): SQP settings.
        settle_cycles (int): Cycles used to warm the LSTM state on the first
            measurement.
    """

    def __init__(
        self,
        weights: NetworkWeights,
        u_init: Actuation,
        horizon: int = DEFAULT_HORIZON,
        cost: CostWeights | None = None,
        bounds: Bounds | None = None,
        solver: SolverConfig | None = None,
        settle_cycles: int = 10,
    ):
        self.weights = weights
        self.horizon = horizon
        self.cost = cost or CostWeights()
        self.bounds = bounds or Bounds()
        self.solver = solver or SolverConfig()
        self.settle_cycles = settle_cycles
        if not self.bounds.actuators.contains(u_init):
            raise ValueError(f"initial actuation {u_init} violates actuator bounds")
        self.u_init = u_init
        self.telemetry = SolveTelemetry()
        self.reset()

    def reset(self) -> None:
        """Forget the state estimate and warm start."""
        self.state: LstmState | None = None
        self.y_prev: tuple | None = None
        self.u_prev = self.u_init
        self.warm_start: np.ndarray | None = None
        self.last_step: ControlStep | None = None

    def step(
        self,
        cycle: int,
        measurement: ModelOutput,
        reference: tuple[float, float] | Reference,
        applied: Actuation | None = None,
    ) -> ControlStep:
        """
        Handle the measurement of `cycle` and return the actuation for the next one.

        `reference` is either the (imep, ca50) target for the next cycle, held
        over the horizon, or a Reference covering stages 0..N. `applied` is the
        actuation the plant ran during `cycle`; when it differs from the last
        reply (a held fallback, a clipped command) the model and the increment
        penalty start from it instead.

        Raises:
            ValueError: If `applied` violates the actuator bounds.
        """
        if applied is not None and applied != self.u_prev:
            if not self.bounds.actuators.contains(applied):
                raise ValueError(f"applied actuation {applied} violates actuator bounds")
            logger.info("Cycle %d: plant applied %s instead of %s", cycle, applied, self.u_prev)
            self.u_prev = applied
        feedback = measurement.feedback()
        if self.state is None:
            self.state = settle_state(
                self.weights,
                assemble_model_input(feedback, self.u_prev.as_array()),
                self.settle_cycles,
            )
            self.y_prev = feedback
        x_next, y_hat = model_step_array(
            self.weights,
            self.state.as_array(),
            assemble_model_input(self.y_prev, self.u_prev.as_array()),
        )
        state = LstmState.from_array(x_next)
        if not isinstance(reference, Reference):
            reference = Reference.constant(reference[0], reference[1], self.horizon + 1)
        problem = OcpProblem(
            weights=self.weights,
            x0=AugmentedState(state, self.u_prev),
            y_feedback=feedback,
            reference=reference,
            horizon=self.horizon,
            cost=self.cost,
            bounds=self.bounds,
        )
        result = solve_ocp(problem, self.solver, self.warm_start)
        self.telemetry.record(cycle, result)
        if result.aborted:
            logger.warning("Cycle %d: solve aborted, holding the previous actuation", cycle)

        self.state = state
        self.y_prev = feedback
        self.u_prev = result.u0
        self.warm_start = result.du
        self.last_step = ControlStep(
            cycle=cycle,
            actuation=result.u0,
            predicted=ModelOutput.from_array(y_hat),
            state=state,
            result=result,
        )
        return self.last_step

"""Horizon problem: augmented dynamics, rollout, stage cost and bound margins."""

import numpy as np
import pandas as pd
import pytest
from conftest import U_NOMINAL

from lstm_nmpc.domain import Actuation, LstmState, ModelOutput
from lstm_nmpc.nn_core import model_step
from lstm_nmpc.ocp import (
    AugmentedState,
    Bounds,
    CostWeights,
    OcpProblem,
    Reference,
    Trajectory,
    augmented_step,
    constraint_residuals,
    residual_jacobians,
    residual_labels,
    rollout,
    stage_cost,
    stage_residuals,
    total_cost,
)


def _problem(weights, horizon=3, cost=None, bounds=None, reference=None, u_prev=U_NOMINAL):
    lstm = LstmState.from_array(np.linspace(-0.2, 0.3, 8))
    return OcpProblem(
        weights=weights,
        x0=AugmentedState(lstm, u_prev),
        y_feedback=(3.1, 5.5),
        reference=reference or Reference.constant(3.0, 6.0, horizon + 1),
        horizon=horizon,
        cost=cost or CostWeights(),
        bounds=bounds or Bounds(),
    )


def test_zero_increment_repeats_previous_actuation(random_weights):
    problem = _problem(random_weights)
    x_next, y = augmented_step(problem, problem.x0, (0.0, 0.0, 0.0), (3.1, 5.5))
    assert x_next.u_prev == U_NOMINAL
    lstm_next, y_direct = model_step(
        random_weights, problem.x0.lstm, np.array([3.1, 5.5, *U_NOMINAL.as_array()])
    )
    assert x_next.lstm == lstm_next
    np.testing.assert_array_equal(y.as_array(), y_direct.as_array())


def test_two_augmented_steps_match_the_bare_model(random_weights):
    problem = _problem(random_weights)
    du = [np.array([0.1, -0.05, 10.0]), np.array([-0.2, 0.1, -5.0])]
    x1, y0 = augmented_step(problem, problem.x0, du[0], (3.1, 5.5))
    x2, y1 = augmented_step(problem, x1, du[1], y0.feedback())

    u0 = U_NOMINAL.as_array() + du[0]
    u1 = u0 + du[1]
    s1, r0 = model_step(random_weights, problem.x0.lstm, np.array([3.1, 5.5, *u0]))
    s2, r1 = model_step(random_weights, s1, np.array([*r0.feedback(), *u1]))
    assert x2.lstm == s2
    np.testing.assert_allclose(x2.u_prev.as_array(), u1)
    np.testing.assert_array_equal(y1.as_array(), r1.as_array())


@pytest.mark.parametrize(
    "order",
    [(1, 0, 2, 3, 4), (0, 1, 3, 2, 4), (0, 1, 2, 4, 3), (2, 3, 4, 0, 1), (4, 3, 2, 1, 0)],
)
def test_input_assembly_order_is_observable(random_weights, order):
    problem = _problem(random_weights)
    _, y = augmented_step(problem, problem.x0, (0.1, -0.05, 10.0), (3.1, 5.5))
    assembled = np.array([3.1, 5.5, *(U_NOMINAL.as_array() + [0.1, -0.05, 10.0])])
    _, y_ordered = model_step(random_weights, problem.x0.lstm, assembled)
    _, y_permuted = model_step(random_weights, problem.x0.lstm, assembled[list(order)])
    np.testing.assert_array_equal(y.as_array(), y_ordered.as_array())
    assert np.abs(y_permuted.as_array() - y.as_array()).max() > 1e-6


def test_bad_increment_rejected(random_weights):
    problem = _problem(random_weights)
    with pytest.raises(ValueError):
        augmented_step(problem, problem.x0, (0.0, np.nan, 0.0), (3.1, 5.5))
    with pytest.raises(ValueError):
        augmented_step(problem, problem.x0, (0.0, 0.0), (3.1, 5.5))


def test_rollout_accumulates_increments(random_weights):
    problem = _problem(random_weights)
    du = np.array([[0.1, 0.0, 5.0], [0.05, 0.1, -2.0], [-0.1, 0.05, 1.0]])
    trajectory = rollout(problem, du)
    expected = U_NOMINAL.as_array() + np.cumsum(du, axis=0)
    np.testing.assert_allclose(trajectory.u[:3], expected)
    np.testing.assert_array_equal(trajectory.u[3], trajectory.u[2])
    np.testing.assert_array_equal(trajectory.du[3], np.zeros(3))
    assert trajectory.states.shape == (5, 11)
    np.testing.assert_array_equal(trajectory.feedback[0], [3.1, 5.5])
    np.testing.assert_array_equal(trajectory.feedback[1:], trajectory.y[:-1, :2])


def test_rollout_is_pure(random_weights):
    problem = _problem(random_weights)
    du = np.full(9, 0.01)
    first = rollout(problem, du)
    second = rollout(problem, du)
    np.testing.assert_array_equal(first.y, second.y)
    np.testing.assert_array_equal(first.states, second.states)


def test_stage_cost_zero_when_everything_is_on_target(random_weights):
    problem = _problem(random_weights, cost=CostWeights(q_nox=0.0, r_doi_fuel=0.0, r_doi_water=0.0))
    cost = stage_cost(problem, ModelOutput(3.0, 6.0, 80.0, 2.0), U_NOMINAL, (0, 0, 0), 0)
    assert cost == 0.0


def test_stage_cost_single_imep_term(random_weights):
    cost = CostWeights(q_imep=1.0, q_ca50=0.0, q_nox=0.0, r_doi_fuel=0.0, r_doi_water=0.0)
    problem = _problem(random_weights, cost=cost)
    value = stage_cost(problem, ModelOutput(2.5, 6.0, 0.0, 0.0), Actuation(0, 0, 255), (0, 0, 0), 0)
    assert value == pytest.approx(0.25, rel=1e-15)


def test_stage_cost_term_by_term(random_weights):
    weights = CostWeights()
    problem = _problem(random_weights, cost=weights, reference=Reference([3.0, 4.0, 4.0, 4.0], [6.0] * 4))
    y = ModelOutput(3.5, 7.0, 200.0, 4.0)
    u = Actuation(0.9, 0.4, 260.0)
    du = (0.1, -0.2, 3.0)
    expected = (
        10.0 * (4.0 - 3.5) ** 2
        + 1.0 * (6.0 - 7.0) ** 2
        + 0.1 * 0.9**2
        + 0.1 * 0.4**2
        + 1e-6 * 200.0**2
        + 1.0 * 0.1**2
        + 1.0 * 0.2**2
        + 2e-4 * 3.0**2
    )
    assert stage_cost(problem, y, u, du, 1) == pytest.approx(expected, rel=1e-12)


def test_total_cost_sums_stages(random_weights):
    problem = _problem(random_weights)
    trajectory = rollout(problem, np.full(9, 0.02))
    stages = [
        stage_cost(problem, trajectory.y[i], trajectory.u[i], trajectory.du[i], i) for i in range(4)
    ]
    assert total_cost(problem, trajectory) == pytest.approx(sum(stages))


def test_residual_jacobians_are_the_scales():
    cost = CostWeights()
    d_y, d_u, d_du = residual_jacobians(cost)
    y, u, du = np.array([1.0, 2.0, 3.0, 4.0]), np.array([0.5, 0.6, 270.0]), np.array([0.1, 0.2, 3.0])
    scales = cost.residual_scales()
    raw = np.array([1.0, 2.0, 0.5, 0.6, 3.0, 0.1, 0.2, 3.0])
    np.testing.assert_allclose(d_y @ y + d_u @ u + d_du @ du, scales * raw)


def test_stage_index_is_checked(random_weights):
    problem = _problem(random_weights)
    with pytest.raises(ValueError):
        stage_residuals(problem, np.zeros(4), np.zeros(3), np.zeros(3), 4)


def _trajectory(u_rows, y_rows):
    u = np.asarray(u_rows, dtype=float)
    y = np.asarray(y_rows, dtype=float)
    n = u.shape[0]
    return Trajectory(
        states=np.zeros((n + 1, 11)),
        u=u,
        du=np.zeros_like(u),
        y=y,
        feedback=y[:, :2],
    )


def test_constraint_margins_positive_mid_range(random_weights):
    problem = _problem(random_weights)
    trajectory = _trajectory([[0.75, 0.5, 255.0]] * 4, [[3.5, 8.5, 250.0, 7.5]] * 4)
    margins = constraint_residuals(problem, trajectory)
    assert margins.size == 4 * (2 * 3 + 2 * 4)
    assert np.all(margins > 0)
    assert len(residual_labels(problem)) == margins.size


def test_constraint_margin_on_the_boundary_is_zero(random_weights):
    problem = _problem(random_weights)
    trajectory = _trajectory([[1.5, 0.5, 255.0]] * 4, [[3.5, 8.5, 250.0, 7.5]] * 4)
    margins = dict(zip(residual_labels(problem), constraint_residuals(problem, trajectory)))
    assert margins["doi_fuel_max[0]"] == 0.0
    assert margins["doi_fuel_min[0]"] == pytest.approx(1.5)


def test_violated_output_bound_is_negative(random_weights):
    problem = _problem(random_weights)
    y_rows = [[3.5, 8.5, 250.0, 7.5]] * 4
    y_rows[2] = [3.5, 8.5, 250.0, 16.0]
    trajectory = _trajectory([[0.75, 0.5, 255.0]] * 4, y_rows)
    margins = dict(zip(residual_labels(problem), constraint_residuals(problem, trajectory)))
    assert margins["mprr_max[2]"] == pytest.approx(-1.0)
    assert margins["mprr_max[0]"] == pytest.approx(7.5)


def test_deselected_channels_drop_out(random_weights):
    bounds = Bounds(output_selected=(False, False, True, False), input_selected=(True, False, False))
    problem = _problem(random_weights, bounds=bounds)
    labels = residual_labels(problem)
    assert labels[:4] == ["doi_fuel_min[0]", "doi_fuel_max[0]", "nox_min[0]", "nox_max[0]"]
    assert np.array_equal(bounds.F_u, np.diag([1.0, 0.0, 0.0]))


def test_reference_holds_past_the_end():
    reference = Reference([3.0, 4.0], [6.0, 7.0])
    assert reference.at(5) == (4.0, 7.0)
    window = reference.slice(1, 4)
    np.testing.assert_array_equal(window.r_imep, [4.0, 4.0, 4.0, 4.0])


def test_step_profile_cycles_through_levels():
    reference = Reference.step_profile()
    assert len(reference) == 650
    assert reference.at(0) == (3.0, 6.0)
    assert reference.at(50)[0] == 4.0
    assert reference.at(349)[0] == 4.5
    assert reference.at(350)[0] == 3.0
    np.testing.assert_array_equal(reference.r_ca50, np.full(650, 6.0))


def test_reference_from_sparse_rows():
    frame = pd.DataFrame({"cycle": [0, 10], "r_imep": [3.0, 5.0], "r_ca50": [6.0, 8.0]})
    reference = Reference.from_frame(frame, n_cycles=20)
    assert reference.at(9) == (3.0, 6.0)
    assert reference.at(10) == (5.0, 8.0)
    assert len(reference) == 20


def test_problem_validation(random_weights):
    with pytest.raises(ValueError):
        _problem(random_weights, horizon=0)
    with pytest.raises(ValueError):
        _problem(random_weights, reference=Reference.constant(3.0, 6.0, 3))
    with pytest.raises(ValueError):
        _problem(random_weights, u_prev=Actuation(1.8, 0.2, 255.0))


def test_cost_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(q_imep=-1.0)
    with pytest.raises(ValueError):
        CostWeights(r_delta=(1.0, 0.0, 2e-4))

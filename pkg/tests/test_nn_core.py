"""
Network evaluation and sensitivities.

 Group 1 - dense and LSTM layers on hand-computable cases
 Group 2 - architecture validation and parameter bookkeeping
 Group 3 - model step: zero network, determinism, error reporting
 Group 4 - analytic Jacobians against central finite differences
"""

import math

import numpy as np
import pytest
from conftest import U_NOMINAL, make_linear_weights, make_random_weights

from lstm_nmpc.domain import LstmState, ModelInput
from lstm_nmpc.errors import LayerDimensionError, NetworkSpecError, NonFiniteActivationError
from lstm_nmpc.nn_core import (
    LayerSpec,
    NetworkSpec,
    NetworkWeights,
    Normalization,
    dense_forward,
    lstm_step,
    model_jacobians,
    model_step,
    model_step_array,
    model_step_with_jacobians,
    settle_state,
)

FD_STEP = 1e-6


# ── Group 1: layers ──────────────────────────────────────────────────────────


def test_dense_zero_weights_give_zero_vector():
    layer = LayerSpec("dense", 3, 2, "tanh")
    out = dense_forward(layer, np.zeros((2, 3)), np.zeros(2), np.array([0.3, -1.2, 4.0]))
    np.testing.assert_array_equal(out, np.zeros(2))


def test_dense_identity_linear_passes_input_through():
    layer = LayerSpec("dense", 3, 3, "linear")
    x = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(dense_forward(layer, np.eye(3), np.zeros(3), x), x)


def test_dense_scalar_tanh():
    layer = LayerSpec("dense", 1, 1, "tanh")
    out = dense_forward(layer, np.array([[2.0]]), np.array([0.5]), np.array([0.25]))
    assert out[0] == pytest.approx(0.7615941559557649, abs=1e-15)


def test_dense_width_mismatch_names_layer():
    layer = LayerSpec("dense", 3, 2)
    with pytest.raises(LayerDimensionError) as info:
        dense_forward(layer, np.zeros((2, 3)), np.zeros(2), np.zeros(4), layer_index=2)
    assert (info.value.layer_index, info.value.expected, info.value.received) == (2, 3, 4)


def _zero_lstm(input_width=3):
    layer = LayerSpec("lstm", input_width, 4, "tanh")
    params = tuple(np.zeros(shape) for shape in layer.parameter_shapes())
    return layer, params


def test_lstm_zero_network_keeps_zero_state():
    layer, params = _zero_lstm()
    state = lstm_step(layer, params, LstmState.zeros(), np.array([1.0, -2.0, 0.5]))
    np.testing.assert_array_equal(state.c, np.zeros(4))
    np.testing.assert_array_equal(state.h, np.zeros(4))


def test_lstm_half_open_gates():
    layer, params = _zero_lstm()
    state = LstmState(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(4))
    nxt = lstm_step(layer, params, state, np.zeros(3))
    np.testing.assert_allclose(nxt.c, [0.5, 0.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(nxt.h, [0.5 * math.tanh(0.5), 0.0, 0.0, 0.0], atol=1e-15)
    assert nxt.h[0] == pytest.approx(0.231059, abs=1e-6)


def test_lstm_hidden_state_bounded_for_random_weights():
    rng = np.random.default_rng(7)
    layer = LayerSpec("lstm", 6, 4, "tanh")
    params = tuple(rng.standard_normal(shape) for shape in layer.parameter_shapes())
    state = LstmState.zeros()
    for _ in range(200):
        state = lstm_step(layer, params, state, rng.standard_normal(6))
        assert np.all(np.abs(state.h) < 1.0)


def test_lstm_width_mismatch():
    layer, params = _zero_lstm()
    with pytest.raises(LayerDimensionError):
        lstm_step(layer, params, LstmState.zeros(), np.zeros(5))


# ── Group 2: architecture ────────────────────────────────────────────────────


def test_default_architecture_parameter_count():
    spec = NetworkSpec.default()
    assert spec.parameter_count == 2300
    assert abs(spec.parameter_count - 2260) <= 0.05 * 2260
    assert [layer.kind for layer in spec.layers].count("lstm") == 1


@pytest.mark.parametrize(
    "layers",
    [
        (LayerSpec("dense", 5, 4), LayerSpec("dense", 4, 4, "linear")),
        (
            LayerSpec("lstm", 5, 4),
            LayerSpec("lstm", 4, 4),
            LayerSpec("dense", 4, 4, "linear"),
        ),
        (LayerSpec("lstm", 5, 3), LayerSpec("dense", 3, 4, "linear")),
        (LayerSpec("lstm", 5, 4), LayerSpec("dense", 5, 4, "linear")),
        (LayerSpec("lstm", 6, 4), LayerSpec("dense", 4, 4, "linear")),
    ],
    ids=["no-lstm", "two-lstm", "hidden-size", "width-chain", "input-width"],
)
def test_invalid_architectures_rejected(layers):
    with pytest.raises(NetworkSpecError):
        NetworkSpec(layers)


def test_layer_spec_rejects_unknown_activation_and_zero_width():
    with pytest.raises(NetworkSpecError):
        LayerSpec("dense", 3, 2, "relu")
    with pytest.raises(NetworkSpecError):
        LayerSpec("dense", 0, 2)


def test_normalization_scales_must_be_positive():
    with pytest.raises(NetworkSpecError):
        Normalization(np.zeros(5), np.array([1.0, 1.0, 0.0, 1.0, 1.0]), np.zeros(4), np.ones(4))


def test_vector_round_trip_preserves_weights(small_spec):
    weights = make_random_weights(small_spec, seed=3)
    rebuilt = NetworkWeights.from_vector(small_spec, weights.to_vector(), weights.normalization)
    assert rebuilt == weights
    with pytest.raises(NetworkSpecError):
        NetworkWeights.from_vector(small_spec, np.zeros(small_spec.parameter_count - 1))


def test_weights_are_read_only(random_weights):
    with pytest.raises(ValueError):
        random_weights.params[0][0][0, 0] = 1.0


# ── Group 3: model step ──────────────────────────────────────────────────────


def test_zero_network_outputs_denormalisation_offsets(small_spec):
    norm = Normalization(np.zeros(5), np.ones(5), np.array([3.0, 6.0, 100.0, 2.0]), np.ones(4))
    weights = NetworkWeights.zeros(small_spec, norm)
    _, y = model_step(weights, LstmState.zeros(), ModelInput(3.0, 6.0, 0.7, 0.2, 255.0))
    np.testing.assert_array_equal(y.as_array(), [3.0, 6.0, 100.0, 2.0])


def test_model_step_is_pure(random_weights):
    state = LstmState(np.full(4, 0.1), np.full(4, -0.2))
    u = ModelInput(3.1, 5.5, 0.8, 0.3, 240.0)
    first = model_step(random_weights, state, u)
    second = model_step(random_weights, state, u)
    assert first[0] == second[0]
    assert first[1] == second[1]


def test_model_step_accepts_arrays(random_weights):
    u = np.array([3.1, 5.5, 0.8, 0.3, 240.0])
    state, y = model_step(random_weights, LstmState.zeros(), u)
    x_next, y_arr = model_step_array(random_weights, np.zeros(8), u)
    np.testing.assert_array_equal(state.as_array(), x_next)
    np.testing.assert_array_equal(y.as_array(), y_arr)


def test_non_finite_input_reports_first_layer(random_weights):
    with pytest.raises(NonFiniteActivationError) as info:
        model_step_array(random_weights, np.zeros(8), np.array([np.nan, 6.0, 0.7, 0.2, 255.0]))
    assert info.value.layer_index == 0


def test_wrong_input_width(random_weights):
    with pytest.raises(LayerDimensionError):
        model_step_array(random_weights, np.zeros(8), np.zeros(4))


def test_settle_state_matches_manual_iteration(random_weights):
    u = np.array([3.0, 6.0, 0.7, 0.2, 255.0])
    x = np.zeros(8)
    for _ in range(25):
        x, _ = model_step_array(random_weights, x, u)
    np.testing.assert_array_equal(settle_state(random_weights, u, cycles=25).as_array(), x)


# ── Group 4: Jacobians ───────────────────────────────────────────────────────


def _finite_difference(weights, x, u):
    """Central differences; input steps are FD_STEP on the normalised scale."""
    jx = np.zeros((8, 8))
    jyx = np.zeros((4, 8))
    for k in range(8):
        e = np.zeros(8)
        e[k] = FD_STEP
        xp, yp = model_step_array(weights, x + e, u)
        xm, ym = model_step_array(weights, x - e, u)
        jx[:, k] = (xp - xm) / (2 * FD_STEP)
        jyx[:, k] = (yp - ym) / (2 * FD_STEP)
    ju = np.zeros((8, 5))
    jyu = np.zeros((4, 5))
    for k in range(5):
        step = FD_STEP * weights.normalization.input_scale[k]
        e = np.zeros(5)
        e[k] = step
        xp, yp = model_step_array(weights, x, u + e)
        xm, ym = model_step_array(weights, x, u - e)
        ju[:, k] = (xp - xm) / (2 * step)
        jyu[:, k] = (yp - ym) / (2 * step)
    return jx, ju, jyx, jyu


def _max_relative_deviation(analytic, numeric):
    scale = max(1.0, float(np.abs(numeric).max()))
    return float(np.abs(analytic - numeric).max()) / scale


def test_zero_network_jacobians(small_spec):
    weights = NetworkWeights.zeros(small_spec)
    jac = model_jacobians(weights, LstmState.zeros(), np.zeros(5))
    # forget gate sigmoid(0) carries half the cell state over, the output gate halves it again
    expected = np.zeros((8, 8))
    expected[:4, :4] = 0.5 * np.eye(4)
    expected[4:, :4] = 0.25 * np.eye(4)
    np.testing.assert_array_equal(jac.dx_dx, expected)
    np.testing.assert_array_equal(jac.dx_du, np.zeros((8, 5)))
    np.testing.assert_array_equal(jac.dy_dx, np.zeros((4, 8)))
    np.testing.assert_array_equal(jac.dy_du, np.zeros((4, 5)))


def test_jacobians_match_finite_differences_at_seed_42(random_weights):
    rng = np.random.default_rng(42)
    x = 0.5 * rng.standard_normal(8)
    u = np.array([3.0, 6.0, 0.75, 0.5, 255.0]) + np.array([1.0, 3.0, 0.4, 0.3, 60.0]) * rng.standard_normal(5)
    _, _, jac = model_step_with_jacobians(random_weights, x, u)
    numeric = _finite_difference(random_weights, x, u)
    for analytic, fd in zip((jac.dx_dx, jac.dx_du, jac.dy_dx, jac.dy_du), numeric):
        assert _max_relative_deviation(analytic, fd) <= 1e-6


def test_jacobians_match_finite_differences_at_random_points():
    spec = NetworkSpec.default()
    rng = np.random.default_rng(1)
    worst = 0.0
    for point in range(100):
        weights = make_random_weights(spec, seed=point, scale=0.3)
        x = 0.5 * rng.standard_normal(8)
        u = np.array([3.0, 6.0, 0.75, 0.5, 255.0]) + np.array(
            [1.0, 3.0, 0.4, 0.3, 60.0]
        ) * rng.standard_normal(5)
        _, _, jac = model_step_with_jacobians(weights, x, u)
        numeric = _finite_difference(weights, x, u)
        for analytic, fd in zip((jac.dx_dx, jac.dx_du, jac.dy_dx, jac.dy_du), numeric):
            worst = max(worst, _max_relative_deviation(analytic, fd))
    assert worst <= 1e-6


def test_linear_network_jacobian_is_constant():
    weights = make_linear_weights(seed=5)
    rng = np.random.default_rng(11)
    first = model_jacobians(weights, LstmState.from_array(rng.standard_normal(8)), rng.standard_normal(5))
    second = model_jacobians(
        weights, LstmState.from_array(rng.standard_normal(8)), 10 * rng.standard_normal(5)
    )
    for a, b in zip(
        (first.dx_dx, first.dx_du, first.dy_dx, first.dy_du),
        (second.dx_dx, second.dx_du, second.dy_dx, second.dy_du),
    ):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_jacobian_pass_matches_plain_step(random_weights):
    x = np.linspace(-0.4, 0.4, 8)
    u = np.concatenate([[3.2, 5.0], U_NOMINAL.as_array()])
    x_a, y_a, _ = model_step_with_jacobians(random_weights, x, u)
    x_b, y_b = model_step_array(random_weights, x, u)
    np.testing.assert_array_equal(x_a, x_b)
    np.testing.assert_array_equal(y_a, y_b)

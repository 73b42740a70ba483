"""
Shared fixtures.

Networks used across the suite:
- `small_spec` / `random_weights`: a small tanh network with seeded random
  parameters, for derivative and shape checks.
- `linear_weights`: linear activations with constant gates, so the model is
  affine in (state, input) and stable under IMEP/CA50 feedback.
- `static_weights`: a hand-built memoryless network whose IMEP rises with fuel
  duration and whose CA50 falls with NVO and rises with water.
"""

import os
import sys

import numpy as np
import pytest

_SRC = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src")
sys.path.insert(0, _SRC)

from lstm_nmpc.domain import HIDDEN_SIZE, N_INPUTS, N_OUTPUTS, Actuation, ModelOutput  # noqa: E402
from lstm_nmpc.nn_core import (  # noqa: E402
    NetworkSpec,
    NetworkWeights,
    Normalization,
    model_step_array,
)
from lstm_nmpc.ocp import Bounds, CostWeights  # noqa: E402
from lstm_nmpc.surrogate_plant import PlantParams  # noqa: E402

# physical operating ranges used to normalise the hand-built networks
INPUT_OFFSET = (3.0, 6.0, 0.75, 0.5, 255.0)
INPUT_SCALE = (1.0, 3.0, 0.4, 0.3, 60.0)
OUTPUT_OFFSET = (3.0, 6.0, 100.0, 3.0)
OUTPUT_SCALE = (1.0, 3.0, 50.0, 2.0)
# large enough that sigmoid(bias) rounds to 1.0 in float64
OPEN_GATE = 40.0
U_NOMINAL = Actuation(0.7, 0.2, 255.0)


def physical_normalization() -> Normalization:
    return Normalization(INPUT_OFFSET, INPUT_SCALE, OUTPUT_OFFSET, OUTPUT_SCALE)


def make_random_weights(spec: NetworkSpec, seed: int, scale: float = 0.5) -> NetworkWeights:
    """Every weight and bias drawn from N(0, scale^2)."""
    rng = np.random.default_rng(seed)
    vector = scale * rng.standard_normal(spec.parameter_count)
    return NetworkWeights.from_vector(spec, vector, physical_normalization())


def make_linear_weights(seed: int = 0, scale: float = 0.1) -> NetworkWeights:
    """
    Affine network: linear LSTM with weightless gates (i = f = 0.5, o = 1).

    c+ = 0.5 c + 0.5 (W_gx a + W_gh h + b_g) and h+ = c+, followed by one
    linear output layer.
    """
    rng = np.random.default_rng(seed)
    spec = NetworkSpec.from_widths((), (), "linear", "linear")
    hidden = HIDDEN_SIZE
    w_x = np.zeros((4 * hidden, N_INPUTS))
    w_h = np.zeros((4 * hidden, hidden))
    bias = np.zeros(4 * hidden)
    w_x[2 * hidden : 3 * hidden] = scale * rng.standard_normal((hidden, N_INPUTS))
    w_h[2 * hidden : 3 * hidden] = scale * rng.standard_normal((hidden, hidden))
    bias[2 * hidden : 3 * hidden] = scale * rng.standard_normal(hidden)
    bias[3 * hidden :] = OPEN_GATE
    w_out = 0.5 * rng.standard_normal((N_OUTPUTS, hidden))
    return NetworkWeights(
        spec, ((w_x, w_h, bias), (w_out, np.zeros(N_OUTPUTS))), physical_normalization()
    )


def make_static_weights() -> NetworkWeights:
    """
    Memoryless network with known signs.

    i = o = 1 and f = 0, so h+ = c+ = g with g = (fuel, nvo, water, 0) in
    normalised units; imep = h0, ca50 = 0.5 (h2 - h1), nox = 0.5 h0 and
    mprr = 0.3 h0, again normalised.
    """
    spec = NetworkSpec.from_widths((), (), "linear", "linear")
    hidden = HIDDEN_SIZE
    w_x = np.zeros((4 * hidden, N_INPUTS))
    w_h = np.zeros((4 * hidden, hidden))
    bias = np.zeros(4 * hidden)
    bias[:hidden] = OPEN_GATE
    bias[hidden : 2 * hidden] = -OPEN_GATE
    bias[3 * hidden :] = OPEN_GATE
    g = slice(2 * hidden, 3 * hidden)
    w_x[g][0, 2] = 1.0
    w_x[g][1, 4] = 1.0
    w_x[g][2, 3] = 1.0
    w_out = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, -0.5, 0.5, 0.0],
            [0.5, 0.0, 0.0, 0.0],
            [0.3, 0.0, 0.0, 0.0],
        ]
    )
    return NetworkWeights(
        spec, ((w_x, w_h, bias), (w_out, np.zeros(N_OUTPUTS))), physical_normalization()
    )


def model_fixed_point(weights: NetworkWeights, u: Actuation, cycles: int = 400):
    """Iterate the model with its own IMEP/CA50 fed back until it settles."""
    x = np.zeros(2 * HIDDEN_SIZE)
    y = np.array(OUTPUT_OFFSET)
    for _ in range(cycles):
        x, y = model_step_array(weights, x, np.concatenate([y[:2], u.as_array()]))
    return x, y


class NetworkPlant:
    """Plant that is the network itself, started at its fixed point for `u`."""

    def __init__(self, weights: NetworkWeights, u: Actuation):
        self.weights = weights
        self.x, self.y = model_fixed_point(weights, u)

    def step(self, actuation: Actuation) -> ModelOutput:
        self.x, self.y = model_step_array(
            self.weights, self.x, np.concatenate([self.y[:2], actuation.as_array()])
        )
        return ModelOutput.from_array(self.y)


@pytest.fixture
def small_spec():
    return NetworkSpec.from_widths((6,), (5,))


@pytest.fixture
def random_weights(small_spec):
    return make_random_weights(small_spec, seed=42)


@pytest.fixture
def linear_weights():
    return make_linear_weights()


@pytest.fixture
def static_weights():
    return make_static_weights()


@pytest.fixture
def tracking_cost():
    """Only the IMEP and CA50 tracking terms (plus the increment penalty)."""
    return CostWeights(q_imep=10.0, q_ca50=1.0, q_nox=0.0, r_doi_fuel=0.0, r_doi_water=0.0)


@pytest.fixture
def input_bounds_only():
    """Engine actuator limits with every output bound switched off."""
    return Bounds(output_selected=(False, False, False, False))


@pytest.fixture
def quiet_plant():
    return PlantParams().noise_free()
